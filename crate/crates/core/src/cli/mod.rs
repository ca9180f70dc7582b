//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mmformer::data::Preset;
use mmformer::model::Modality;
use mmformer::msmhsa::ScaleSet;

#[derive(Parser, Debug)]
#[command(name = "mmformer", version, about = "Multimodal HSI + LiDAR transformer classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene in the RSRF container format.
    Synth(SynthArgs),
    /// Train on a scene and write parameters, trace, report and manifest.
    Train(RunArgs),
    /// Evaluate saved parameters on the held-out split.
    Eval(EvalArgs),
    /// Render a classification map as a binary PPM.
    Map(MapArgs),
    /// Sweep scale subsets or modality arms and print the grid.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class count (defaults to the preset's).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(short, long)]
    data: PathBuf,
    /// key = value configuration file; flags take precedence.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma list drawn from 16,8,4,2.
    #[arg(long, value_parser = parse_scales)]
    scales: Option<ScaleSet>,
    #[arg(long, value_parser = parse_modality)]
    modality: Option<Modality>,
    /// Desk-scale profile (50 epochs, small stratified split).
    #[arg(long)]
    fast: bool,
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    global_softmax: bool,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Parameter file; its directory's config.txt is used when --config is absent.
    #[arg(short, long)]
    params: PathBuf,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(short, long)]
    params: PathBuf,
    /// Output image (P6).
    #[arg(long)]
    image: PathBuf,
    /// Also write the ground-truth map here.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sweep {
    Scales,
    Modality,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    sweep: Sweep,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: mmformer::Error| e.to_string())
}

fn parse_scales(s: &str) -> Result<ScaleSet, String> {
    s.parse().map_err(|e: mmformer::Error| e.to_string())
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: mmformer::Error| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Map(a) => commands::map(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
