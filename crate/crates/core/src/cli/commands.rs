use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmformer::config::RunConfig;
use mmformer::data::{decode_raster, encode_raster, split, synth_scene, PatchSet, RasterPair};
use mmformer::eval::{evaluate, render_ground_truth, render_map, PALETTE};
use mmformer::metrics::{EvalReport, RunMetrics, Stat};
use mmformer::model::{self, Modality};
use mmformer::msmhsa::ScaleSet;
use mmformer::training::{run_experiment, Experiment};
use mmformer::{fnv1a64, Error, Result};

use super::{AblateArgs, EvalArgs, MapArgs, RunArgs, Sweep, SynthArgs};

const DEFAULT_OUT_DIR: &str = "mmformer-out";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let classes = a.classes.unwrap_or(a.preset.dims().4);
    let rp = synth_scene(a.preset, classes, a.seed)?;
    write(&a.out, encode_raster(&rp))?;
    println!(
        "wrote {} ({} preset, {}x{}, {}+{} bands, {} classes)",
        a.out.display(),
        a.preset.name(),
        rp.height(),
        rp.width(),
        rp.hsi.bands,
        rp.lidar.bands,
        rp.num_classes
    );
    Ok(())
}

/// A loaded scene with its resolved configuration.
struct Setup {
    cfg: RunConfig,
    rp: RasterPair,
    checksum: u64,
}

fn setup(run: &RunArgs, fallback_config: Option<PathBuf>) -> Result<Setup> {
    let bytes = fs::read(&run.data).map_err(|e| Error::Io {
        path: run.data.clone(),
        source: e,
    })?;
    let mut rp = decode_raster(&bytes, &run.data)?;
    rp.normalize();

    let mut cfg = RunConfig::default();
    if let Some(path) = run.config.clone().or(fallback_config) {
        cfg.apply_file(&path)?;
    }
    if run.fast {
        cfg.apply_fast();
    }
    if let Some(seed) = run.seed {
        cfg.set_seed(seed);
    }
    if let Some(scales) = &run.scales {
        cfg.model.scales = scales.clone();
    }
    if let Some(m) = run.modality {
        cfg.model.modality = m;
    }
    if run.global_softmax {
        cfg.model.global_softmax = true;
    }
    if let Some(r) = run.repeats {
        cfg.train.repeats = r;
    }
    cfg.fit_scene(rp.hsi.bands, rp.lidar.bands, rp.num_classes)?;
    cfg.validate()?;
    Ok(Setup {
        cfg,
        rp,
        checksum: fnv1a64(&bytes),
    })
}

fn patch_sets(s: &Setup) -> Result<(PatchSet, PatchSet)> {
    let sp = split(&s.rp, &s.cfg.split)?;
    log::info!("split: {} train / {} test pixels", sp.train.len(), sp.test.len());
    Ok((PatchSet::from_coords(&s.rp, &sp.train)?, PatchSet::from_coords(&s.rp, &sp.test)?))
}

fn class_names(k: usize) -> Vec<String> {
    (1..=k).map(|c| format!("class {c}")).collect()
}

fn out_dir(run: &RunArgs) -> PathBuf {
    run.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn train(run: &RunArgs) -> Result<()> {
    let start = Instant::now();
    let s = setup(run, None)?;
    let dir = out_dir(run);
    create_dir(&dir)?;
    let (train_set, test_set) = patch_sets(&s)?;
    let prep = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let Experiment { report, runs } = run_experiment(&s.cfg.model, &train_set, &test_set, &s.cfg.train)?;
    let train_secs = t.elapsed().as_secs_f64();

    let mut outputs = Vec::new();
    let mut trace = String::new();
    for (r, outcome) in runs.iter().enumerate() {
        let name = if r == 0 { "params.mmf".to_string() } else { format!("params.r{r}.mmf") };
        let path = dir.join(&name);
        outcome.params.save(&path)?;
        outputs.push(path);
        for rec in &outcome.trace {
            let _ = writeln!(trace, "repeat={r} {rec}");
        }
    }
    let files = [
        ("config.txt", s.cfg.to_text()),
        ("trace.txt", trace),
        ("report.txt", report.to_table()),
        ("report.kv", report.to_kv()),
    ];
    for (name, text) in &files {
        let path = dir.join(name);
        write(&path, text)?;
        outputs.push(path);
    }

    let mut m = String::new();
    let _ = writeln!(m, "command=train");
    let _ = writeln!(m, "data={}", run.data.display());
    let _ = writeln!(m, "data_checksum=fnv1a64:{:016x}", s.checksum);
    let seeds: Vec<String> = (0..s.cfg.train.repeats as u64)
        .map(|r| s.cfg.train.seed.wrapping_add(r).to_string())
        .collect();
    let _ = writeln!(m, "seeds={}", seeds.join(","));
    let _ = writeln!(m, "train_pixels={}", train_set.len());
    let _ = writeln!(m, "test_pixels={}", test_set.len());
    let _ = writeln!(m, "param_count={}", s.cfg.model.param_count());
    for line in s.cfg.to_text().lines() {
        let _ = writeln!(m, "config.{}", line.replace(" = ", "="));
    }
    for p in &outputs {
        let _ = writeln!(m, "output={}", p.display());
    }
    let _ = writeln!(m, "time_prepare_secs={prep:.3}");
    let _ = writeln!(m, "time_train_eval_secs={train_secs:.3}");
    let _ = writeln!(m, "time_total_secs={:.3}", start.elapsed().as_secs_f64());
    write(&dir.join("manifest.txt"), m)?;

    print!("{}", report.to_table());
    println!("artifacts in {}", dir.display());
    Ok(())
}

/// Config next to a parameter file, if one exists.
fn sibling_config(params: &Path) -> Option<PathBuf> {
    let p = params.parent().unwrap_or(Path::new(".")).join("config.txt");
    p.exists().then_some(p)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let s = setup(&a.run, sibling_config(&a.params))?;
    let params = model::load_params(&a.params, &s.cfg.model)?;
    let (_, test_set) = patch_sets(&s)?;
    let cm = evaluate(&params, &s.cfg.model, &test_set, s.cfg.train.batch_eval)?;
    let report = EvalReport::from_runs(vec![RunMetrics::from_confusion(&cm)?], class_names(s.cfg.model.num_classes))?;
    print!("{}", report.to_table());
    print!("{}", report.to_kv());
    if let Some(dir) = &a.run.out_dir {
        create_dir(dir)?;
        write(&dir.join("eval_report.txt"), report.to_table())?;
        write(&dir.join("eval_report.kv"), report.to_kv())?;
    }
    Ok(())
}

pub fn map(a: &MapArgs) -> Result<()> {
    let s = setup(&a.run, sibling_config(&a.params))?;
    let params = model::load_params(&a.params, &s.cfg.model)?;
    let img = render_map(&s.rp, &params, &s.cfg.model, &PALETTE, s.cfg.train.batch_eval)?;
    img.write_p6(&a.image)?;
    println!("wrote {} ({}x{})", a.image.display(), img.width, img.height);
    if let Some(gt) = &a.ground_truth {
        render_ground_truth(&s.rp, &PALETTE)?.write_p6(gt)?;
        println!("wrote {}", gt.display());
    }
    Ok(())
}

fn cell(stat: Option<&Stat>) -> String {
    stat.map_or_else(|| "n/a".to_string(), Stat::percent)
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let s = setup(&a.run, None)?;
    let (train_set, test_set) = patch_sets(&s)?;
    let mut out = String::new();
    match a.sweep {
        Sweep::Scales => {
            let _ = writeln!(out, "{:<12}  {:>15}  {:>15}  {:>15}", "Scales", "OA (%)", "AA (%)", "Kappa (%)");
            for scales in ScaleSet::all_subsets() {
                let mut mc = s.cfg.model.clone();
                mc.scales = scales.clone();
                mc.validate()?;
                let r = run_experiment(&mc, &train_set, &test_set, &s.cfg.train)?.report;
                let row = format!(
                    "{:<12}  {:>15}  {:>15}  {:>15}",
                    scales.to_string(),
                    r.oa.percent(),
                    r.aa.percent(),
                    r.kappa.percent()
                );
                log::info!("{row}");
                let _ = writeln!(out, "{row}");
            }
        }
        Sweep::Modality => {
            let reports: Vec<EvalReport> = Modality::ALL
                .iter()
                .map(|&m| {
                    let mut mc = s.cfg.model.clone();
                    mc.modality = m;
                    mc.validate()?;
                    let r = run_experiment(&mc, &train_set, &test_set, &s.cfg.train)?.report;
                    log::info!("{m}: oa={}", r.oa.percent());
                    Ok(r)
                })
                .collect::<Result<_>>()?;
            let _ = write!(out, "{:<10}", "Class");
            for m in Modality::ALL {
                let _ = write!(out, "  {:>15}", m.name());
            }
            let _ = writeln!(out);
            let k = s.cfg.model.num_classes;
            let mut rows: Vec<(String, Vec<String>)> = (0..k)
                .map(|c| (format!("class {}", c + 1), reports.iter().map(|r| cell(r.per_class[c].as_ref())).collect()))
                .collect();
            rows.push(("OA".into(), reports.iter().map(|r| r.oa.percent()).collect()));
            rows.push(("AA".into(), reports.iter().map(|r| r.aa.percent()).collect()));
            rows.push(("Kappa".into(), reports.iter().map(|r| r.kappa.percent()).collect()));
            for (name, cells) in rows {
                let _ = write!(out, "{name:<10}");
                for c in cells {
                    let _ = write!(out, "  {c:>15}");
                }
                let _ = writeln!(out);
            }
        }
    }
    print!("{out}");
    if let Some(dir) = &a.run.out_dir {
        create_dir(dir)?;
        let name = match a.sweep {
            Sweep::Scales => "ablate_scales.txt",
            Sweep::Modality => "ablate_modality.txt",
        };
        write(&dir.join(name), &out)?;
    }
    Ok(())
}
