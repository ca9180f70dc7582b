//! End-to-end classifier: tokenizers → attention blocks → mean pool → MLP head.

pub mod params;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    dims4, Conv2dLayer, ConvFfn, ConvOutput, HsiTokenizer, LidarTokenizer, QkvEmbed, TokenizerConfig,
    LEAKY_SLOPE,
};
use crate::msmhsa::{msmhsa_forward, ScaleSet, GRID};
use crate::tensor::Tensor;
use params::{Bound, Init, ModelParams, ParamSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Multimodal,
    HsiOnly,
    LidarOnly,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::LidarOnly, Modality::HsiOnly, Modality::Multimodal];

    pub fn uses_hsi(self) -> bool {
        matches!(self, Modality::Multimodal | Modality::HsiOnly)
    }

    pub fn uses_lidar(self) -> bool {
        matches!(self, Modality::Multimodal | Modality::LidarOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Multimodal => "multi",
            Modality::HsiOnly => "hsi_only",
            Modality::LidarOnly => "lidar_only",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" | "multimodal" => Ok(Modality::Multimodal),
            "hsi_only" | "hsi" => Ok(Modality::HsiOnly),
            "lidar_only" | "lidar" => Ok(Modality::LidarOnly),
            other => Err(Error::config(
                "modality",
                format!("`{other}` is not one of multi, hsi_only, lidar_only"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FfnPlacement {
    PerBlock,
    FinalOnly,
}

impl fmt::Display for FfnPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FfnPlacement::PerBlock => "per_block",
            FfnPlacement::FinalOnly => "final_only",
        })
    }
}

impl FromStr for FfnPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_block" => Ok(FfnPlacement::PerBlock),
            "final_only" => Ok(FfnPlacement::FinalOnly),
            other => Err(Error::config(
                "ffn_placement",
                format!("`{other}` is not one of per_block, final_only"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub tokenizer: TokenizerConfig,
    pub scales: ScaleSet,
    pub depth: usize,
    pub ffn_hidden_ratio: usize,
    pub num_classes: usize,
    pub modality: Modality,
    /// Normalize attention over all keys instead of per key patch.
    pub global_softmax: bool,
    pub residuals: bool,
    pub ffn_placement: FfnPlacement,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::trento()
    }
}

impl ModelConfig {
    /// 63 HSI bands, 1 LiDAR band, 6 classes.
    pub fn trento() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            scales: ScaleSet::default(),
            depth: 2,
            ffn_hidden_ratio: 2,
            num_classes: 6,
            modality: Modality::Multimodal,
            global_softmax: false,
            residuals: true,
            ffn_placement: FfnPlacement::PerBlock,
            seed: 0,
        }
    }

    /// 64 HSI bands, 2 LiDAR bands, 11 classes.
    pub fn muufl() -> Self {
        let mut cfg = Self::trento();
        cfg.tokenizer.hsi_bands = 64;
        cfg.tokenizer.lidar_bands = 2;
        cfg.num_classes = 11;
        cfg
    }

    /// Trento defaults resized to a scene's band and class counts.
    pub fn for_scene(hsi_bands: usize, lidar_bands: usize, num_classes: usize) -> Self {
        let mut cfg = Self::trento();
        cfg.tokenizer.hsi_bands = hsi_bands;
        cfg.tokenizer.lidar_bands = lidar_bands;
        cfg.num_classes = num_classes;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer
            .validate(self.modality.uses_hsi(), self.modality.uses_lidar())?;
        if self.depth == 0 {
            return Err(Error::config("depth", "must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        if self.ffn_hidden_ratio == 0 {
            return Err(Error::config("ffn_hidden_ratio", "must be positive"));
        }
        let heads = self.scales.head_count();
        if self.tokenizer.embed_dim % heads != 0 {
            return Err(Error::config(
                "embed_dim",
                format!("{} is not divisible by {heads} heads", self.tokenizer.embed_dim),
            ));
        }
        Ok(())
    }

    /// Channels entering the first block.
    pub fn fused_channels(&self) -> usize {
        let t = self.tokenizer.token_channels;
        match self.modality {
            Modality::Multimodal => 2 * t,
            Modality::HsiOnly | Modality::LidarOnly => t,
        }
    }

    /// Canonical description of everything that shapes the network (not the seed).
    pub fn architecture_string(&self) -> String {
        let t = &self.tokenizer;
        format!(
            "hsi_bands={};lidar_bands={};conv3d_filters={};conv3d_kernel={:?};hetconv_part={};\
             token_channels={};embed_dim={};scales={};depth={};ffn_hidden_ratio={};num_classes={};\
             modality={};global_softmax={};residuals={};ffn_placement={}",
            t.hsi_bands,
            t.lidar_bands,
            t.conv3d_filters,
            t.conv3d_kernel,
            t.hetconv_part,
            t.token_channels,
            t.embed_dim,
            self.scales,
            self.depth,
            self.ffn_hidden_ratio,
            self.num_classes,
            self.modality,
            self.global_softmax,
            self.residuals,
            self.ffn_placement,
        )
    }

    pub fn config_hash(&self) -> u64 {
        params::fnv1a(self.architecture_string().as_bytes())
    }

    fn block_has_ffn(&self, block: usize) -> bool {
        match self.ffn_placement {
            FfnPlacement::PerBlock => true,
            FfnPlacement::FinalOnly => block + 1 == self.depth,
        }
    }

    fn block_in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.fused_channels()
        } else {
            self.tokenizer.embed_dim
        }
    }

    /// Parameter layout in initialization and file order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let t = &self.tokenizer;
        let c = t.embed_dim;
        let mut specs = Vec::new();
        if self.modality.uses_hsi() {
            specs.extend(HsiTokenizer::specs("hsi", t));
        }
        if self.modality.uses_lidar() {
            specs.extend(LidarTokenizer::specs("lidar", t));
        }
        for i in 0..self.depth {
            let p = format!("blocks.{i}");
            let c_in = self.block_in_channels(i);
            specs.extend(QkvEmbed::specs(&format!("{p}.qkv"), c_in, c));
            if self.residuals && c_in != c {
                specs.push(ParamSpec::new(
                    format!("{p}.shortcut.weight"),
                    &[c, c_in, 1, 1],
                    Init::KaimingUniform { fan_in: c_in },
                ));
                specs.push(ParamSpec::new(format!("{p}.shortcut.bias"), &[c], Init::Zeros));
            }
            specs.extend(ConvOutput::specs(&format!("{p}.out"), c));
            if self.block_has_ffn(i) {
                specs.extend(ConvFfn::specs(&format!("{p}.ffn"), c, self.ffn_hidden_ratio));
            }
        }
        let k = self.num_classes;
        specs.push(ParamSpec::new("head.fc1.weight", &[c, c], Init::KaimingUniform { fan_in: c }));
        specs.push(ParamSpec::new("head.fc1.bias", &[c], Init::Zeros));
        specs.push(ParamSpec::new("head.fc2.weight", &[c, k], Init::KaimingUniform { fan_in: c }));
        specs.push(ParamSpec::new("head.fc2.bias", &[k], Init::Zeros));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }
}

/// Fresh parameters seeded from `cfg.seed`.
pub fn init(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    ModelParams::init(cfg.config_hash(), &cfg.param_specs(), cfg.seed)
}

/// Checks a loaded parameter set against `cfg`: layout first, then the
/// architecture hash.
pub fn check_params(params: &ModelParams, cfg: &ModelConfig) -> Result<()> {
    params.check_layout(&cfg.param_specs())?;
    if params.config_hash() != cfg.config_hash() {
        return Err(Error::ParamMismatch(format!(
            "parameters were trained under config hash {:016x}, current config hashes to {:016x}",
            params.config_hash(),
            cfg.config_hash()
        )));
    }
    Ok(())
}

pub fn load_params(path: impl AsRef<std::path::Path>, cfg: &ModelConfig) -> Result<ModelParams> {
    let params = ModelParams::load(path)?;
    check_params(&params, cfg)?;
    Ok(params)
}

struct Block {
    qkv: QkvEmbed,
    shortcut: Option<Conv2dLayer>,
    out: ConvOutput,
    ffn: Option<ConvFfn>,
}

/// Layers bound to one set of tape leaves.
pub struct Network {
    cfg: ModelConfig,
    hsi: Option<HsiTokenizer>,
    lidar: Option<LidarTokenizer>,
    blocks: Vec<Block>,
    head_fc1: (Tensor, Tensor),
    head_fc2: (Tensor, Tensor),
}

impl Network {
    pub fn bind(params: &Bound, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let t = &cfg.tokenizer;
        let hsi = cfg
            .modality
            .uses_hsi()
            .then(|| HsiTokenizer::bind(params, "hsi", t))
            .transpose()?;
        let lidar = cfg
            .modality
            .uses_lidar()
            .then(|| LidarTokenizer::bind(params, "lidar", t))
            .transpose()?;
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("blocks.{i}");
                let needs_shortcut = cfg.residuals && cfg.block_in_channels(i) != t.embed_dim;
                Ok(Block {
                    qkv: QkvEmbed::bind(params, &format!("{p}.qkv"))?,
                    shortcut: needs_shortcut
                        .then(|| Conv2dLayer::bind(params, &format!("{p}.shortcut")))
                        .transpose()?,
                    out: ConvOutput::bind(params, &format!("{p}.out"))?,
                    ffn: cfg
                        .block_has_ffn(i)
                        .then(|| ConvFfn::bind(params, &format!("{p}.ffn")))
                        .transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            hsi,
            lidar,
            blocks,
            head_fc1: (params.get("head.fc1.weight")?, params.get("head.fc1.bias")?),
            head_fc2: (params.get("head.fc2.weight")?, params.get("head.fc2.bias")?),
        })
    }

    /// Logits `[B, num_classes]` from `[B, S, 16, 16]` HSI and `[B, L, 16, 16]`
    /// LiDAR patches; pass exactly the modalities the config uses.
    pub fn forward(&self, hsi: Option<&Tensor>, lidar: Option<&Tensor>) -> Result<Tensor> {
        let mode = self.cfg.modality;
        let check_presence = |name: &str, used: bool, given: bool| -> Result<()> {
            match (used, given) {
                (true, false) => Err(Error::Contract(format!("{mode} mode needs {name} input"))),
                (false, true) => Err(Error::Contract(format!("{mode} mode takes no {name} input"))),
                _ => Ok(()),
            }
        };
        check_presence("HSI", mode.uses_hsi(), hsi.is_some())?;
        check_presence("LiDAR", mode.uses_lidar(), lidar.is_some())?;

        let mut batch = None;
        for x in hsi.iter().chain(lidar.iter()) {
            let [b, _, h, w] = dims4("forward", x)?;
            if h != GRID || w != GRID {
                return Err(Error::shape(
                    "forward",
                    format!("patches must be {GRID}x{GRID}, got {h}x{w}"),
                ));
            }
            if let Some(prev) = batch.replace(b) {
                if prev != b {
                    return Err(Error::Dimension {
                        op: "forward",
                        axis: 0,
                        expected: prev,
                        found: b,
                    });
                }
            }
        }

        let mut tokens = Vec::with_capacity(2);
        if let (Some(layer), Some(x)) = (&self.hsi, hsi) {
            tokens.push(layer.forward(x)?);
        }
        if let (Some(layer), Some(x)) = (&self.lidar, lidar) {
            tokens.push(layer.forward(x)?);
        }
        let mut x = if tokens.len() == 1 {
            tokens.pop().expect("one modality")
        } else {
            Tensor::concat(&tokens, 1)?
        };

        for block in &self.blocks {
            let (q, k, v) = block.qkv.forward(&x)?;
            let h = msmhsa_forward(&q, &k, &v, &self.cfg.scales, self.cfg.global_softmax)?;
            let attended = block.out.forward(&h)?;
            x = if self.cfg.residuals {
                let skip = match &block.shortcut {
                    Some(s) => s.forward(&x)?,
                    None => x,
                };
                skip.add(&attended)?
            } else {
                attended
            };
            if let Some(ffn) = &block.ffn {
                let y = ffn.forward(&x)?;
                x = if self.cfg.residuals { x.add(&y)? } else { y };
            }
        }

        let [b, c, h, w] = dims4("forward", &x)?;
        let pooled = x.reshape(&[b, c, h * w])?.mean_axis(2)?;
        let hidden = pooled
            .matmul(&self.head_fc1.0)?
            .add_bias(&self.head_fc1.1, 1)?
            .leaky_relu(LEAKY_SLOPE);
        hidden.matmul(&self.head_fc2.0)?.add_bias(&self.head_fc2.1, 1)
    }
}

/// Inference-only forward pass (no tape).
pub fn forward(params: &ModelParams, hsi: Option<&Tensor>, lidar: Option<&Tensor>, cfg: &ModelConfig) -> Result<Tensor> {
    Network::bind(&params.bind(false), cfg)?.forward(hsi, lidar)
}

/// Row-wise argmax of `[B, K]` logits; ties go to the lowest class index.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let k = match logits.shape() {
        [_, k] if *k > 0 => *k,
        s => return Err(Error::shape("predict", format!("logits must be [B, K], got {s:?}"))),
    };
    Ok(logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect())
}

pub fn predict(params: &ModelParams, hsi: Option<&Tensor>, lidar: Option<&Tensor>, cfg: &ModelConfig) -> Result<Vec<usize>> {
    argmax_rows(&forward(params, hsi, lidar, cfg)?)
}
