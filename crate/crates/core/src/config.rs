//! Line-based `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. `seed` drives model init,
//! shuffling and the split together.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{SplitSpec, TrainAmount};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Per-class training pixels of the desk-scale profile.
pub const FAST_TRAIN_PER_CLASS: usize = 20;
/// Per-class test cap of the desk-scale profile.
pub const FAST_TEST_CAP: usize = 200;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    /// Keys set explicitly through [`RunConfig::set`].
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::trento(),
            train: TrainConfig::default(),
            split: SplitSpec {
                train: TrainAmount::PerClass(100),
                test_cap: None,
                seed: 0,
            },
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("`{value}` is not a boolean"))),
    }
}

impl RunConfig {
    /// Desk-scale profile: 50 epochs, 20 training pixels and at most 200 test pixels per class.
    pub fn apply_fast(&mut self) {
        self.train.epochs = TrainConfig::fast().epochs;
        self.split.train = TrainAmount::PerClass(FAST_TRAIN_PER_CLASS);
        self.split.test_cap = Some(FAST_TEST_CAP);
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.split.seed = seed;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => {
                let s = parse(key, v)?;
                self.set_seed(s);
            }
            "hsi_bands" => m.tokenizer.hsi_bands = parse(key, v)?,
            "lidar_bands" => m.tokenizer.lidar_bands = parse(key, v)?,
            "num_classes" => m.num_classes = parse(key, v)?,
            "conv3d_filters" => m.tokenizer.conv3d_filters = parse(key, v)?,
            "conv3d_kernel" => {
                let dims: Vec<usize> = v.split(',').map(|d| parse(key, d.trim())).collect::<Result<_>>()?;
                m.tokenizer.conv3d_kernel = dims
                    .try_into()
                    .map_err(|_| Error::config(key, "needs three comma-separated extents"))?;
            }
            "hetconv_part" => m.tokenizer.hetconv_part = parse(key, v)?,
            "embed_dim" => m.tokenizer.embed_dim = parse(key, v)?,
            "scales" => m.scales = parse(key, v)?,
            "depth" => m.depth = parse(key, v)?,
            "ffn_hidden_ratio" => m.ffn_hidden_ratio = parse(key, v)?,
            "modality" => m.modality = parse(key, v)?,
            "global_softmax" => m.global_softmax = parse_bool(key, v)?,
            "residuals" => m.residuals = parse_bool(key, v)?,
            "ffn_placement" => m.ffn_placement = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "step_size" => t.step_size = parse(key, v)?,
            "gamma" => t.gamma = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_train" => t.batch_train = parse(key, v)?,
            "batch_eval" => t.batch_eval = parse(key, v)?,
            "repeats" => t.repeats = parse(key, v)?,
            "decay_mode" => t.decay_mode = parse(key, v)?,
            "train_per_class" => self.split.train = TrainAmount::PerClass(parse(key, v)?),
            "train_fraction" => self.split.train = TrainAmount::Fraction(parse(key, v)?),
            "test_cap" => {
                self.split.test_cap = match v {
                    "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies every `key = value` line of `text` in order.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected key = value, got `{line}`")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()
    }

    /// Full snapshot that [`RunConfig::from_text`] reads back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let tk = &m.tokenizer;
        let t = &self.train;
        let k = tk.conv3d_kernel;
        let mut s = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(s, "{key} = {value}");
        };
        put("seed", m.seed.to_string());
        put("hsi_bands", tk.hsi_bands.to_string());
        put("lidar_bands", tk.lidar_bands.to_string());
        put("num_classes", m.num_classes.to_string());
        put("conv3d_filters", tk.conv3d_filters.to_string());
        put("conv3d_kernel", format!("{},{},{}", k[0], k[1], k[2]));
        put("hetconv_part", tk.hetconv_part.to_string());
        put("embed_dim", tk.embed_dim.to_string());
        put("scales", m.scales.to_string());
        put("depth", m.depth.to_string());
        put("ffn_hidden_ratio", m.ffn_hidden_ratio.to_string());
        put("modality", m.modality.to_string());
        put("global_softmax", m.global_softmax.to_string());
        put("residuals", m.residuals.to_string());
        put("ffn_placement", m.ffn_placement.to_string());
        put("lr", t.lr.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("step_size", t.step_size.to_string());
        put("gamma", t.gamma.to_string());
        put("epochs", t.epochs.to_string());
        put("batch_train", t.batch_train.to_string());
        put("batch_eval", t.batch_eval.to_string());
        put("repeats", t.repeats.to_string());
        put("decay_mode", t.decay_mode.name().to_string());
        match self.split.train {
            TrainAmount::PerClass(n) => put("train_per_class", n.to_string()),
            TrainAmount::Fraction(f) => put("train_fraction", f.to_string()),
        }
        put(
            "test_cap",
            self.split.test_cap.map_or_else(|| "none".to_string(), |c| c.to_string()),
        );
        s
    }

    /// Fills the scene-derived fields, rejecting explicit values that disagree.
    pub fn fit_scene(&mut self, hsi_bands: usize, lidar_bands: usize, num_classes: usize) -> Result<()> {
        for (key, have, slot) in [
            ("hsi_bands", hsi_bands, &mut self.model.tokenizer.hsi_bands),
            ("lidar_bands", lidar_bands, &mut self.model.tokenizer.lidar_bands),
            ("num_classes", num_classes, &mut self.model.num_classes),
        ] {
            if self.explicit.contains(key) && *slot != have {
                return Err(Error::ParamMismatch(format!(
                    "config sets {key} = {} but the scene has {have}",
                    *slot
                )));
            }
            *slot = have;
        }
        Ok(())
    }
}

impl PartialEq for RunConfig {
    /// Compares the resolved settings only, not which keys were explicit.
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.train == other.train && self.split == other.split
    }
}
