//! Adam with weight decay, a step learning-rate schedule, the epoch loop and
//! the repeated-run experiment driver.

use std::fmt;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::metrics::{EvalReport, RunMetrics};
use crate::model::params::ModelParams;
use crate::model::{self, argmax_rows, ModelConfig, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayMode {
    /// `θ ← θ - lr·wd·θ` beside the Adam update.
    Decoupled,
    /// `wd·θ` is added to the gradient before the moments see it.
    Coupled,
}

impl DecayMode {
    pub fn name(self) -> &'static str {
        match self {
            DecayMode::Decoupled => "decoupled",
            DecayMode::Coupled => "coupled",
        }
    }
}

impl std::str::FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(DecayMode::Decoupled),
            "coupled" => Ok(DecayMode::Coupled),
            other => Err(Error::config("decay_mode", format!("`{other}` is not one of decoupled, coupled"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_train: usize,
    pub batch_eval: usize,
    pub repeats: usize,
    pub seed: u64,
    pub decay_mode: DecayMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 5e-3,
            step_size: 50,
            gamma: 0.9,
            epochs: 500,
            batch_train: 64,
            batch_eval: 500,
            repeats: 3,
            seed: 0,
            decay_mode: DecayMode::Decoupled,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: the default protocol cut to 50 epochs.
    pub fn fast() -> Self {
        Self {
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        for (field, v) in [
            ("step_size", self.step_size),
            ("epochs", self.epochs),
            ("batch_train", self.batch_train),
            ("batch_eval", self.batch_eval),
            ("repeats", self.repeats),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// `lr · gamma^floor(epoch / step_size)`
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.gamma.powi((epoch / cfg.step_size) as i32)
}

/// Moment buffers shaped like the parameters they follow.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update. `grads` follow the parameter order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr_t: f64,
    weight_decay: f64,
    mode: DecayMode,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ParamMismatch(format!(
            "{} gradients and {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        if g.len() != p.data.len() {
            return Err(Error::ParamMismatch(format!(
                "gradient of `{}` has {} entries, parameter has {}",
                p.name,
                g.len(),
                p.data.len()
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}` at index {i} is {}", p.name, g[i])));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((theta, &grad), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let grad = match mode {
                DecayMode::Coupled => grad + weight_decay * *theta,
                DecayMode::Decoupled => grad,
            };
            *m = b1 * *m + (1.0 - b1) * grad;
            *v = b2 * *v + (1.0 - b2) * grad * grad;
            let update = (*m / c1) / ((*v / c2).sqrt() + eps);
            if mode == DecayMode::Decoupled {
                *theta -= lr_t * weight_decay * *theta;
            }
            *theta -= lr_t * update;
        }
    }
    Ok(())
}

/// One line of the training trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Accuracy of the in-epoch predictions (before each batch's update).
    pub train_acc: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:e} loss={:.6} train_acc={:.4}",
            self.epoch, self.lr, self.loss, self.train_acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn train(model_cfg: &ModelConfig, data: &PatchSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model_cfg, data, cfg, |_| ControlFlow::Continue(()))
}

/// Training loop with a per-epoch hook; returning `Break` ends training after that epoch.
pub fn train_with(
    model_cfg: &ModelConfig,
    data: &PatchSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if data.hsi_bands != model_cfg.tokenizer.hsi_bands && model_cfg.modality.uses_hsi()
        || data.lidar_bands != model_cfg.tokenizer.lidar_bands && model_cfg.modality.uses_lidar()
    {
        return Err(Error::ParamMismatch(format!(
            "data has {}+{} bands, model expects {}+{}",
            data.hsi_bands, data.lidar_bands, model_cfg.tokenizer.hsi_bands, model_cfg.tokenizer.lidar_bands
        )));
    }
    if let Some(&l) = data.labels().iter().find(|&&l| l >= model_cfg.num_classes) {
        return Err(Error::Label(format!("class {l} outside {} model classes", model_cfg.num_classes)));
    }

    let mut params = model::init(model_cfg)?;
    let mut state = AdamState::new(&params);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let n = data.len();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_train).enumerate() {
            let (hsi, lidar, labels) = data.batch(idx, model_cfg.modality);
            let bound = params.bind(true);
            let net = Network::bind(&bound, model_cfg)?;
            let logits = net.forward(hsi.as_ref(), lidar.as_ref())?;
            let loss = logits.cross_entropy(&labels)?;
            let lv = loss.item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("loss is {lv} at epoch {epoch}, batch {b}")));
            }
            loss.backward()?;
            let grads: Vec<Vec<f64>> = bound
                .tensors()
                .iter()
                .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
                .collect();
            correct += argmax_rows(&logits)?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            loss_sum += lv * idx.len() as f64;
            adam_step(&mut params, &grads, &mut state, lr, cfg.weight_decay, cfg.decay_mode)?;
        }
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
        };
        log::debug!("{record}");
        trace.push(record);
        if on_epoch(&record).is_break() {
            break;
        }
    }
    Ok(TrainOutcome { params, trace })
}

/// Outcome of [`run_experiment`]: the aggregated report plus every run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub report: EvalReport,
    pub runs: Vec<TrainOutcome>,
}

/// Trains `cfg.repeats` times with seeds `seed, seed + 1, …` (model init and
/// shuffling alike) and evaluates each run on `test`.
pub fn run_experiment(
    model_cfg: &ModelConfig,
    train_set: &PatchSet,
    test_set: &PatchSet,
    cfg: &TrainConfig,
) -> Result<Experiment> {
    cfg.validate()?;
    let mut metrics = Vec::with_capacity(cfg.repeats);
    let mut runs = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats as u64 {
        let mc = ModelConfig {
            seed: model_cfg.seed.wrapping_add(r),
            ..model_cfg.clone()
        };
        let tc = TrainConfig {
            seed: cfg.seed.wrapping_add(r),
            ..cfg.clone()
        };
        let outcome = train(&mc, train_set, &tc)?;
        let cm = evaluate(&outcome.params, &mc, test_set, cfg.batch_eval)?;
        let m = RunMetrics::from_confusion(&cm)?;
        log::info!("repeat {r}: oa={:.4} aa={:.4} kappa={:.4}", m.oa, m.aa, m.kappa);
        metrics.push(m);
        runs.push(outcome);
    }
    let names = (0..model_cfg.num_classes).map(|k| format!("class {}", k + 1)).collect();
    Ok(Experiment {
        report: EvalReport::from_runs(metrics, names)?,
        runs,
    })
}
