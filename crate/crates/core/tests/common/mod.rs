//! Shared helpers: seeded random tensors and a central-difference gradient checker.
#![allow(dead_code)]

use mmformer::model::params::{Bound, ModelParams, ParamSpec};
use mmformer::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform(&mut rng(seed), n, -1.0, 1.0)).unwrap()
}

/// Per-tensor relative gradient error over the checked entries.
#[derive(Debug, Clone)]
pub struct GradError {
    pub name: String,
    pub rel: f64,
    pub checked: usize,
}

pub struct GradCheck {
    pub step: f64,
    /// Entries probed per tensor; `None` probes all of them.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: None,
            seed: 0,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`; the floor keeps gradients that vanish
/// analytically (both sides pure rounding noise) from reading as 100% error.
fn rel_err(a: &[f64], n: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(floor).max(f64::MIN_POSITIVE)
}

impl GradCheck {
    /// Compares tape gradients of `Σ f(params, inputs) ⊙ w` (fixed random `w`) against
    /// central differences, for every parameter tensor and every input.
    pub fn run(
        &self,
        params: &ModelParams,
        inputs: &[Tensor],
        f: impl Fn(&Bound, &[Tensor]) -> Result<Tensor>,
    ) -> Vec<GradError> {
        let leaves: Vec<Tensor> = inputs
            .iter()
            .map(|t| Tensor::leaf(t.shape(), t.to_vec(), true).unwrap())
            .collect();
        let bound = params.bind(true);
        let out = f(&bound, &leaves).unwrap();
        let weights = uniform(&mut rng(self.seed ^ 0xA5A5), out.numel(), -1.0, 1.0);
        let wt = Tensor::new(out.shape(), weights.clone()).unwrap();
        out.mul(&wt).unwrap().sum().backward().unwrap();

        let loss = |p: &ModelParams, xs: &[Tensor]| -> f64 {
            let y = f(&p.bind(false), xs).unwrap();
            y.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };

        let mut pick = rng(self.seed ^ 0x5A5A);
        let mut choose = |n: usize| -> Vec<usize> {
            match self.samples {
                Some(s) if s < n => (0..s).map(|_| pick.gen_range(0..n)).collect(),
                _ => (0..n).collect(),
            }
        };
        let h = self.step;
        let mut pairs: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();

        for (i, leaf) in bound.tensors().iter().enumerate() {
            let name = params.tensors()[i].name.clone();
            let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
            let idx = choose(leaf.numel());
            let mut a = Vec::with_capacity(idx.len());
            let mut n = Vec::with_capacity(idx.len());
            for &j in &idx {
                let mut p = params.clone();
                p.tensors_mut()[i].data[j] += h;
                let up = loss(&p, inputs);
                p.tensors_mut()[i].data[j] -= 2.0 * h;
                let down = loss(&p, inputs);
                a.push(analytic[j]);
                n.push((up - down) / (2.0 * h));
            }
            pairs.push((name, a, n));
        }

        for (i, leaf) in leaves.iter().enumerate() {
            let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
            let idx = choose(leaf.numel());
            let mut a = Vec::with_capacity(idx.len());
            let mut n = Vec::with_capacity(idx.len());
            for &j in &idx {
                let probe = |delta: f64| {
                    let mut xs: Vec<Tensor> = inputs.to_vec();
                    let mut d = xs[i].to_vec();
                    d[j] += delta;
                    xs[i] = Tensor::new(inputs[i].shape(), d).unwrap();
                    loss(params, &xs)
                };
                a.push(analytic[j]);
                n.push((probe(h) - probe(-h)) / (2.0 * h));
            }
            pairs.push((format!("input{i}"), a, n));
        }
        let floor = 1e-6 * pairs.iter().map(|(_, a, n)| norm(a).max(norm(n))).fold(0.0, f64::max);
        pairs
            .into_iter()
            .map(|(name, a, n)| GradError {
                rel: rel_err(&a, &n, floor),
                checked: a.len(),
                name,
            })
            .collect()
    }

    /// Gradient check of a parameter-free function of `inputs`.
    pub fn inputs(&self, inputs: &[Tensor], f: impl Fn(&[Tensor]) -> Result<Tensor>) -> Vec<GradError> {
        let empty = ModelParams::from_tensors(0, Vec::new()).unwrap();
        self.run(&empty, inputs, |_, xs| f(xs))
    }

    /// Gradient check of a layer built from `specs`, including its inputs.
    pub fn layer(
        &self,
        specs: &[ParamSpec],
        inputs: &[Tensor],
        f: impl Fn(&Bound, &[Tensor]) -> Result<Tensor>,
    ) -> Vec<GradError> {
        let params = ModelParams::init(0, specs, self.seed).unwrap();
        self.run(&params, inputs, f)
    }
}

pub fn worst(errors: &[GradError]) -> f64 {
    errors.iter().map(|e| e.rel).fold(0.0, f64::max)
}

/// Brute-force scaled dot-product attention over `[c, n]` token columns
/// (`q`, `k`, `v` given channel-major), returning `[c, n]`.
pub fn textbook_attention(q: &[f64], k: &[f64], v: &[f64], c: usize, n: usize) -> Vec<f64> {
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = vec![0.0; c * n];
    for i in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|j| (0..c).map(|ch| q[ch * n + i] * k[ch * n + j]).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = e.iter().sum();
        for ch in 0..c {
            out[ch * n + i] = (0..n).map(|j| e[j] / z * v[ch * n + j]).sum();
        }
    }
    out
}
pub mod gradsuite;
pub mod oracles;
