//! Brute-force references shared by the property tests and the acceptance run.

use mmformer::metrics::ConfusionMatrix;
use mmformer::model::params::{ModelParams, ParamTensor};
use mmformer::msmhsa::{head_attention, partition, reassemble};
use mmformer::training::{adam_step, AdamState, DecayMode};
use mmformer::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{random, rng, textbook_attention};

/// Max deviation of `head_attention(l = 1)` from the textbook formula over `instances` random inputs.
pub fn attention_l1_error(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let b = r.gen_range(1..=2);
        let c = r.gen_range(1..=6);
        let (h, w) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let shape = [b, c, h, w];
        let s = seed.wrapping_mul(31).wrapping_add(3 * i as u64);
        let spread = r.gen_range(0.5..4.0);
        let q = random(&shape, s).scale(spread);
        let k = random(&shape, s + 1).scale(spread);
        let v = random(&shape, s + 2);
        let got = head_attention(&q, &k, &v, 1, false).unwrap();
        let n = h * w;
        for bi in 0..b {
            let sl = |t: &Tensor| t.data()[bi * c * n..(bi + 1) * c * n].to_vec();
            let want = textbook_attention(&sl(&q), &sl(&k), &sl(&v), c, n);
            for (a, e) in sl(&got).iter().zip(&want) {
                worst = worst.max((a - e).abs());
            }
        }
    }
    worst
}

/// Jointly permutes the key and value patches of every sample and reports
/// the max change of the attention output.
pub fn key_patch_permutation_error(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let l = [2usize, 4, 8][i % 3];
        let b = r.gen_range(1..=2);
        let c = r.gen_range(1..=4);
        let shape = [b, c, 16, 16];
        let s = seed.wrapping_mul(17).wrapping_add(3 * i as u64);
        let (q, k, v) = (random(&shape, s), random(&shape, s + 1), random(&shape, s + 2));
        let mut order: Vec<usize> = (0..l * l).collect();
        order.shuffle(&mut r);
        let shuffle = |t: &Tensor| -> Tensor {
            let p = partition(t, l).unwrap();
            let per = p.numel() / (b * l * l);
            let mut data = Vec::with_capacity(p.numel());
            for bi in 0..b {
                for &src in &order {
                    let at = (bi * l * l + src) * per;
                    data.extend_from_slice(&p.data()[at..at + per]);
                }
            }
            reassemble(&Tensor::new(p.shape(), data).unwrap(), l).unwrap()
        };
        let base = head_attention(&q, &k, &v, l, false).unwrap();
        let moved = head_attention(&q, &shuffle(&k), &shuffle(&v), l, false).unwrap();
        for (a, e) in base.data().iter().zip(moved.data()) {
            worst = worst.max((a - e).abs());
        }
    }
    worst
}

/// Bit-exact partition → reassemble round trip for `l`.
pub fn round_trip_exact(l: usize, seed: u64) -> bool {
    let mut r = rng(seed);
    let b = r.gen_range(1..=3);
    let c = r.gen_range(1..=5);
    let x = random(&[b, c, 16, 16], seed);
    let y = reassemble(&partition(&x, l).unwrap(), l).unwrap();
    y.shape() == x.shape() && y.data().iter().zip(x.data()).all(|(a, e)| a.to_bits() == e.to_bits())
}

/// `max |head − N·v| / (N·|v|)` with constant `v` at every division count.
pub fn constant_value_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, l) in [1usize, 2, 4, 8].into_iter().enumerate() {
        let shape = [2, 3, 16, 16];
        let q = random(&shape, seed + 2 * i as u64).scale(3.0);
        let k = random(&shape, seed + 2 * i as u64 + 1).scale(3.0);
        let value = -0.75 + 0.5 * i as f64;
        let v = Tensor::full(&shape, value);
        let h = head_attention(&q, &k, &v, l, false).unwrap();
        let want = (l * l) as f64 * value;
        for &a in h.data() {
            worst = worst.max((a - want).abs() / want.abs());
        }
    }
    worst
}

/// Textbook OA, AA and kappa in plain floating point.
pub fn brute_metrics(k: usize, counts: &[u64]) -> (f64, f64, f64) {
    let at = |i: usize, j: usize| counts[i * k + j] as f64;
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let diag: f64 = (0..k).map(|i| at(i, i)).sum();
    let rows: Vec<f64> = (0..k).map(|i| (0..k).map(|j| at(i, j)).sum()).collect();
    let cols: Vec<f64> = (0..k).map(|j| (0..k).map(|i| at(i, j)).sum()).collect();
    let oa = diag / n;
    let present: Vec<usize> = (0..k).filter(|&i| rows[i] > 0.0).collect();
    let aa = present.iter().map(|&i| at(i, i) / rows[i]).sum::<f64>() / present.len() as f64;
    let pe: f64 = (0..k).map(|i| rows[i] * cols[i]).sum::<f64>() / (n * n);
    (oa, aa, (oa - pe) / (1.0 - pe))
}

pub fn random_confusion(r: &mut impl Rng) -> ConfusionMatrix {
    let k = r.gen_range(2..=12);
    let max = [3u64, 50, 5000][r.gen_range(0..3)];
    let counts: Vec<u64> = (0..k * k)
        .map(|idx| {
            let diag = idx % (k + 1) == 0;
            // Rows always keep their diagonal entry so every class is present.
            r.gen_range(u64::from(diag)..=max) * if diag { 3 } else { 1 }
        })
        .collect();
    ConfusionMatrix::from_counts(k, counts).unwrap()
}

/// Max deviation of (oa, aa, kappa) from the brute-force formulas over random matrices.
pub fn metric_errors(matrices: usize, seed: u64) -> [f64; 3] {
    let mut r = rng(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..matrices {
        let cm = random_confusion(&mut r);
        let k = cm.num_classes();
        let counts: Vec<u64> = (0..k * k).map(|i| cm.get(i / k, i % k)).collect();
        let (oa, aa, kappa) = brute_metrics(k, &counts);
        let got = [cm.oa().unwrap(), cm.aa().unwrap(), cm.kappa().unwrap()];
        for (w, (g, e)) in worst.iter_mut().zip(got.iter().zip([oa, aa, kappa])) {
            *w = w.max((g - e).abs());
        }
    }
    worst
}

/// Gradient sequence and hand-computed parameter values (50-digit decimal arithmetic)
/// for a scalar starting at 1.0 with lr 5e-4 and weight decay 5e-3.
pub const ADAM_GRADS: [f64; 5] = [0.5, -0.3, 0.8, 0.1, -0.6];
pub const ADAM_DECOUPLED: [f64; 5] = [
    9.99497500010000040e-01,
    9.99399252250958825e-01,
    9.99094985576533645e-01,
    9.98817325338051343e-01,
    9.98756709981548751e-01,
];
pub const ADAM_COUPLED: [f64; 5] = [
    9.99500000009901024e-01,
    9.99398493733581694e-01,
    9.99093914983923637e-01,
    9.98815286895251675e-01,
    9.98752479667365467e-01,
];

/// Max deviation of five `adam_step` calls on one scalar from `expected`.
pub fn adam_error(mode: DecayMode, expected: &[f64; 5]) -> f64 {
    let mut params = ModelParams::from_tensors(
        0,
        vec![ParamTensor {
            name: "theta".into(),
            shape: vec![1],
            data: vec![1.0],
        }],
    )
    .unwrap();
    let mut state = AdamState::new(&params);
    let mut worst: f64 = 0.0;
    for (g, want) in ADAM_GRADS.iter().zip(expected) {
        adam_step(&mut params, &[vec![*g]], &mut state, 5e-4, 5e-3, mode).unwrap();
        worst = worst.max((params.tensors()[0].data[0] - want).abs());
    }
    worst
}

/// The gradient-check miniature resized to `classes`.
pub fn small_model(classes: usize, seed: u64) -> mmformer::model::ModelConfig {
    let mut cfg = super::gradsuite::mini_config();
    cfg.num_classes = classes;
    cfg.seed = seed;
    cfg
}

/// `n` random patches with random labels in `0..classes`.
pub fn random_patches(n: usize, classes: usize, seed: u64) -> mmformer::data::PatchSet {
    let mut r = rng(seed);
    let area = mmformer::data::PATCH * mmformer::data::PATCH;
    let hsi = super::uniform(&mut r, n * 8 * area, 0.0, 1.0);
    let lidar = super::uniform(&mut r, n * area, 0.0, 1.0);
    let labels = (0..n).map(|_| r.gen_range(0..classes)).collect();
    mmformer::data::PatchSet::new(8, 1, hsi, lidar, labels).unwrap()
}

/// Full-batch steps until every one of 32 random samples is classified
/// correctly, or `None` within `max_steps`.
pub fn overfit_steps(max_steps: usize, seed: u64) -> Option<usize> {
    use mmformer::training::{train_with, TrainConfig};
    use std::ops::ControlFlow;
    let data = random_patches(32, 6, seed);
    let cfg = TrainConfig {
        epochs: max_steps,
        batch_train: 32,
        seed,
        repeats: 1,
        ..TrainConfig::default()
    };
    let mut hit = None;
    train_with(&small_model(6, seed), &data, &cfg, |rec| {
        if rec.train_acc == 1.0 {
            hit = Some(rec.epoch + 1);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    hit
}
