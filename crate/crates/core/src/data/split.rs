use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RasterPair;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainAmount {
    /// Exactly this many training pixels from every class.
    PerClass(usize),
    /// This fraction of every class, rounded, keeping at least one pixel on each side.
    Fraction(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: TrainAmount,
    /// Keep at most this many test pixels per class.
    pub test_cap: Option<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match self.train {
            TrainAmount::PerClass(0) => Err(Error::config("train_per_class", "must be positive")),
            TrainAmount::Fraction(f) if !(f > 0.0 && f < 1.0) => {
                Err(Error::config("train_fraction", format!("must lie in (0, 1), got {f}")))
            }
            _ => Ok(()),
        }?;
        if self.test_cap == Some(0) {
            return Err(Error::config("test_cap", "must be positive"));
        }
        Ok(())
    }
}

/// Disjoint pixel sets, each in raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

/// Seeded stratified split: every class is shuffled independently and its
/// first pixels go to training. Classes absent from the scene are skipped.
pub fn split(rp: &RasterPair, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, mut pixels) in rp.class_pixels().into_iter().enumerate() {
        let n = pixels.len();
        if n == 0 {
            log::warn!("class {} has no labeled pixels", k + 1);
            continue;
        }
        let n_train = match spec.train {
            TrainAmount::PerClass(c) => {
                if c > n {
                    return Err(Error::config(
                        "train_per_class",
                        format!("class {} has {n} pixels, fewer than the {c} requested", k + 1),
                    ));
                }
                c
            }
            TrainAmount::Fraction(_) if n == 1 => 1,
            TrainAmount::Fraction(f) => ((f * n as f64).round() as usize).clamp(1, n - 1),
        };
        pixels.shuffle(&mut rng);
        let rest = &pixels[n_train..];
        let n_test = spec.test_cap.map_or(rest.len(), |cap| cap.min(rest.len()));
        train.extend_from_slice(&pixels[..n_train]);
        test.extend_from_slice(&rest[..n_test]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
