//! Confusion matrices, OA/AA/kappa and run-aggregated reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds from row-major counts.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::shape("confusion", format!("{k} classes need {} counts, got {}", k * k, counts.len())));
        }
        Ok(Self { k, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Label(format!(
                "pair (true {truth}, predicted {pred}) outside {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    /// Adds another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Dimension {
                op: "confusion_merge",
                axis: 0,
                expected: self.k,
                found: other.k,
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..][..self.k].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    fn nonempty_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Metric("confusion matrix is empty".into())),
            t => Ok(t as f64),
        }
    }

    /// Per-class recall; `None` for classes with no true samples.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| match self.row_sum(i) {
                0 => None,
                n => Some(self.get(i, i) as f64 / n as f64),
            })
            .collect()
    }

    pub fn oa(&self) -> Result<f64> {
        Ok(self.trace() as f64 / self.nonempty_total()?)
    }

    /// Mean recall over classes that have samples; empty rows are skipped with a warning.
    pub fn aa(&self) -> Result<f64> {
        self.nonempty_total()?;
        let recalls: Vec<f64> = self
            .per_class()
            .into_iter()
            .enumerate()
            .filter_map(|(i, r)| {
                if r.is_none() {
                    log::warn!("class {i} has no samples and is left out of AA");
                }
                r
            })
            .collect();
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }

    /// `(p_o - p_e) / (1 - p_e)`, evaluated as `(N·tr - Σ r·c) / (N² - Σ r·c)` in
    /// integers so that only the final division rounds.
    pub fn kappa(&self) -> Result<f64> {
        self.nonempty_total()?;
        let n = u128::from(self.total());
        let tr = u128::from(self.trace());
        let chance: u128 = (0..self.k)
            .map(|i| u128::from(self.row_sum(i)) * u128::from(self.col_sum(i)))
            .sum();
        let denom = n * n - chance;
        if denom == 0 {
            return if tr == n {
                Ok(1.0)
            } else {
                Err(Error::Metric("kappa undefined: chance agreement is 1 without perfect agreement".into()))
            };
        }
        let num = (n * tr) as i128 - chance as i128;
        Ok(num as f64 / denom as f64)
    }
}

/// Counts `(truth[i], pred[i])` pairs.
pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension {
            op: "confusion",
            axis: 0,
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(pred) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// Metrics of one evaluated run, as fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub per_class: Vec<Option<f64>>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

impl RunMetrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            per_class: cm.per_class(),
            oa: cm.oa()?,
            aa: cm.aa()?,
            kappa: cm.kappa()?,
        })
    }
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }

    /// `"xx.xx ± yy.yy"` in percent.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// Per-class accuracy, OA, AA and kappa aggregated over repeated runs.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `None` where a class had no test samples in any run.
    pub per_class: Vec<Option<Stat>>,
    pub oa: Stat,
    pub aa: Stat,
    pub kappa: Stat,
    pub runs: Vec<RunMetrics>,
}

impl EvalReport {
    pub fn from_runs(runs: Vec<RunMetrics>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if runs.is_empty() {
            return Err(Error::Contract("report needs at least one run".into()));
        }
        if let Some(r) = runs.iter().find(|r| r.per_class.len() != k) {
            return Err(Error::Dimension {
                op: "report",
                axis: 0,
                expected: k,
                found: r.per_class.len(),
            });
        }
        let per_class = (0..k)
            .map(|i| {
                let v: Vec<f64> = runs.iter().filter_map(|r| r.per_class[i]).collect();
                (!v.is_empty()).then(|| Stat::of(&v))
            })
            .collect();
        let col = |f: fn(&RunMetrics) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            class_names,
            per_class,
            oa: col(|r| r.oa),
            aa: col(|r| r.aa),
            kappa: col(|r| r.kappa),
            runs,
        })
    }

    /// Aligned table: one row per class, then OA, AA and Kappa.
    pub fn to_table(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .chain(["Kappa".len(), "Class".len()])
            .max()
            .unwrap_or(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>15}", "Class", "Accuracy (%)");
        let mut row = |name: &str, stat: Option<&Stat>| {
            let cell = stat.map_or_else(|| "n/a".to_string(), Stat::percent);
            let _ = writeln!(s, "{name:<width$}  {cell:>15}");
        };
        for (name, stat) in self.class_names.iter().zip(&self.per_class) {
            row(name, stat.as_ref());
        }
        row("OA", Some(&self.oa));
        row("AA", Some(&self.aa));
        row("Kappa", Some(&self.kappa));
        s
    }

    /// `key=value` lines with fractions; `*_std` entries are sample deviations.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "repeats={}", self.runs.len());
        let nan = Stat {
            mean: f64::NAN,
            std: f64::NAN,
        };
        let class_keys: Vec<String> = (0..self.per_class.len()).map(|i| format!("class_{i}")).collect();
        let rows = [("oa", &self.oa), ("aa", &self.aa), ("kappa", &self.kappa)]
            .into_iter()
            .chain(class_keys.iter().map(String::as_str).zip(self.per_class.iter().map(|p| p.as_ref().unwrap_or(&nan))));
        for (key, stat) in rows {
            let _ = writeln!(s, "{key}_mean={}", stat.mean);
            let _ = writeln!(s, "{key}_std={}", stat.std);
        }
        s
    }
}
