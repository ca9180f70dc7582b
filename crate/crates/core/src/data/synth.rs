//! Blob-shaped synthetic scenes with class pairs that only one modality can separate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Cube, RasterPair};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 63 HSI bands, 1 LiDAR band, 166×600 pixels, 6 classes.
    Trento,
    /// 64 HSI bands, 2 LiDAR bands, 325×220 pixels, 11 classes.
    Muufl,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Trento => "trento",
            Preset::Muufl => "muufl",
        }
    }

    /// `(hsi_bands, lidar_bands, height, width, num_classes)`
    pub fn dims(self) -> (usize, usize, usize, usize, usize) {
        match self {
            Preset::Trento => (63, 1, 166, 600, 6),
            Preset::Muufl => (64, 2, 325, 220, 11),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trento" => Ok(Preset::Trento),
            "muufl" => Ok(Preset::Muufl),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (trento, muufl)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub hsi_bands: usize,
    pub lidar_bands: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Voronoi sites per class; each site grows one blob.
    pub sites_per_class: usize,
    /// A pixel is labeled when its nearest site is closer than this fraction
    /// of the distance to the second nearest, leaving unlabeled seams.
    pub core_ratio: f64,
    pub hsi_noise: f64,
    pub lidar_noise: f64,
    /// 0-based class pairs sharing one spectral signature (separable by elevation only).
    pub spectral_shared: Vec<(usize, usize)>,
    /// 0-based class pairs sharing one elevation profile (separable by spectrum only).
    pub elevation_shared: Vec<(usize, usize)>,
}

impl SynthConfig {
    pub fn preset(preset: Preset, num_classes: usize, seed: u64) -> Self {
        let (s, l, h, w, _) = preset.dims();
        Self {
            hsi_bands: s,
            lidar_bands: l,
            height: h,
            width: w,
            num_classes,
            seed,
            sites_per_class: 8,
            core_ratio: 0.7,
            hsi_noise: 0.04,
            lidar_noise: 0.02,
            spectral_shared: if num_classes >= 2 { vec![(0, 1)] } else { Vec::new() },
            elevation_shared: if num_classes >= 4 { vec![(2, 3)] } else { Vec::new() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hsi_bands", self.hsi_bands),
            ("lidar_bands", self.lidar_bands),
            ("height", self.height),
            ("width", self.width),
            ("sites_per_class", self.sites_per_class),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.num_classes == 0 || self.num_classes > u16::MAX as usize {
            return Err(Error::config("num_classes", "must lie in 1..=65535"));
        }
        if !(self.core_ratio > 0.0 && self.core_ratio <= 1.0) {
            return Err(Error::config("core_ratio", "must lie in (0, 1]"));
        }
        if !(self.hsi_noise >= 0.0 && self.lidar_noise >= 0.0) {
            return Err(Error::config("noise", "must be non-negative"));
        }
        for (field, pairs) in [("spectral_shared", &self.spectral_shared), ("elevation_shared", &self.elevation_shared)] {
            if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a == b || a >= self.num_classes || b >= self.num_classes) {
                return Err(Error::config(field, format!("invalid class pair ({a}, {b})")));
            }
        }
        Ok(())
    }
}

/// Smooth spectral signature: a baseline plus three Gaussian absorption/reflection bumps.
fn signature(rng: &mut ChaCha8Rng, bands: usize) -> Vec<f64> {
    let base = rng.gen_range(0.25..0.45);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.06..0.2),
                rng.gen_range(-0.25..0.35),
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = if bands == 1 { 0.5 } else { b as f64 / (bands - 1) as f64 };
            let v: f64 = bumps
                .iter()
                .map(|&(c, w, a)| a * (-((x - c) / w).powi(2) / 2.0).exp())
                .sum();
            (base + v).clamp(0.02, 0.98)
        })
        .collect()
}

/// Copies the first member's entry onto the second for every shared pair.
fn tie<T: Clone>(items: &mut [T], pairs: &[(usize, usize)]) {
    for &(a, b) in pairs {
        items[b] = items[a].clone();
    }
}

pub fn synth_scene(preset: Preset, num_classes: usize, seed: u64) -> Result<RasterPair> {
    synth_scene_with(&SynthConfig::preset(preset, num_classes, seed))
}

pub fn synth_scene_with(cfg: &SynthConfig) -> Result<RasterPair> {
    cfg.validate()?;
    let (h, w, k) = (cfg.height, cfg.width, cfg.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut spectra: Vec<Vec<f64>> = (0..k).map(|_| signature(&mut rng, cfg.hsi_bands)).collect();
    // Evenly spaced elevation levels, shuffled over classes; extra LiDAR bands
    // carry a class-specific fraction of the first.
    let mut levels: Vec<f64> = (0..k)
        .map(|i| 0.1 + 0.8 * if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 })
        .collect();
    levels.shuffle(&mut rng);
    let mut elevations: Vec<Vec<f64>> = levels
        .iter()
        .map(|&lvl| {
            (0..cfg.lidar_bands)
                .map(|b| if b == 0 { lvl } else { lvl * rng.gen_range(0.6..1.0) })
                .collect()
        })
        .collect();
    tie(&mut spectra, &cfg.spectral_shared);
    tie(&mut elevations, &cfg.elevation_shared);

    let n_sites = k * cfg.sites_per_class;
    let sites: Vec<(f64, f64, usize)> = (0..n_sites)
        .map(|i| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64), i % k))
        .collect();

    let hsi_noise = Normal::new(0.0, cfg.hsi_noise).map_err(|e| Error::config("hsi_noise", e.to_string()))?;
    let lidar_noise = Normal::new(0.0, cfg.lidar_noise).map_err(|e| Error::config("lidar_noise", e.to_string()))?;
    let plane = h * w;
    let mut hsi = vec![0.0; cfg.hsi_bands * plane];
    let mut lidar = vec![0.0; cfg.lidar_bands * plane];
    let mut labels = vec![0u16; plane];
    let round = |v: f64| f64::from(v as f32);
    for r in 0..h {
        for c in 0..w {
            let (mut d1, mut d2, mut class) = (f64::INFINITY, f64::INFINITY, 0);
            for &(sr, sc, sk) in &sites {
                let d = (sr - r as f64).powi(2) + (sc - c as f64).powi(2);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    class = sk;
                } else if d < d2 {
                    d2 = d;
                }
            }
            let p = r * w + c;
            if d1.sqrt() < cfg.core_ratio * d2.sqrt() {
                labels[p] = class as u16 + 1;
            }
            for (b, &s) in spectra[class].iter().enumerate() {
                hsi[b * plane + p] = round(s + hsi_noise.sample(&mut rng));
            }
            for (b, &e) in elevations[class].iter().enumerate() {
                lidar[b * plane + p] = round(e + lidar_noise.sample(&mut rng));
            }
        }
    }
    let mut rp = RasterPair::new(
        Cube::new(cfg.hsi_bands, h, w, hsi)?,
        Cube::new(cfg.lidar_bands, h, w, lidar)?,
        labels,
        k,
    )?;
    rp.band_names = (0..cfg.hsi_bands)
        .map(|b| format!("hsi_{b}"))
        .chain((0..cfg.lidar_bands).map(|b| format!("lidar_{b}")))
        .collect();
    Ok(rp)
}
