//! Co-registered HSI/LiDAR scenes, patch cubes, splits and a synthetic scene generator.

mod patch;
mod raster;
mod split;
mod synth;

pub use patch::{extract_patch, PatchSample, PatchSet, PATCH, PATCH_OFFSET, WINDOW};
pub use raster::{decode_raster, encode_raster, load_raster, write_raster, RASTER_MAGIC, RASTER_VERSION};
pub use split::{split, Split, SplitSpec, TrainAmount};
pub use synth::{synth_scene, synth_scene_with, Preset, SynthConfig};

use crate::error::{Error, Result};

/// Planar band stack `[bands, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Cube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != bands * height * width {
            return Err(Error::shape(
                "cube",
                format!("{bands}x{height}x{width} needs {} values, got {}", bands * height * width, data.len()),
            ));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[b * n..][..n]
    }

    pub fn at(&self, b: usize, row: usize, col: usize) -> f64 {
        self.data[(b * self.height + row) * self.width + col]
    }

    /// Per-band min-max scaling to `[0, 1]`; a constant band becomes all zeros.
    pub fn normalize(&mut self) {
        let n = self.height * self.width;
        if n == 0 {
            return;
        }
        for band in self.data.chunks_exact_mut(n) {
            let (lo, hi) = band
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let range = hi - lo;
            if range > 0.0 {
                band.iter_mut().for_each(|v| *v = (*v - lo) / range);
            } else {
                band.fill(0.0);
            }
        }
    }
}

/// A scene: HSI and LiDAR cubes plus a label grid (0 = unlabeled, classes `1..=K`).
#[derive(Clone, Debug, PartialEq)]
pub struct RasterPair {
    pub hsi: Cube,
    pub lidar: Cube,
    pub labels: Vec<u16>,
    pub num_classes: usize,
    /// Optional names for every HSI band followed by every LiDAR band.
    pub band_names: Vec<String>,
}

impl RasterPair {
    pub fn new(hsi: Cube, lidar: Cube, labels: Vec<u16>, num_classes: usize) -> Result<Self> {
        let rp = Self {
            hsi,
            lidar,
            labels,
            num_classes,
            band_names: Vec::new(),
        };
        rp.validate()?;
        Ok(rp)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.hsi.height, self.hsi.width);
        if (self.lidar.height, self.lidar.width) != (h, w) {
            return Err(Error::CoRegistration(format!(
                "HSI is {h}x{w} but LiDAR is {}x{}",
                self.lidar.height, self.lidar.width
            )));
        }
        if self.labels.len() != h * w {
            return Err(Error::CoRegistration(format!(
                "label grid holds {} pixels, scene has {h}x{w}",
                self.labels.len()
            )));
        }
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l as usize > self.num_classes) {
            return Err(Error::Label(format!(
                "{l} at pixel ({}, {}) exceeds the class count {}",
                i / w,
                i % w,
                self.num_classes
            )));
        }
        if !self.band_names.is_empty() && self.band_names.len() != self.hsi.bands + self.lidar.bands {
            return Err(Error::shape(
                "raster",
                format!(
                    "{} band names for {} bands",
                    self.band_names.len(),
                    self.hsi.bands + self.lidar.bands
                ),
            ));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.hsi.height
    }

    pub fn width(&self) -> usize {
        self.hsi.width
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width() + col]
    }

    /// Normalizes both cubes band by band.
    pub fn normalize(&mut self) {
        self.hsi.normalize();
        self.lidar.normalize();
    }

    /// Labeled pixel coordinates per class (index 0 = class 1), in raster order.
    pub fn class_pixels(&self) -> Vec<Vec<(usize, usize)>> {
        let w = self.width();
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push((i / w, i % w));
            }
        }
        out
    }

    /// All labeled pixel coordinates in raster order.
    pub fn labeled_pixels(&self) -> Vec<(usize, usize)> {
        let w = self.width();
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    }
}
