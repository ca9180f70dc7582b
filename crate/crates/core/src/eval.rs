//! Batched, optionally multi-threaded inference and classification maps.
//!
//! Work is cut into fixed chunks of `batch` samples; thread `t` takes chunks
//! `t, t + T, …` and results are reassembled by chunk index, so the output does
//! not depend on the thread count.

use std::fs;
use std::path::Path;

use crate::data::{PatchSet, RasterPair};
use crate::error::{Error, Result};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::model::params::ModelParams;
use crate::model::{self, ModelConfig};

/// Worker threads: `MMF_THREADS` if set to a positive integer, else the available cores.
pub fn worker_threads() -> usize {
    std::env::var("MMF_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_chunks<T: Send>(n_chunks: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.clamp(1, n_chunks.max(1));
    if threads == 1 {
        return (0..n_chunks).map(f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n_chunks).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                scope.spawn(move || (t..n_chunks).step_by(threads).map(|c| (c, f(c))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("inference worker panicked") {
                slots[c] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
}

/// Predicted class of every sample in `set`.
pub fn predict_set(params: &ModelParams, cfg: &ModelConfig, set: &PatchSet, batch: usize) -> Result<Vec<usize>> {
    predict_set_threads(params, cfg, set, batch, worker_threads())
}

pub fn predict_set_threads(
    params: &ModelParams,
    cfg: &ModelConfig,
    set: &PatchSet,
    batch: usize,
    threads: usize,
) -> Result<Vec<usize>> {
    model::check_params(params, cfg)?;
    let batch = batch.max(1);
    let chunks = set.len().div_ceil(batch);
    let out = run_chunks(chunks, threads, |c| {
        let idx: Vec<usize> = (c * batch..((c + 1) * batch).min(set.len())).collect();
        let (hsi, lidar, _) = set.batch(&idx, cfg.modality);
        model::predict(params, hsi.as_ref(), lidar.as_ref(), cfg)
    })?;
    Ok(out.concat())
}

pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, set: &PatchSet, batch: usize) -> Result<ConfusionMatrix> {
    let pred = predict_set(params, cfg, set, batch)?;
    confusion(set.labels(), &pred, cfg.num_classes)
}

/// Predicted class of every listed labeled pixel, extracting patches chunk by chunk.
pub fn predict_pixels(
    params: &ModelParams,
    cfg: &ModelConfig,
    rp: &RasterPair,
    coords: &[(usize, usize)],
    batch: usize,
) -> Result<Vec<usize>> {
    model::check_params(params, cfg)?;
    let batch = batch.max(1);
    let chunks = coords.len().div_ceil(batch);
    let out = run_chunks(chunks, worker_threads(), |c| {
        let set = PatchSet::from_coords(rp, &coords[c * batch..((c + 1) * batch).min(coords.len())])?;
        let idx: Vec<usize> = (0..set.len()).collect();
        let (hsi, lidar, _) = set.batch(&idx, cfg.modality);
        model::predict(params, hsi.as_ref(), lidar.as_ref(), cfg)
    })?;
    Ok(out.concat())
}

/// Fixed class colors; class `k` (0-based) gets entry `k`.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// Unlabeled pixels.
pub const BACKGROUND: [u8; 3] = [0, 0, 0];

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Pixmap {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_p6(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn write_p6(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_p6()).map_err(|e| Error::io(path, e))
    }
}

/// Paints every labeled pixel with the color of the class `classify` assigns it.
/// `classify` receives all labeled coordinates in raster order.
pub fn render_map_with(
    rp: &RasterPair,
    palette: &[[u8; 3]],
    classify: impl FnOnce(&[(usize, usize)]) -> Result<Vec<usize>>,
) -> Result<Pixmap> {
    if palette.len() < rp.num_classes {
        return Err(Error::Contract(format!(
            "palette has {} colors for {} classes",
            palette.len(),
            rp.num_classes
        )));
    }
    let coords = rp.labeled_pixels();
    let classes = classify(&coords)?;
    if classes.len() != coords.len() {
        return Err(Error::Dimension {
            op: "render_map",
            axis: 0,
            expected: coords.len(),
            found: classes.len(),
        });
    }
    let (h, w) = (rp.height(), rp.width());
    let mut rgb = BACKGROUND.repeat(h * w);
    for (&(r, c), &k) in coords.iter().zip(&classes) {
        let color = palette.get(k).ok_or_else(|| Error::Label(format!("class {k} has no palette color")))?;
        rgb[3 * (r * w + c)..][..3].copy_from_slice(color);
    }
    Ok(Pixmap {
        width: w,
        height: h,
        rgb,
    })
}

/// Classification map of a trained model.
pub fn render_map(
    rp: &RasterPair,
    params: &ModelParams,
    cfg: &ModelConfig,
    palette: &[[u8; 3]],
    batch: usize,
) -> Result<Pixmap> {
    render_map_with(rp, palette, |coords| predict_pixels(params, cfg, rp, coords, batch))
}

/// Ground-truth map with the same colors.
pub fn render_ground_truth(rp: &RasterPair, palette: &[[u8; 3]]) -> Result<Pixmap> {
    render_map_with(rp, palette, |coords| {
        Ok(coords.iter().map(|&(r, c)| rp.label(r, c) as usize - 1).collect())
    })
}
