use super::RasterPair;
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::Tensor;

/// Side of the neighborhood window around a labeled pixel.
pub const WINDOW: usize = 11;
/// Side of the zero-padded patch fed to the network.
pub const PATCH: usize = 16;
/// Top/left offset of the window inside the patch (bottom/right get one more).
pub const PATCH_OFFSET: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// `[S, 16, 16]`
    pub hsi: Vec<f64>,
    /// `[L, 16, 16]`
    pub lidar: Vec<f64>,
    /// 0-based class index.
    pub label: usize,
    pub coord: (usize, usize),
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

fn fill_patch(cube: &super::Cube, row: usize, col: usize, out: &mut [f64]) {
    let half = (WINDOW / 2) as isize;
    let rows: Vec<usize> = (0..WINDOW)
        .map(|d| reflect(row as isize + d as isize - half, cube.height))
        .collect();
    let cols: Vec<usize> = (0..WINDOW)
        .map(|d| reflect(col as isize + d as isize - half, cube.width))
        .collect();
    for b in 0..cube.bands {
        let band = cube.band(b);
        let dst = &mut out[b * PATCH * PATCH..][..PATCH * PATCH];
        for (dy, &sr) in rows.iter().enumerate() {
            let src = &band[sr * cube.width..][..cube.width];
            let drow = &mut dst[(dy + PATCH_OFFSET) * PATCH..][..PATCH];
            for (dx, &sc) in cols.iter().enumerate() {
                drow[dx + PATCH_OFFSET] = src[sc];
            }
        }
    }
}

/// 11×11 window around `(row, col)`, reflected at scene borders and placed in a
/// zero 16×16 patch at offset (2, 2).
pub fn extract_patch(rp: &RasterPair, row: usize, col: usize) -> Result<PatchSample> {
    if row >= rp.height() || col >= rp.width() {
        return Err(Error::Contract(format!(
            "pixel ({row}, {col}) lies outside the {}x{} scene",
            rp.height(),
            rp.width()
        )));
    }
    let label = rp.label(row, col);
    if label == 0 {
        return Err(Error::Contract(format!("pixel ({row}, {col}) is unlabeled")));
    }
    let mut hsi = vec![0.0; rp.hsi.bands * PATCH * PATCH];
    let mut lidar = vec![0.0; rp.lidar.bands * PATCH * PATCH];
    fill_patch(&rp.hsi, row, col, &mut hsi);
    fill_patch(&rp.lidar, row, col, &mut lidar);
    Ok(PatchSample {
        hsi,
        lidar,
        label: label as usize - 1,
        coord: (row, col),
    })
}

/// Patches stored contiguously so mini-batches are plain gathers.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub hsi_bands: usize,
    pub lidar_bands: usize,
    hsi: Vec<f64>,
    lidar: Vec<f64>,
    labels: Vec<usize>,
}

impl PatchSet {
    /// `hsi` is `[n, S, 16, 16]`, `lidar` is `[n, L, 16, 16]`.
    pub fn new(hsi_bands: usize, lidar_bands: usize, hsi: Vec<f64>, lidar: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        let area = PATCH * PATCH;
        if hsi.len() != n * hsi_bands * area || lidar.len() != n * lidar_bands * area {
            return Err(Error::shape(
                "patch_set",
                format!("{n} samples need {}+{} values", n * hsi_bands * area, n * lidar_bands * area),
            ));
        }
        Ok(Self {
            hsi_bands,
            lidar_bands,
            hsi,
            lidar,
            labels,
        })
    }

    pub fn from_coords(rp: &RasterPair, coords: &[(usize, usize)]) -> Result<Self> {
        let area = PATCH * PATCH;
        let mut hsi = Vec::with_capacity(coords.len() * rp.hsi.bands * area);
        let mut lidar = Vec::with_capacity(coords.len() * rp.lidar.bands * area);
        let mut labels = Vec::with_capacity(coords.len());
        for &(r, c) in coords {
            let s = extract_patch(rp, r, c)?;
            hsi.extend_from_slice(&s.hsi);
            lidar.extend_from_slice(&s.lidar);
            labels.push(s.label);
        }
        Self::new(rp.hsi.bands, rp.lidar.bands, hsi, lidar, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the samples at `indices` into network inputs; branches the
    /// modality does not use are `None`.
    pub fn batch(&self, indices: &[usize], modality: Modality) -> (Option<Tensor>, Option<Tensor>, Vec<usize>) {
        let area = PATCH * PATCH;
        let gather = |data: &[f64], bands: usize| {
            let per = bands * area;
            let mut out = Vec::with_capacity(indices.len() * per);
            for &i in indices {
                out.extend_from_slice(&data[i * per..][..per]);
            }
            Tensor::new(&[indices.len(), bands, PATCH, PATCH], out).expect("sizes match")
        };
        let hsi = modality.uses_hsi().then(|| gather(&self.hsi, self.hsi_bands));
        let lidar = modality.uses_lidar().then(|| gather(&self.lidar, self.lidar_bands));
        (hsi, lidar, indices.iter().map(|&i| self.labels[i]).collect())
    }
}
