//! RSRF scene container.
//!
//! Layout (little-endian): `"RSRF"`, `u32` version, `u32` S, L, H, W, K,
//! `u32` name count followed by `u16`-length-prefixed UTF-8 band names,
//! `f32` planar HSI bands, `f32` planar LiDAR bands, then the label grid as
//! `u32` rows, `u32` cols and `u16` row-major labels.

use std::fs;
use std::path::Path;

use super::{Cube, RasterPair};
use crate::bytes::Reader;
use crate::error::{Error, Result};

pub const RASTER_MAGIC: &[u8; 4] = b"RSRF";
pub const RASTER_VERSION: u32 = 1;

pub fn encode_raster(rp: &RasterPair) -> Vec<u8> {
    let (h, w) = (rp.height(), rp.width());
    let mut out = Vec::with_capacity(64 + 4 * (rp.hsi.data.len() + rp.lidar.data.len()) + 2 * rp.labels.len());
    out.extend_from_slice(RASTER_MAGIC);
    for v in [
        RASTER_VERSION,
        rp.hsi.bands as u32,
        rp.lidar.bands as u32,
        h as u32,
        w as u32,
        rp.num_classes as u32,
        rp.band_names.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in &rp.band_names {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for &v in rp.hsi.data.iter().chain(&rp.lidar.data) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for &l in &rp.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn write_raster(path: impl AsRef<Path>, rp: &RasterPair) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raster(rp)).map_err(|e| Error::io(path, e))
}

/// Parses a container without normalizing. `path` only labels errors.
pub fn decode_raster(bytes: &[u8], path: &Path) -> Result<RasterPair> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != RASTER_MAGIC {
        return Err(Error::corrupt(path, "bad magic (expected RSRF)"));
    }
    let version = r.u32()?;
    if version != RASTER_VERSION {
        return Err(Error::corrupt(path, format!("unsupported version {version}")));
    }
    let s = r.u32()? as usize;
    let l = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let k = r.u32()? as usize;
    let names = r.u32()? as usize;
    if names != 0 && names != s + l {
        return Err(Error::corrupt(path, format!("{names} band names for {} bands", s + l)));
    }
    let mut band_names = Vec::with_capacity(names);
    for _ in 0..names {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::corrupt(path, "band name is not UTF-8"))?;
        band_names.push(name.to_string());
    }

    let plane = h
        .checked_mul(w)
        .ok_or_else(|| Error::corrupt(path, "scene dimensions overflow"))?;
    let mut read_cube = |bands: usize, what: &str| -> Result<Cube> {
        let n = bands.checked_mul(plane).ok_or_else(|| Error::corrupt(path, "scene dimensions overflow"))?;
        let raw = r.take(4 * n)?;
        let mut data = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::corrupt(
                    path,
                    format!("non-finite {what} value in band {} at pixel {}", i / plane, i % plane),
                ));
            }
            data.push(f64::from(v));
        }
        Cube::new(bands, h, w, data)
    };
    let hsi = read_cube(s, "HSI")?;
    let lidar = read_cube(l, "LiDAR")?;

    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if (rows, cols) != (h, w) {
        return Err(Error::CoRegistration(format!(
            "label grid is {rows}x{cols} but the image bands are {h}x{w}"
        )));
    }
    let raw = r.take(2 * plane)?;
    let labels: Vec<u16> = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
        .collect();
    if r.remaining() != 0 {
        return Err(Error::corrupt(path, format!("{} trailing bytes", r.remaining())));
    }
    let mut rp = RasterPair::new(hsi, lidar, labels, k)?;
    rp.band_names = band_names;
    Ok(rp)
}

/// Reads a container and min-max normalizes every band to `[0, 1]`.
pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterPair> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rp = decode_raster(&bytes, path)?;
    rp.normalize();
    Ok(rp)
}
