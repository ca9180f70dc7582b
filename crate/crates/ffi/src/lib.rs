//! C ABI over the `mmformer` crate.
//!
//! Scenes and models are opaque heap handles released with their `*_free`
//! function. Every call returns an [`MmfStatus`]; on failure the message is
//! kept per thread and can be copied out with [`mmf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use mmformer::config::RunConfig;
use mmformer::data::{encode_raster, load_raster, synth_scene, PatchSet, Preset, RasterPair, PATCH};
use mmformer::eval::{predict_pixels, predict_set, render_map, PALETTE};
use mmformer::model::params::ModelParams;
use mmformer::model::{self, ModelConfig};
use mmformer::Error;

/// Result of every exported call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad argument or configuration value.
    InvalidArgument = 2,
    /// File could not be read or written.
    Io = 3,
    /// Malformed or inconsistent scene data.
    Data = 4,
    /// Parameters do not fit the model configuration or scene.
    ParamMismatch = 5,
    /// Non-finite values or undefined metrics.
    Numeric = 6,
    /// Internal panic caught at the boundary.
    Panic = 7,
}

/// Opaque scene handle.
pub struct MmfScene {
    rp: RasterPair,
}

/// Opaque model handle: parameters plus the configuration they were trained with.
pub struct MmfModel {
    params: ModelParams,
    cfg: ModelConfig,
    batch: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MmfStatus {
    match e {
        Error::Config { .. } | Error::Contract(_) => MmfStatus::InvalidArgument,
        Error::Io { .. } => MmfStatus::Io,
        Error::Corrupt { .. }
        | Error::CoRegistration(_)
        | Error::Label(_)
        | Error::Shape { .. }
        | Error::Dimension { .. } => MmfStatus::Data,
        Error::ParamMismatch(_) => MmfStatus::ParamMismatch,
        Error::NonFinite(_) | Error::Metric(_) => MmfStatus::Numeric,
    }
}

/// Runs `f`, translating errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (MmfStatus, String)>) -> MmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MmfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MmfStatus::Panic
        }
    }
}

fn lib(e: Error) -> (MmfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (MmfStatus, String) {
    (MmfStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (MmfStatus, String)> {
    str_arg(p, name).map(PathBuf::from)
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MmfStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MmfStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

/// Copies the calling thread's last error message (NUL-terminated, truncated to
/// `len - 1` bytes) into `buf` and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mmf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a synthetic scene. `preset` is `"trento"` or `"muufl"`;
/// `num_classes = 0` keeps the preset's class count. Bands are normalized as on load.
///
/// # Safety
/// `preset` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmf_scene_synth(
    preset: *const c_char,
    num_classes: u32,
    seed: u64,
    out: *mut *mut MmfScene,
) -> MmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let preset: Preset = str_arg(preset, "preset")?.parse().map_err(lib)?;
        let k = if num_classes == 0 { preset.dims().4 } else { num_classes as usize };
        let mut rp = synth_scene(preset, k, seed).map_err(lib)?;
        rp.normalize();
        *out = Box::into_raw(Box::new(MmfScene { rp }));
        Ok(())
    })
}

/// Loads an RSRF scene file and normalizes its bands.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmf_scene_load(path: *const c_char, out: *mut *mut MmfScene) -> MmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let rp = load_raster(path_arg(path, "path")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(MmfScene { rp }));
        Ok(())
    })
}

/// Writes the scene's (normalized) bands and labels as an RSRF file.
///
/// # Safety
/// `scene` must come from this library and `path` be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mmf_scene_save(scene: *const MmfScene, path: *const c_char) -> MmfStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        let path = path_arg(path, "path")?;
        std::fs::write(&path, encode_raster(&scene.rp)).map_err(|e| lib(Error::Io { path, source: e }))
    })
}

/// Reports band counts, extent and class count. Any output pointer may be null.
///
/// # Safety
/// `scene` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_scene_dims(
    scene: *const MmfScene,
    hsi_bands: *mut u32,
    lidar_bands: *mut u32,
    height: *mut u32,
    width: *mut u32,
    num_classes: *mut u32,
) -> MmfStatus {
    guard(|| {
        let rp = &scene.as_ref().ok_or_else(|| null("scene"))?.rp;
        for (p, v) in [
            (hsi_bands, rp.hsi.bands),
            (lidar_bands, rp.lidar.bands),
            (height, rp.height()),
            (width, rp.width()),
            (num_classes, rp.num_classes),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v as u32;
            }
        }
        Ok(())
    })
}

/// Ground-truth label at a pixel (0 = unlabeled, classes from 1).
///
/// # Safety
/// `scene` must come from this library and `label` be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_scene_label(scene: *const MmfScene, row: u32, col: u32, label: *mut u16) -> MmfStatus {
    guard(|| {
        let rp = &scene.as_ref().ok_or_else(|| null("scene"))?.rp;
        let label = label.as_mut().ok_or_else(|| null("label"))?;
        let (r, c) = (row as usize, col as usize);
        if r >= rp.height() || c >= rp.width() {
            return Err((
                MmfStatus::InvalidArgument,
                format!("pixel ({r}, {c}) outside {}x{}", rp.height(), rp.width()),
            ));
        }
        *label = rp.label(r, c);
        Ok(())
    })
}

/// Releases a scene; null is ignored.
///
/// # Safety
/// `scene` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmf_scene_free(scene: *mut MmfScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Loads parameters with the `key = value` configuration they were trained with
/// (the `config.txt` a training run writes). A null `config_path` looks for
/// `config.txt` beside the parameter file.
///
/// # Safety
/// `params_path` must be a valid C string, `config_path` null or a valid C
/// string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_load(
    params_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut MmfModel,
) -> MmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params_path = path_arg(params_path, "params_path")?;
        let config_path = if config_path.is_null() {
            params_path.parent().unwrap_or(Path::new(".")).join("config.txt")
        } else {
            path_arg(config_path, "config_path")?
        };
        let mut cfg = RunConfig::default();
        cfg.apply_file(&config_path).map_err(lib)?;
        cfg.validate().map_err(lib)?;
        let params = model::load_params(&params_path, &cfg.model).map_err(lib)?;
        *out = Box::into_raw(Box::new(MmfModel {
            params,
            cfg: cfg.model,
            batch: cfg.train.batch_eval,
        }));
        Ok(())
    })
}

/// Class count of a loaded model.
///
/// # Safety
/// `model` must come from this library and `num_classes` be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_num_classes(model: *const MmfModel, num_classes: *mut u32) -> MmfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *num_classes.as_mut().ok_or_else(|| null("num_classes"))? = m.cfg.num_classes as u32;
        Ok(())
    })
}

fn check_scene(m: &MmfModel, rp: &RasterPair) -> Result<(), (MmfStatus, String)> {
    let t = &m.cfg.tokenizer;
    if (rp.hsi.bands, rp.lidar.bands) != (t.hsi_bands, t.lidar_bands) {
        return Err((
            MmfStatus::ParamMismatch,
            format!(
                "scene has {}+{} bands, model expects {}+{}",
                rp.hsi.bands, rp.lidar.bands, t.hsi_bands, t.lidar_bands
            ),
        ));
    }
    Ok(())
}

/// Classifies `n` labeled pixels `(rows[i], cols[i])`, writing 0-based classes to `classes`.
///
/// # Safety
/// `rows`, `cols` and `classes` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn mmf_predict_pixels(
    model: *const MmfModel,
    scene: *const MmfScene,
    rows: *const u32,
    cols: *const u32,
    n: usize,
    classes: *mut u32,
) -> MmfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let rp = &scene.as_ref().ok_or_else(|| null("scene"))?.rp;
        if n == 0 {
            return Ok(());
        }
        if rows.is_null() || cols.is_null() || classes.is_null() {
            return Err(null("rows/cols/classes"));
        }
        check_scene(m, rp)?;
        let rows = std::slice::from_raw_parts(rows, n);
        let cols = std::slice::from_raw_parts(cols, n);
        let coords: Vec<(usize, usize)> = rows.iter().zip(cols).map(|(&r, &c)| (r as usize, c as usize)).collect();
        let pred = predict_pixels(&m.params, &m.cfg, rp, &coords, m.batch).map_err(lib)?;
        let out = std::slice::from_raw_parts_mut(classes, n);
        out.iter_mut().zip(pred).for_each(|(o, p)| *o = p as u32);
        Ok(())
    })
}

/// Classifies `n` prepared patches: `hsi` is `[n, S, 16, 16]`, `lidar` is
/// `[n, L, 16, 16]`, both row-major. A branch the model does not use may be null.
///
/// # Safety
/// Non-null inputs must hold the stated element counts; `classes` holds `n`.
#[no_mangle]
pub unsafe extern "C" fn mmf_predict_patches(
    model: *const MmfModel,
    hsi: *const f64,
    lidar: *const f64,
    n: usize,
    classes: *mut u32,
) -> MmfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if n == 0 {
            return Ok(());
        }
        if classes.is_null() {
            return Err(null("classes"));
        }
        let area = PATCH * PATCH;
        let (s, l) = (m.cfg.tokenizer.hsi_bands, m.cfg.tokenizer.lidar_bands);
        let take = |p: *const f64, bands: usize, used: bool, name: &str| -> Result<Vec<f64>, (MmfStatus, String)> {
            if !used {
                return Ok(vec![0.0; n * bands * area]);
            }
            if p.is_null() {
                return Err(null(name));
            }
            Ok(std::slice::from_raw_parts(p, n * bands * area).to_vec())
        };
        let h = take(hsi, s, m.cfg.modality.uses_hsi(), "hsi")?;
        let li = take(lidar, l, m.cfg.modality.uses_lidar(), "lidar")?;
        let set = PatchSet::new(s, l, h, li, vec![0; n]).map_err(lib)?;
        let pred = predict_set(&m.params, &m.cfg, &set, m.batch).map_err(lib)?;
        let out = std::slice::from_raw_parts_mut(classes, n);
        out.iter_mut().zip(pred).for_each(|(o, p)| *o = p as u32);
        Ok(())
    })
}

/// Classifies every labeled pixel and writes the map as a binary PPM.
///
/// # Safety
/// Handles must come from this library and `path` be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mmf_render_map(model: *const MmfModel, scene: *const MmfScene, path: *const c_char) -> MmfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let rp = &scene.as_ref().ok_or_else(|| null("scene"))?.rp;
        let path = path_arg(path, "path")?;
        check_scene(m, rp)?;
        let img = render_map(rp, &m.params, &m.cfg, &PALETTE, m.batch).map_err(lib)?;
        img.write_p6(&path).map_err(lib)
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_free(model: *mut MmfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
