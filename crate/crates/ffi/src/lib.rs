//! C ABI over the scenesim map, matching and similarity routines.
//!
//! Every fallible function returns an [`SsmStatus`]; on failure the message is
//! available from [`ssm_last_error_message`] on the same thread. Objects are
//! handed out as opaque pointers and must be released with their `_free`
//! function.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use scenesim::grid::polar_to_image;
use scenesim::matching::best_match_rotated;
use scenesim::pgm::{load_map, save_map};
use scenesim::similarity::{
    global_scene_similarity, local_scene_similarity, weighted_scene_score, GlobalSimilarityParams, WeightMatrix,
};
use scenesim::{Error, GridImage, SceneSpec};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    ZeroVariance = 5,
    NoValidPlacement = 6,
    EmptySimilarity = 7,
    SceneInfeasible = 8,
    InsufficientData = 9,
    Internal = 10,
    Panic = 11,
}

/// Occupancy raster.
pub struct SsmGrid(GridImage);

/// Scene description (bounds plus obstacles).
pub struct SsmScene(SceneSpec);

/// Per-cell weights in `[0.5, 1]`.
pub struct SsmWeights(WeightMatrix);

/// Best rotated placement.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsmMatch {
    pub x: usize,
    pub y: usize,
    /// Degrees.
    pub phi: f64,
    pub score: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SsmStatus {
    match err {
        Error::InvalidArgument(_) => SsmStatus::InvalidArgument,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => SsmStatus::Parse,
        Error::Io { .. } => SsmStatus::Io,
        Error::ZeroVariance => SsmStatus::ZeroVariance,
        Error::NoValidPlacement => SsmStatus::NoValidPlacement,
        Error::EmptySimilarity => SsmStatus::EmptySimilarity,
        Error::SceneInfeasible(_) => SsmStatus::SceneInfeasible,
        Error::InsufficientData(_) => SsmStatus::InsufficientData,
        Error::TrainingDiverged(_) => SsmStatus::Internal,
    }
}

struct Fail(SsmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SsmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsmStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside scenesim".into());
            SsmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SsmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn c_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn ssm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a grid from `width * height` row-major pixels.
///
/// # Safety
/// `pixels` must point to `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_grid_new(
    width: usize,
    height: usize,
    resolution: f64,
    pixels: *const u8,
    out_grid: *mut *mut SsmGrid,
) -> SsmStatus {
    guard(|| {
        let o = out(out_grid, "out_grid")?;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Fail(SsmStatus::InvalidArgument, "grid size overflows".into()))?;
        let px = c_slice(pixels, n, "pixels")?;
        let g = GridImage::from_pixels(width, height, resolution, px.to_vec())?;
        *o = Box::into_raw(Box::new(SsmGrid(g)));
        Ok(())
    })
}

/// Reads a PGM map (and its `.meta` sidecar when present).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_grid_load_pgm(path: *const c_char, out_grid: *mut *mut SsmGrid) -> SsmStatus {
    guard(|| {
        let o = out(out_grid, "out_grid")?;
        let g = load_map(c_str(path, "path")?)?;
        *o = Box::into_raw(Box::new(SsmGrid(g)));
        Ok(())
    })
}

/// Writes a grid as PGM plus `.meta`.
///
/// # Safety
/// `grid` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ssm_grid_save_pgm(grid: *const SsmGrid, path: *const c_char) -> SsmStatus {
    guard(|| {
        let g = deref(grid, "grid")?;
        save_map(&g.0, c_str(path, "path")?)?;
        Ok(())
    })
}

/// Width, height and resolution of a grid.
///
/// # Safety
/// `grid` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn ssm_grid_info(
    grid: *const SsmGrid,
    width: *mut usize,
    height: *mut usize,
    resolution: *mut f64,
) -> SsmStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        if let Some(w) = width.as_mut() {
            *w = g.width();
        }
        if let Some(h) = height.as_mut() {
            *h = g.height();
        }
        if let Some(r) = resolution.as_mut() {
            *r = g.resolution();
        }
        Ok(())
    })
}

/// Borrowed pointer to the row-major pixels; valid while the grid lives.
///
/// # Safety
/// `grid` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ssm_grid_pixels(grid: *const SsmGrid) -> *const u8 {
    grid.as_ref().map_or(ptr::null(), |g| g.0.pixels().as_ptr())
}

/// # Safety
/// `grid` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssm_grid_free(grid: *mut SsmGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Parses a scene from JSON text.
///
/// # Safety
/// `json` must be NUL-terminated; `out_scene` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_scene_from_json(json: *const c_char, out_scene: *mut *mut SsmScene) -> SsmStatus {
    guard(|| {
        let o = out(out_scene, "out_scene")?;
        let s = SceneSpec::from_json(c_str(json, "json")?)?;
        *o = Box::into_raw(Box::new(SsmScene(s)));
        Ok(())
    })
}

/// Loads a scene file.
///
/// # Safety
/// `path` must be NUL-terminated; `out_scene` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_scene_load(path: *const c_char, out_scene: *mut *mut SsmScene) -> SsmStatus {
    guard(|| {
        let o = out(out_scene, "out_scene")?;
        let s = SceneSpec::load(c_str(path, "path")?)?;
        *o = Box::into_raw(Box::new(SsmScene(s)));
        Ok(())
    })
}

/// Rasterizes a scene at `resolution` metres per pixel.
///
/// # Safety
/// `scene` must come from this library; `out_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_scene_rasterize(
    scene: *const SsmScene,
    resolution: f64,
    out_grid: *mut *mut SsmGrid,
) -> SsmStatus {
    guard(|| {
        let s = deref(scene, "scene")?;
        let o = out(out_grid, "out_grid")?;
        *o = Box::into_raw(Box::new(SsmGrid(s.0.rasterize(resolution)?)));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssm_scene_free(scene: *mut SsmScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Best placement of `templ` in `image` over the given rotations (degrees).
///
/// # Safety
/// Handles must come from this library; `angles` must hold `n_angles` values.
#[no_mangle]
pub unsafe extern "C" fn ssm_best_match_rotated(
    image: *const SsmGrid,
    templ: *const SsmGrid,
    angles: *const f64,
    n_angles: usize,
    out_match: *mut SsmMatch,
) -> SsmStatus {
    guard(|| {
        let img = deref(image, "image")?;
        let tpl = deref(templ, "templ")?;
        let a = c_slice(angles, n_angles, "angles")?;
        let o = out(out_match, "out_match")?;
        let m = best_match_rotated(&img.0, &tpl.0, a)?;
        *o = SsmMatch { x: m.x, y: m.y, phi: m.phi, score: m.score };
        Ok(())
    })
}

/// Global similarity of `test` against `train`. Pass `n_angles == 0` for the
/// default rotation set.
///
/// # Safety
/// Handles must come from this library; `angles` must hold `n_angles` values.
#[no_mangle]
pub unsafe extern "C" fn ssm_global_similarity(
    train: *const SsmGrid,
    test: *const SsmGrid,
    window: usize,
    stride: usize,
    angles: *const f64,
    n_angles: usize,
    dilation_kernel: usize,
    out_score: *mut f64,
) -> SsmStatus {
    guard(|| {
        let tr = deref(train, "train")?;
        let te = deref(test, "test")?;
        let a = c_slice(angles, n_angles, "angles")?;
        let o = out(out_score, "out_score")?;
        let mut params = GlobalSimilarityParams {
            window_w: window,
            window_h: window,
            stride_x: stride,
            stride_y: stride,
            dilation_kernel,
            ..GlobalSimilarityParams::default()
        };
        if !a.is_empty() {
            params.angles = a.to_vec();
        }
        *o = global_scene_similarity(&tr.0, &te.0, &params)?.aggregate;
        Ok(())
    })
}

/// Weights from per-cell arrival counts: `clip(min(c, n_max) / n_max, 0.5, 1)`.
///
/// # Safety
/// `counts` must hold `width * height` values; `out_weights` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_weights_from_counts(
    width: usize,
    height: usize,
    resolution: f64,
    counts: *const u32,
    n_max: u32,
    out_weights: *mut *mut SsmWeights,
) -> SsmStatus {
    guard(|| {
        let o = out(out_weights, "out_weights")?;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Fail(SsmStatus::InvalidArgument, "grid size overflows".into()))?;
        let c = c_slice(counts, n, "counts")?;
        let ac = scenesim::similarity::ArrivalCounts {
            width,
            height,
            resolution,
            counts: c.to_vec(),
            skipped: 0,
        };
        *o = Box::into_raw(Box::new(SsmWeights(scenesim::similarity::weight_matrix(&ac, n_max)?)));
        Ok(())
    })
}

/// Loads weights from an arrival-count PGM (meta with `n_max`) or a weight image.
///
/// # Safety
/// `path` must be NUL-terminated; `out_weights` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_weights_load(path: *const c_char, out_weights: *mut *mut SsmWeights) -> SsmStatus {
    guard(|| {
        let o = out(out_weights, "out_weights")?;
        *o = Box::into_raw(Box::new(SsmWeights(WeightMatrix::load(c_str(path, "path")?)?)));
        Ok(())
    })
}

/// Weight of cell `(x, y)`.
///
/// # Safety
/// `weights` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ssm_weights_get(
    weights: *const SsmWeights,
    x: usize,
    y: usize,
    out_value: *mut f64,
) -> SsmStatus {
    guard(|| {
        let w = &deref(weights, "weights")?.0;
        let o = out(out_value, "out_value")?;
        if x >= w.width || y >= w.height {
            return Err(Fail(SsmStatus::InvalidArgument, format!("cell ({x}, {y}) outside {}x{}", w.width, w.height)));
        }
        *o = w.get(x, y);
        Ok(())
    })
}

/// # Safety
/// `weights` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssm_weights_free(weights: *mut SsmWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

/// Visitation-weighted score of local obstacle maps against a global map.
/// Pass `n_angles == 0` for the default rotation set.
///
/// # Safety
/// `maps` must hold `n_maps` grid handles; `angles` must hold `n_angles` values.
#[no_mangle]
pub unsafe extern "C" fn ssm_weighted_score(
    global: *const SsmGrid,
    maps: *const *const SsmGrid,
    n_maps: usize,
    weights: *const SsmWeights,
    angles: *const f64,
    n_angles: usize,
    out_score: *mut f64,
) -> SsmStatus {
    guard(|| {
        let g = deref(global, "global")?;
        let w = deref(weights, "weights")?;
        let handles = c_slice(maps, n_maps, "maps")?;
        let locals = handles
            .iter()
            .map(|&h| deref(h, "maps[i]").map(|m| m.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let a = c_slice(angles, n_angles, "angles")?;
        let a = if a.is_empty() { scenesim::similarity::default_local_angles() } else { a.to_vec() };
        let o = out(out_score, "out_score")?;
        *o = weighted_scene_score(&g.0, &locals, &w.0, &a)?.aggregate;
        Ok(())
    })
}

/// Relative local similarity: `ss_test - ss_train`.
#[no_mangle]
pub extern "C" fn ssm_local_similarity(ss_test: f64, ss_train: f64) -> f64 {
    local_scene_similarity(ss_test, ss_train)
}

/// Robot-frame polar point to local-map pixel coordinates (may be off-raster).
///
/// # Safety
/// `out_x` and `out_y` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_polar_to_image(
    rho: f64,
    theta: f64,
    resolution: f64,
    width: usize,
    height: usize,
    out_x: *mut i64,
    out_y: *mut i64,
) -> SsmStatus {
    guard(|| {
        let ox = out(out_x, "out_x")?;
        let oy = out(out_y, "out_y")?;
        if !(resolution > 0.0) || !rho.is_finite() || !theta.is_finite() {
            return Err(Fail(SsmStatus::InvalidArgument, "resolution must be positive and inputs finite".into()));
        }
        (*ox, *oy) = polar_to_image(rho, theta, resolution, width, height);
        Ok(())
    })
}
