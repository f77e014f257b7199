//! C ABI over `lsm_core`. Objects are opaque handles created by `*_new` or
//! `*_load` and released by the matching `*_free`. Every fallible call
//! returns an [`LsmStatus`]; the message of the last failure on the calling
//! thread is available from [`lsm_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lsm_core::field::SemanticGaussianField;
use lsm_core::image::Image;
use lsm_core::io;
use lsm_core::loss::PointMap;
use lsm_core::metrics;
use lsm_core::raster::{render, Camera, RenderOptions, RenderOutput};
use lsm_core::recovery::{estimate_focal_weiszfeld, estimate_relative_pose, Intrinsics, RansacConfig, WeiszfeldConfig};
use lsm_core::{Error, ErrorKind};
use nalgebra::{Matrix3, Vector3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsmStatus {
    Ok = 0,
    /// Null pointer, bad length or bad enum value from the caller.
    InvalidArgument = 1,
    /// Malformed or inconsistent input data.
    DataError = 2,
    NumericalError = 3,
    IoError = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Selects a render buffer for [`lsm_render_copy`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsmBuffer {
    /// Row-major RGB, 3 values per pixel.
    Color = 0,
    Depth = 1,
    Alpha = 2,
    /// Row-major semantic features, `feature_dim` values per pixel.
    Feature = 3,
}

pub struct LsmField(SemanticGaussianField);

pub struct LsmCamera(Camera);

pub struct LsmRender(RenderOutput);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(LsmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Data => LsmStatus::DataError,
            ErrorKind::Numerical => LsmStatus::NumericalError,
            ErrorKind::Io => LsmStatus::IoError,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(LsmStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LsmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(invalid("path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} handle is null")))
}

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or
/// 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lsm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a field file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_field_load(path: *const c_char, out: *mut *mut LsmField) -> LsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let loaded = io::load_field(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LsmField(loaded.field)));
        Ok(())
    })
}

/// Number of Gaussians in a field, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsm_field_len(field: *const LsmField) -> usize {
    field.as_ref().map_or(0, |f| f.0.len())
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsm_field_free(field: *mut LsmField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Creates a pinhole camera. `rotation` is row-major world-to-camera.
///
/// # Safety
/// `rotation` must point to 9 doubles, `translation` to 3, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_camera_new(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: *const f64,
    translation: *const f64,
    out: *mut *mut LsmCamera,
) -> LsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = slice_arg(rotation, 9, "rotation")?;
        let t = slice_arg(translation, 3, "translation")?;
        let cam = Camera::new(
            (fx, fy),
            (cx, cy),
            (width, height),
            Matrix3::from_row_slice(r),
            Vector3::from_column_slice(t),
        )?;
        *out = Box::into_raw(Box::new(LsmCamera(cam)));
        Ok(())
    })
}

/// Loads camera `index` from a camera JSON file (one object or an array).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_camera_load(path: *const c_char, index: usize, out: *mut *mut LsmCamera) -> LsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cams = io::load_cameras(path_arg(path)?)?;
        let n = cams.len();
        let cam = cams.into_iter().nth(index).ok_or_else(|| {
            Fail(
                LsmStatus::DataError,
                format!("camera index {index} out of range ({n} cameras)"),
            )
        })?;
        *out = Box::into_raw(Box::new(LsmCamera(cam)));
        Ok(())
    })
}

/// # Safety
/// `camera` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsm_camera_free(camera: *mut LsmCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Renders a field. `background` is an RGB triple and may be null for black.
///
/// # Safety
/// Handles must be live; `background` null or 3 doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_render(
    field: *const LsmField,
    camera: *const LsmCamera,
    background: *const f64,
    out: *mut *mut LsmRender,
) -> LsmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let field = handle(field, "field")?;
        let cam = handle(camera, "camera")?;
        let bg = if background.is_null() {
            [0.0; 3]
        } else {
            let b = slice_arg(background, 3, "background")?;
            [b[0], b[1], b[2]]
        };
        let (img, _) = render(&field.0, &cam.0, bg, &RenderOptions::default())?;
        *out = Box::into_raw(Box::new(LsmRender(img)));
        Ok(())
    })
}

/// Writes width, height and feature dimension of a render. Any pointer may be null.
///
/// # Safety
/// `render` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_render_shape(
    render: *const LsmRender,
    width: *mut usize,
    height: *mut usize,
    feature_dim: *mut usize,
) -> LsmStatus {
    guard(|| {
        let r = &handle(render, "render")?.0;
        if let Some(w) = width.as_mut() {
            *w = r.color.width();
        }
        if let Some(h) = height.as_mut() {
            *h = r.color.height();
        }
        if let Some(f) = feature_dim.as_mut() {
            *f = r.feature.channels();
        }
        Ok(())
    })
}

/// Copies one render buffer into `dst`, which must hold exactly `len`
/// doubles (width x height x channels).
///
/// # Safety
/// `render` must be a live handle; `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lsm_render_copy(
    render: *const LsmRender,
    which: LsmBuffer,
    dst: *mut f64,
    len: usize,
) -> LsmStatus {
    guard(|| {
        let r = &handle(render, "render")?.0;
        let img: &Image = match which {
            LsmBuffer::Color => &r.color,
            LsmBuffer::Depth => &r.depth,
            LsmBuffer::Alpha => &r.alpha,
            LsmBuffer::Feature => &r.feature,
        };
        if len != img.data().len() {
            return Err(invalid(format!(
                "buffer holds {len} values, render needs {}",
                img.data().len()
            )));
        }
        if dst.is_null() {
            return Err(invalid("dst is null"));
        }
        std::ptr::copy_nonoverlapping(img.data().as_ptr(), dst, len);
        Ok(())
    })
}

/// # Safety
/// `render` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsm_render_free(render: *mut LsmRender) {
    if !render.is_null() {
        drop(Box::from_raw(render));
    }
}

/// Estimates the focal length of a point map given as `width * height * 3`
/// row-major camera-frame points; NaN marks invalid pixels. `confidence`
/// (one value per pixel, each at least 1) may be null for uniform weights.
///
/// # Safety
/// `points` must hold `width * height * 3` doubles, `confidence` null or
/// `width * height`, `focal` writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_estimate_focal(
    points: *const f64,
    confidence: *const f64,
    width: usize,
    height: usize,
    focal: *mut f64,
) -> LsmStatus {
    guard(|| {
        let focal = out_arg(focal, "focal")?;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| invalid("image size overflows"))?;
        let pts = slice_arg(points, n * 3, "points")?;
        let mut pm = PointMap::from_points(Image::from_vec(width, height, 3, pts.to_vec())?)?;
        if !confidence.is_null() {
            let c = slice_arg(confidence, n, "confidence")?;
            pm = pm.with_confidence(Image::from_vec(width, height, 1, c.to_vec())?)?;
        }
        *focal = estimate_focal_weiszfeld(&pm, None, &WeiszfeldConfig::default())?.focal;
        Ok(())
    })
}

/// Robust pose from `count` 3D points (`count * 3` doubles) and their pixels
/// (`count * 2`). Writes a row-major world-to-camera rotation, translation
/// and the inlier ratio (`inlier_ratio` may be null).
///
/// # Safety
/// Input pointers must hold the stated number of doubles; `rotation` must
/// point to 9 writable doubles and `translation` to 3.
#[no_mangle]
pub unsafe extern "C" fn lsm_estimate_pose(
    points: *const f64,
    pixels: *const f64,
    count: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    seed: u64,
    iterations: usize,
    threshold_px: f64,
    rotation: *mut f64,
    translation: *mut f64,
    inlier_ratio: *mut f64,
) -> LsmStatus {
    guard(|| {
        let pts = slice_arg(points, count * 3, "points")?;
        let pix = slice_arg(pixels, count * 2, "pixels")?;
        if rotation.is_null() || translation.is_null() {
            return Err(invalid("rotation and translation outputs must not be null"));
        }
        let pts: Vec<Vector3<f64>> = pts.chunks_exact(3).map(Vector3::from_column_slice).collect();
        let pix: Vec<[f64; 2]> = pix.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let k = Intrinsics { fx, fy, cx, cy };
        let cfg = RansacConfig {
            iterations,
            threshold_px,
            seed,
        };
        let pose = estimate_relative_pose(&pts, &pix, &k, &cfg)?;
        let r = std::slice::from_raw_parts_mut(rotation, 9);
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = pose.rotation[(i, j)];
            }
        }
        std::slice::from_raw_parts_mut(translation, 3).copy_from_slice(pose.translation.as_slice());
        if let Some(ir) = inlier_ratio.as_mut() {
            *ir = pose.inlier_ratio;
        }
        Ok(())
    })
}

/// Depth metrics over `count` pixels: absolute relative error and the
/// fraction within the ratio threshold, both in percent. `mask` (nonzero =
/// evaluate) may be null.
///
/// # Safety
/// `pred` and `gt` must hold `count` doubles, `mask` null or `count` bytes,
/// `rel` and `tau` writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_depth_metrics(
    pred: *const f64,
    gt: *const f64,
    mask: *const u8,
    count: usize,
    rel: *mut f64,
    tau: *mut f64,
) -> LsmStatus {
    guard(|| {
        let p = Image::from_vec(count, 1, 1, slice_arg(pred, count, "pred")?.to_vec())?;
        let g = Image::from_vec(count, 1, 1, slice_arg(gt, count, "gt")?.to_vec())?;
        let m: Option<Vec<bool>> = if mask.is_null() {
            None
        } else {
            Some(slice_arg(mask, count, "mask")?.iter().map(|v| *v != 0).collect())
        };
        let rel = out_arg(rel, "rel")?;
        let tau = out_arg(tau, "tau")?;
        let s = metrics::depth_rel_tau(&p, &g, m.as_deref())?;
        *rel = s.rel;
        *tau = s.tau;
        Ok(())
    })
}

/// PSNR in dB between two buffers of `count` values, capped for identical inputs.
///
/// # Safety
/// `a` and `b` must hold `count` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsm_psnr(
    a: *const f64,
    b: *const f64,
    count: usize,
    max_val: f64,
    out: *mut f64,
) -> LsmStatus {
    guard(|| {
        let x = Image::from_vec(count, 1, 1, slice_arg(a, count, "a")?.to_vec())?;
        let y = Image::from_vec(count, 1, 1, slice_arg(b, count, "b")?.to_vec())?;
        let out = out_arg(out, "out")?;
        *out = metrics::psnr(&x, &y, max_val)?;
        Ok(())
    })
}
