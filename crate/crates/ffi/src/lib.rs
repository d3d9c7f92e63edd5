//! C ABI over `catpose`.
//!
//! Every function returns a [`CatposeStatus`]; on failure the message is
//! available from [`catpose_last_error_message`] on the same thread.
//! Results that own memory are opaque handles released by their `_free`
//! function. Rotations cross the boundary as 9 doubles in row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use catpose::eval::{
    box_from_estimate, iou3d, match_detections, metric_table, EvalError, EvalOptions, GroundTruth, ObjectEstimate,
    Prediction, TableThresholds,
};
use catpose::geometry::{
    rotation_error_deg, umeyama_align, CameraIntrinsics, GeometryError, Point2, Point3, RigidPose, RotationMatrix,
};
use catpose::pnp::{ransac_pnp, scale_model_points, Correspondence2D3D, PnPResult, PnpError, RansacConfig};
use catpose::scale::{gt_offset, recover_scale, CategoryStats, ScaleError};
use nalgebra::Vector3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatposeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverFailure = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatposeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// `x_cam = R·x + t`, `R` row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatposePose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatposeRansacConfig {
    /// Inlier threshold, pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

/// Number of columns in the default metric table: IoU50, IoU75, 10cm,
/// 10°, 10°10cm.
pub const CATPOSE_METRIC_COLUMNS: usize = 5;

/// Opaque RANSAC-PnP result.
pub struct CatposePnpResult(PnPResult);

/// Opaque evaluator accumulating predictions and ground truth.
#[derive(Default)]
pub struct CatposeEvaluator {
    predictions: Vec<Prediction>,
    ground_truth: Vec<GroundTruth>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CatposeStatus, String);

impl Failure {
    fn invalid(msg: impl ToString) -> Self {
        Failure(CatposeStatus::InvalidArgument, msg.to_string())
    }

    fn null(what: &str) -> Self {
        Failure(CatposeStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        let status = match e {
            GeometryError::DegenerateConfiguration(_) | GeometryError::NonFinite(_) => CatposeStatus::SolverFailure,
            _ => CatposeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<PnpError> for Failure {
    fn from(e: PnpError) -> Self {
        match e {
            PnpError::InvalidConfig(_) | PnpError::NonPositiveScale(_) => Failure::invalid(e),
            other => Failure(CatposeStatus::SolverFailure, other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::invalid(e)
    }
}

impl From<ScaleError> for Failure {
    fn from(e: ScaleError) -> Self {
        Failure::invalid(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> CatposeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CatposeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CatposeStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees a non-null pointer refers to a valid T.
    unsafe { p.as_ref() }.ok_or_else(|| Failure::null(what))
}

fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller guarantees a non-null pointer refers to writable T.
    unsafe { p.as_mut() }.ok_or_else(|| Failure::null(what))
}

fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    // SAFETY: the caller guarantees a nul-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::invalid(format!("{what} is not valid UTF-8")))
}

fn points3(p: &[f64]) -> Vec<Point3> {
    p.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
}

fn to_pose(p: &CatposePose) -> Result<RigidPose, Failure> {
    let r = RotationMatrix::from_row_major(p.rotation)?;
    Ok(RigidPose::new(r, Vector3::from(p.translation))?)
}

fn from_pose(p: &RigidPose) -> CatposePose {
    CatposePose {
        rotation: p.rotation.to_row_major(),
        translation: p.translation.into(),
    }
}

fn stats_for(mean_scale: f64) -> Result<CategoryStats, Failure> {
    Ok(CategoryStats::new("ffi", mean_scale, 0.0, 1)?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn catpose_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn catpose_ransac_config_default() -> CatposeRansacConfig {
    let d = RansacConfig::default();
    CatposeRansacConfig {
        threshold: d.reprojection_threshold,
        max_iterations: d.max_iterations,
        confidence: d.confidence,
        seed: d.rng_seed,
    }
}

/// RANSAC-PnP on `n` pixels (`2n` doubles) and model points (`3n` doubles,
/// normalized frame) scaled by `scale`. On success `*out` receives a handle
/// to release with [`catpose_pnp_result_free`].
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn catpose_ransac_pnp(
    pixels: *const f64,
    model: *const f64,
    n: usize,
    scale: f64,
    intrinsics: *const CatposeIntrinsics,
    config: *const CatposeRansacConfig,
    out: *mut *mut CatposePnpResult,
) -> CatposeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let px = slice(pixels, 2 * n, "pixels")?;
        let model = points3(slice(model, 3 * n, "model")?);
        let k = non_null(intrinsics, "intrinsics")?;
        let k = CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy)?;
        let cfg = match config.is_null() {
            true => RansacConfig::default(),
            false => {
                let c = non_null(config, "config")?;
                RansacConfig {
                    reprojection_threshold: c.threshold,
                    max_iterations: c.max_iterations,
                    confidence: c.confidence,
                    rng_seed: c.seed,
                }
            }
        };
        let scaled = scale_model_points(scale, &model)?;
        let corr: Vec<Correspondence2D3D> = px
            .chunks_exact(2)
            .zip(scaled)
            .map(|(p, m)| Correspondence2D3D::new(Point2::new(p[0], p[1]), m))
            .collect();
        let res = ransac_pnp(&corr, &k, &cfg)?;
        *out = Box::into_raw(Box::new(CatposePnpResult(res)));
        Ok(())
    })
}

/// # Safety
/// `result` must come from [`catpose_ransac_pnp`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn catpose_pnp_result_free(result: *mut CatposePnpResult) {
    if !result.is_null() {
        // SAFETY: created by Box::into_raw in catpose_ransac_pnp.
        drop(unsafe { Box::from_raw(result) });
    }
}

/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn catpose_pnp_result_pose(result: *const CatposePnpResult, out: *mut CatposePose) -> CatposeStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        *out_ref(out, "out")? = from_pose(&r.0.pose);
        Ok(())
    })
}

/// Returns 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn catpose_pnp_result_inlier_count(result: *const CatposePnpResult) -> usize {
    non_null(result, "result").map_or(0, |r| r.0.inlier_count())
}

/// Returns 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn catpose_pnp_result_len(result: *const CatposePnpResult) -> usize {
    non_null(result, "result").map_or(0, |r| r.0.inlier_mask.len())
}

/// Writes one byte per correspondence (1 inlier, 0 outlier); `len` must
/// equal [`catpose_pnp_result_len`].
///
/// # Safety
/// `result` must be a live handle; `mask` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn catpose_pnp_result_inlier_mask(
    result: *const CatposePnpResult,
    mask: *mut u8,
    len: usize,
) -> CatposeStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        if len != r.0.inlier_mask.len() {
            return Err(Failure::invalid(format!("mask length {len}, result has {}", r.0.inlier_mask.len())));
        }
        if len == 0 {
            return Ok(());
        }
        if mask.is_null() {
            return Err(Failure::null("mask"));
        }
        // SAFETY: caller provides `len` writable bytes.
        let dst = unsafe { std::slice::from_raw_parts_mut(mask, len) };
        for (d, &b) in dst.iter_mut().zip(&r.0.inlier_mask) {
            *d = b as u8;
        }
        Ok(())
    })
}

/// Mean inlier reprojection error (px) and RANSAC iterations used.
///
/// # Safety
/// `result` must be a live handle; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn catpose_pnp_result_stats(
    result: *const CatposePnpResult,
    mean_reprojection_error: *mut f64,
    iterations_used: *mut usize,
) -> CatposeStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        if let Some(e) = unsafe { mean_reprojection_error.as_mut() } {
            *e = r.0.mean_reprojection_error;
        }
        if let Some(i) = unsafe { iterations_used.as_mut() } {
            *i = r.0.iterations_used;
        }
        Ok(())
    })
}

/// Least-squares similarity `dst ≈ s·R·src + t` over `n` points (`3n`
/// doubles each). With `estimate_scale` false, `s` is fixed to 1.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn catpose_umeyama(
    src: *const f64,
    dst: *const f64,
    n: usize,
    estimate_scale: bool,
    out_scale: *mut f64,
    out_pose: *mut CatposePose,
) -> CatposeStatus {
    guard(|| {
        let a = points3(slice(src, 3 * n, "src")?);
        let b = points3(slice(dst, 3 * n, "dst")?);
        let (s_out, p_out) = (out_ref(out_scale, "out_scale")?, out_ref(out_pose, "out_pose")?);
        let sim = umeyama_align(&a, &b, estimate_scale)?;
        *s_out = sim.scale;
        *p_out = from_pose(&sim.rigid_part());
        Ok(())
    })
}

/// Exact IoU of the boxes `scale·extents` placed at each pose.
///
/// # Safety
/// Pointers must be valid; extents point at 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn catpose_iou3d(
    pose_a: *const CatposePose,
    scale_a: f64,
    extents_a: *const f64,
    pose_b: *const CatposePose,
    scale_b: f64,
    extents_b: *const f64,
    out: *mut f64,
) -> CatposeStatus {
    guard(|| {
        let ea: [f64; 3] = slice(extents_a, 3, "extents_a")?.try_into().expect("length 3");
        let eb: [f64; 3] = slice(extents_b, 3, "extents_b")?.try_into().expect("length 3");
        let a = box_from_estimate(&to_pose(non_null(pose_a, "pose_a")?)?, scale_a, &ea)?;
        let b = box_from_estimate(&to_pose(non_null(pose_b, "pose_b")?)?, scale_b, &eb)?;
        *out_ref(out, "out")? = iou3d(&a, &b);
        Ok(())
    })
}

/// `ŝ = mean_scale·(1 + delta)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn catpose_recover_scale(mean_scale: f64, delta: f64, out: *mut f64) -> CatposeStatus {
    guard(|| {
        let s = recover_scale(&stats_for(mean_scale)?, delta)?;
        *out_ref(out, "out")? = s.scale;
        Ok(())
    })
}

/// `Δs = (s_gt − mean_scale) / mean_scale`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn catpose_gt_offset(s_gt: f64, mean_scale: f64, out: *mut f64) -> CatposeStatus {
    guard(|| {
        let d = gt_offset(s_gt, &stats_for(mean_scale)?)?;
        *out_ref(out, "out")? = d;
        Ok(())
    })
}

/// Geodesic angle between two row-major rotations, degrees.
///
/// # Safety
/// `a` and `b` point at 9 doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn catpose_rotation_error_deg(a: *const f64, b: *const f64, out: *mut f64) -> CatposeStatus {
    guard(|| {
        let ra = RotationMatrix::from_row_major(slice(a, 9, "a")?.try_into().expect("length 9"))?;
        let rb = RotationMatrix::from_row_major(slice(b, 9, "b")?.try_into().expect("length 9"))?;
        *out_ref(out, "out")? = rotation_error_deg(&ra, &rb);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn catpose_evaluator_new() -> *mut CatposeEvaluator {
    Box::into_raw(Box::default())
}

/// # Safety
/// `evaluator` must come from [`catpose_evaluator_new`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn catpose_evaluator_free(evaluator: *mut CatposeEvaluator) {
    if !evaluator.is_null() {
        // SAFETY: created by Box::into_raw in catpose_evaluator_new.
        drop(unsafe { Box::from_raw(evaluator) });
    }
}

fn estimate(pose: *const CatposePose, scale: f64, extents: *const f64) -> Result<ObjectEstimate, Failure> {
    let est = ObjectEstimate {
        pose: to_pose(non_null(pose, "pose")?)?,
        scale,
        canonical_extents: slice(extents, 3, "extents")?.try_into().expect("length 3"),
    };
    est.bbox()?;
    Ok(est)
}

fn image_id(p: *const c_char) -> Result<Option<String>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        string(p, "image_id").map(Some)
    }
}

/// Adds one ground-truth object. `image_id` may be null.
///
/// # Safety
/// `evaluator` must be live; strings nul-terminated; `extents` 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn catpose_evaluator_add_ground_truth(
    evaluator: *mut CatposeEvaluator,
    category: *const c_char,
    image_id_str: *const c_char,
    pose: *const CatposePose,
    scale: f64,
    extents: *const f64,
) -> CatposeStatus {
    guard(|| {
        let ev = out_ref(evaluator, "evaluator")?;
        let gt = GroundTruth {
            category: string(category, "category")?,
            estimate: estimate(pose, scale, extents)?,
            image_id: image_id(image_id_str)?,
        };
        ev.ground_truth.push(gt);
        Ok(())
    })
}

/// Adds one scored prediction. `image_id` may be null.
///
/// # Safety
/// `evaluator` must be live; strings nul-terminated; `extents` 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn catpose_evaluator_add_prediction(
    evaluator: *mut CatposeEvaluator,
    category: *const c_char,
    image_id_str: *const c_char,
    confidence: f64,
    pose: *const CatposePose,
    scale: f64,
    extents: *const f64,
) -> CatposeStatus {
    guard(|| {
        let ev = out_ref(evaluator, "evaluator")?;
        let p = Prediction {
            category: string(category, "category")?,
            confidence,
            estimate: estimate(pose, scale, extents)?,
            image_id: image_id(image_id_str)?,
        };
        p.validate()?;
        ev.predictions.push(p);
        Ok(())
    })
}

/// Mean AP over categories, percent, for the default columns (see
/// [`CATPOSE_METRIC_COLUMNS`]). `out` must hold that many doubles.
///
/// # Safety
/// `evaluator` must be live; `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn catpose_evaluator_mean_ap(
    evaluator: *const CatposeEvaluator,
    symmetry: bool,
    out: *mut f64,
    len: usize,
) -> CatposeStatus {
    guard(|| {
        let ev = non_null(evaluator, "evaluator")?;
        if len != CATPOSE_METRIC_COLUMNS {
            return Err(Failure::invalid(format!("output length {len}, expected {CATPOSE_METRIC_COLUMNS}")));
        }
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let set = match_detections(&ev.predictions, &ev.ground_truth)?;
        let table = metric_table(&set, &TableThresholds::default(), &EvalOptions { symmetry })?;
        // SAFETY: caller provides `len` writable doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, len) };
        dst.copy_from_slice(&table.mean);
        Ok(())
    })
}
