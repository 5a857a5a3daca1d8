//! C-compatible interface to the loss kernels and case evaluation.
//!
//! All buffers are contiguous `f64` arrays in x-fastest order
//! (`index = x + nx * (y + ny * z)`), described by a `dims` triple. Functions
//! return an [`L1dflStatus`] code; on failure a message is available from
//! [`l1dfl_last_error`] on the calling thread until its next call into this
//! library. Calls are independent and may run concurrently from any thread.

use l1dfl_core::losses::{self, FocalReduction, LossConfig, LossError, LossId};
use l1dfl_core::metrics::{self, MetricsError};
use l1dfl_core::volgrid::{VolumeGrid, VolumeKind};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

pub type L1dflStatus = i32;

pub const L1DFL_OK: L1dflStatus = 0;
pub const L1DFL_NULL_POINTER: L1dflStatus = 1;
pub const L1DFL_BAD_CONFIG: L1dflStatus = 2;
pub const L1DFL_SHAPE_MISMATCH: L1dflStatus = 3;
pub const L1DFL_INVALID_INPUT: L1dflStatus = 4;
pub const L1DFL_INTERNAL: L1dflStatus = 5;

pub const L1DFL_LOSS_DICE: i32 = 0;
pub const L1DFL_LOSS_FOCAL: i32 = 1;
pub const L1DFL_LOSS_DFL: i32 = 2;
pub const L1DFL_LOSS_L1DFL: i32 = 3;

pub const L1DFL_REDUCTION_MEAN: i32 = 0;
pub const L1DFL_REDUCTION_SUM: i32 = 1;

/// Loss hyper-parameters; see [`l1dfl_loss_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1dflLossConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub bin_width: f64,
    pub focal_reduction: i32,
}

impl From<LossConfig> for L1dflLossConfig {
    fn from(c: LossConfig) -> Self {
        L1dflLossConfig {
            epsilon: c.epsilon,
            gamma: c.gamma,
            alpha: c.alpha,
            bin_width: c.bin_width,
            focal_reduction: match c.focal_reduction {
                FocalReduction::Mean => L1DFL_REDUCTION_MEAN,
                FocalReduction::Sum => L1DFL_REDUCTION_SUM,
            },
        }
    }
}

impl TryFrom<L1dflLossConfig> for LossConfig {
    type Error = Failure;

    fn try_from(c: L1dflLossConfig) -> Result<Self, Failure> {
        let focal_reduction = match c.focal_reduction {
            L1DFL_REDUCTION_MEAN => FocalReduction::Mean,
            L1DFL_REDUCTION_SUM => FocalReduction::Sum,
            other => return Err(Failure(L1DFL_BAD_CONFIG, format!("unknown focal reduction {other}"))),
        };
        Ok(LossConfig {
            epsilon: c.epsilon,
            gamma: c.gamma,
            alpha: c.alpha,
            bin_width: c.bin_width,
            focal_reduction,
        })
    }
}

#[doc(hidden)]
#[derive(Debug)]
pub struct Failure(L1dflStatus, String);

impl From<LossError> for Failure {
    fn from(e: LossError) -> Self {
        let code = match e {
            LossError::BadConfig(_) | LossError::UnknownLoss(_) => L1DFL_BAD_CONFIG,
            LossError::GeometryMismatch(_) | LossError::LengthMismatch { .. } => L1DFL_SHAPE_MISMATCH,
            _ => L1DFL_INVALID_INPUT,
        };
        Failure(code, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::GeometryMismatch(_) | MetricsError::LengthMismatch(..) => L1DFL_SHAPE_MISMATCH,
            _ => L1DFL_INVALID_INPUT,
        };
        Failure(code, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> L1dflStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => L1DFL_OK,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            L1DFL_INTERNAL
        }
    }
}

fn loss_from_code(code: i32) -> Result<LossId, Failure> {
    match code {
        L1DFL_LOSS_DICE => Ok(LossId::Dice),
        L1DFL_LOSS_FOCAL => Ok(LossId::Focal),
        L1DFL_LOSS_DFL => Ok(LossId::Dfl),
        L1DFL_LOSS_L1DFL => Ok(LossId::L1dfl),
        other => Err(Failure(L1DFL_BAD_CONFIG, format!("unknown loss id {other}"))),
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(L1DFL_NULL_POINTER, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_dims(dims: *const usize, name: &str) -> Result<[usize; 3], Failure> {
    non_null(dims, name)?;
    let d = [*dims, *dims.add(1), *dims.add(2)];
    if d.contains(&0) {
        return Err(Failure(L1DFL_SHAPE_MISMATCH, format!("{name} has a zero extent: {d:?}")));
    }
    d.iter()
        .try_fold(1usize, |acc, &x| acc.checked_mul(x))
        .ok_or_else(|| Failure(L1DFL_SHAPE_MISMATCH, format!("{name} overflows: {d:?}")))?;
    Ok(d)
}

unsafe fn slice<'a>(data: *const f64, dims: [usize; 3], name: &str) -> Result<&'a [f64], Failure> {
    non_null(data, name)?;
    Ok(std::slice::from_raw_parts(data, dims.iter().product()))
}

fn shape_check(a: [usize; 3], b: [usize; 3], what: &str) -> Result<(), Failure> {
    if a == b {
        Ok(())
    } else {
        Err(Failure(L1DFL_SHAPE_MISMATCH, format!("geometry mismatch: {what} {a:?} vs {b:?}")))
    }
}

/// Default loss hyper-parameters.
#[no_mangle]
pub extern "C" fn l1dfl_loss_config_default() -> L1dflLossConfig {
    LossConfig::default().into()
}

/// Evaluates loss `loss_id` for foreground probabilities `p` against the
/// binary target `g` and writes the value and `∂loss/∂p`. `grad_out` must hold
/// as many elements as `p`. A null `config` selects the defaults.
///
/// # Safety
/// `p_dims`/`g_dims` must point to three `usize`; `p`, `g` and `grad_out` to
/// buffers of the sizes those dims imply; `value_out` to one `f64`.
#[no_mangle]
pub unsafe extern "C" fn l1dfl_loss_forward_backward(
    loss_id: i32,
    p: *const f64,
    p_dims: *const usize,
    g: *const f64,
    g_dims: *const usize,
    config: *const L1dflLossConfig,
    value_out: *mut f64,
    grad_out: *mut f64,
) -> L1dflStatus {
    run(|| {
        let loss = loss_from_code(loss_id)?;
        let pd = read_dims(p_dims, "p_dims")?;
        let gd = read_dims(g_dims, "g_dims")?;
        shape_check(pd, gd, "p vs g")?;
        non_null(value_out, "value_out")?;
        non_null(grad_out, "grad_out")?;
        let cfg = if config.is_null() {
            LossConfig::default()
        } else {
            LossConfig::try_from(*config)?
        };
        let out = losses::evaluate_slices(loss, slice(p, pd, "p")?, slice(g, gd, "g")?, &cfg)?;
        *value_out = out.value;
        ptr::copy_nonoverlapping(out.grad.as_ptr(), grad_out, out.grad.len());
        Ok(())
    })
}

/// Evaluates a binary prediction against the ground truth and PET of one case
/// and returns the report as a JSON object in `json_out`, to be released with
/// [`l1dfl_string_free`].
///
/// # Safety
/// Each dims pointer must point to three `usize`, each data pointer to a
/// buffer of the implied size, `spacing` to three `f64` and `json_out` to a
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn l1dfl_evaluate_case(
    pred: *const f64,
    pred_dims: *const usize,
    gt: *const f64,
    gt_dims: *const usize,
    pet: *const f64,
    pet_dims: *const usize,
    spacing: *const f64,
    json_out: *mut *mut c_char,
) -> L1dflStatus {
    run(|| {
        non_null(json_out, "json_out")?;
        *json_out = ptr::null_mut();
        let pd = read_dims(pred_dims, "pred_dims")?;
        let gd = read_dims(gt_dims, "gt_dims")?;
        let sd = read_dims(pet_dims, "pet_dims")?;
        shape_check(gd, pd, "gt vs pred")?;
        shape_check(gd, sd, "gt vs pet")?;
        non_null(spacing, "spacing")?;
        let sp = [*spacing, *spacing.add(1), *spacing.add(2)];
        let volume = |data: &[f64], kind| {
            VolumeGrid::new(gd, sp, kind, data.to_vec()).map_err(|e| Failure(L1DFL_INVALID_INPUT, e.to_string()))
        };
        let pred = volume(slice(pred, pd, "pred")?, VolumeKind::Mask)?;
        let gt = volume(slice(gt, gd, "gt")?, VolumeKind::Mask)?;
        let pet = volume(slice(pet, sd, "pet")?, VolumeKind::Suv)?;
        let report = metrics::evaluate_case(&gt, &pred, &pet)?;
        let json = serde_json::to_string(&report).map_err(|e| Failure(L1DFL_INTERNAL, e.to_string()))?;
        *json_out = CString::new(json).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn l1dfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message describing the last failure on this thread; empty after success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn l1dfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(v) => v,
    Err(_) => panic!("version contains nul"),
};

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn l1dfl_version() -> *const c_char {
    VERSION.as_ptr()
}
