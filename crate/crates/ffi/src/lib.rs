//! C ABI for loading trained models, running refinement sampling and checking
//! the refinement bounds.
//!
//! Every function returns an [`SsmStatus`]. On failure the message is available
//! from [`ssm_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::ArrayView2;
use ssm::infer::{InferenceConfig, InitPolicy};
use ssm::model::{PretrainNet, ScoreCheckpoint};
use ssm::report::{self, LastSteps, RunConfig};
use ssm::schedule::NoiseSchedule;
use ssm::theory;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    NonFinite = 5,
    Diverged = 6,
    Io = 7,
    Format = 8,
    Internal = 9,
    Panic = 10,
}

#[derive(Debug, thiserror::Error)]
enum FfiError {
    #[error("null pointer: {0}")]
    Null(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] ssm::Error),
}

impl FfiError {
    fn status(&self) -> SsmStatus {
        match self {
            FfiError::Null(_) => SsmStatus::NullPointer,
            FfiError::Invalid(_) => SsmStatus::InvalidArgument,
            FfiError::Core(e) => match e {
                ssm::Error::Config(_) => SsmStatus::Config,
                ssm::Error::Shape(_) => SsmStatus::Shape,
                ssm::Error::NonFinite(_) => SsmStatus::NonFinite,
                ssm::Error::TrainingDiverged { .. } | ssm::Error::InferenceDiverged { .. } => SsmStatus::Diverged,
                ssm::Error::Data { .. } | ssm::Error::Io(_) | ssm::Error::Csv(_) => SsmStatus::Io,
                ssm::Error::Format(_) => SsmStatus::Format,
                ssm::Error::Internal(_) => SsmStatus::Internal,
            },
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> SsmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsmStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            SsmStatus::Panic
        }
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn ssm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ssm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A trained score network with its frozen conditioner.
pub struct SsmModel {
    checkpoint: ScoreCheckpoint,
    conditioner: PretrainNet,
}

/// Refinement sampler settings.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmInferOptions {
    pub epsilon: f64,
    /// Steps at the last level.
    pub last_steps: usize,
    /// Cap on steps at every other level.
    pub step_cap: usize,
    /// End-signal factor: `beta_i = gamma * sigma_i`.
    pub gamma: f64,
    pub use_noise: bool,
    pub fast: bool,
    pub seed: u64,
    /// Predictions are averaged over this many runs.
    pub repeats: usize,
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, FfiError> {
    if p.is_null() {
        return Err(FfiError::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| FfiError::Invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(model: *const SsmModel) -> Result<&'a SsmModel, FfiError> {
    model.as_ref().ok_or(FfiError::Null("model"))
}

unsafe fn out_slice<'a>(out: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], FfiError> {
    if out.is_null() {
        return Err(FfiError::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(out, len))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], FfiError> {
    if p.is_null() {
        return Err(FfiError::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Loads a score checkpoint and its conditioner checkpoint.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out_model` must be writable. Free the
/// model with [`ssm_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ssm_model_load(
    score_path: *const c_char,
    conditioner_path: *const c_char,
    out_model: *mut *mut SsmModel,
) -> SsmStatus {
    guard(|| {
        if out_model.is_null() {
            return Err(FfiError::Null("out_model"));
        }
        let checkpoint = ScoreCheckpoint::load(path_arg(score_path, "score_path")?)?;
        let conditioner = PretrainNet::load(path_arg(conditioner_path, "conditioner_path")?)?;
        if conditioner.input_dim() != checkpoint.model.input_dim()
            || conditioner.output_dim() != checkpoint.model.output_dim()
        {
            return Err(FfiError::Invalid("conditioner does not match the score network".into()));
        }
        *out_model = Box::into_raw(Box::new(SsmModel {
            checkpoint,
            conditioner,
        }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`ssm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssm_model_free(model: *mut SsmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, output width and number of noise levels.
///
/// # Safety
/// `model` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn ssm_model_dims(
    model: *const SsmModel,
    input_dim: *mut usize,
    output_dim: *mut usize,
    levels: *mut usize,
) -> SsmStatus {
    guard(|| {
        let m = model_ref(model)?;
        if let Some(p) = input_dim.as_mut() {
            *p = m.checkpoint.model.input_dim();
        }
        if let Some(p) = output_dim.as_mut() {
            *p = m.checkpoint.model.output_dim();
        }
        if let Some(p) = levels.as_mut() {
            *p = m.checkpoint.model.levels();
        }
        Ok(())
    })
}

/// Sampler settings the model was trained with. An `auto` last-step count falls
/// back to the step cap. Averaging defaults to a single run.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_infer_options_default(model: *const SsmModel, out: *mut SsmInferOptions) -> SsmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or(FfiError::Null("out"))?;
        let mut cfg = RunConfig::default();
        let echo: String = m
            .checkpoint
            .config_echo
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        cfg.apply_text(&echo)?;
        *out = SsmInferOptions {
            epsilon: cfg.epsilon,
            last_steps: match cfg.last_steps {
                LastSteps::Fixed(t) => t,
                LastSteps::Auto => cfg.step_cap,
            },
            step_cap: cfg.step_cap,
            gamma: cfg.gamma,
            use_noise: cfg.use_noise,
            fast: cfg.fast,
            seed: cfg.seed,
            repeats: 1,
        };
        Ok(())
    })
}

/// Predicts `rows` raw inputs laid out row-major in `x`, writing
/// `rows * output_dim` raw-scale values to `out`. Null `options` uses
/// [`ssm_infer_options_default`]. Refinement starts from the training-target mean.
///
/// # Safety
/// `x` must hold `rows * input_dim` values and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ssm_model_predict(
    model: *const SsmModel,
    x: *const f64,
    rows: usize,
    options: *const SsmInferOptions,
    out: *mut f64,
    out_len: usize,
) -> SsmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (m_in, d) = (m.checkpoint.model.input_dim(), m.checkpoint.model.output_dim());
        if out_len != rows * d {
            return Err(FfiError::Invalid(format!("out_len is {out_len}, expected {}", rows * d)));
        }
        let opts = match options.as_ref() {
            Some(o) => *o,
            None => {
                let mut o = std::mem::MaybeUninit::<SsmInferOptions>::uninit();
                let status = ssm_infer_options_default(model, o.as_mut_ptr());
                if status != SsmStatus::Ok {
                    return Err(FfiError::Invalid("default options unavailable".into()));
                }
                o.assume_init()
            }
        };
        let xs = in_slice(x, rows * m_in, "x")?;
        let dst = out_slice(out, out_len, "out")?;
        let view = ArrayView2::from_shape((rows, m_in), xs).map_err(|e| FfiError::Invalid(e.to_string()))?;
        let schedule = &m.checkpoint.schedule;
        let mut ic = InferenceConfig::new(schedule, opts.epsilon, opts.last_steps, opts.step_cap, opts.gamma)?;
        ic.use_noise = opts.use_noise;
        ic.fast = opts.fast;
        ic.seed = opts.seed;
        ic.y0 = InitPolicy::Zeros;
        let preds = report::predict_raw(&m.checkpoint, &m.conditioner, view, &ic, opts.repeats)?;
        for (o, p) in dst.iter_mut().zip(preds.iter()) {
            *o = *p;
        }
        Ok(())
    })
}

/// Geometric noise levels from `sigma_first` down to `sigma_last`.
///
/// # Safety
/// `out` must hold `levels` values.
#[no_mangle]
pub unsafe extern "C" fn ssm_schedule_sigmas(sigma_first: f64, sigma_last: f64, levels: usize, out: *mut f64) -> SsmStatus {
    guard(|| {
        let s = NoiseSchedule::geometric(sigma_first, sigma_last, levels)?;
        out_slice(out, levels, "out")?.copy_from_slice(s.sigmas());
        Ok(())
    })
}

/// Noise-free iterate after `t` last-level steps at rate `r` with the exact score.
///
/// # Safety
/// `y0`, `target` and `out` must each hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ssm_closed_form_iterate(
    y0: *const f64,
    target: *const f64,
    dim: usize,
    rate: f64,
    t: u32,
    out: *mut f64,
) -> SsmStatus {
    guard(|| {
        let y = theory::closed_form_iterate(in_slice(y0, dim, "y0")?, in_slice(target, dim, "target")?, rate, t);
        out_slice(out, dim, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Smallest last-level step count after which the decay of a starting distance
/// of `sqrt(dim) * beta_prev` is dominated by the accumulated network error.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_min_last_steps(
    error_norm: f64,
    dim: usize,
    beta_prev: f64,
    rate: f64,
    out: *mut usize,
) -> SsmStatus {
    guard(|| {
        let out = out.as_mut().ok_or(FfiError::Null("out"))?;
        *out = theory::min_last_steps(error_norm, dim, beta_prev, rate)?;
        Ok(())
    })
}

/// Runs the randomized checks of the refinement closed forms and bounds.
/// `passed` is set to whether every check held.
///
/// # Safety
/// `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_theory_verify(trials: usize, seed: u64, passed: *mut bool) -> SsmStatus {
    guard(|| {
        let passed = passed.as_mut().ok_or(FfiError::Null("passed"))?;
        let report = theory::verify_all(trials, seed)?;
        *passed = report.passed();
        if !*passed {
            set_last_error(report.summary());
        }
        Ok(())
    })
}
