//! C ABI for the `i3sb` crate.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`I3sbStatus`]; on failure a description is available from
//! [`i3sb_last_error`] on the same thread until the next failing call.
//! Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use i3sb::metrics::{haralick_distance, ssim, GlcmConfig};
use i3sb::posterior::{gn_value, pg_coeffs, q_weights, GnPolicy};
use i3sb::predictor::{
    cheat_oracle, gaussian_analytic_oracle, Condition, EpsilonPredictor, GaussianPairModel, TinyMlp,
};
use i3sb::sampler::{generate, SamplerConfig};
use i3sb::schedule::{BetaKind, BetaSchedule, Schedule, Spacing, StepQuery};
use i3sb::tensor_io::{read_tensor, write_tensor};
use i3sb::{Error, Field, ImageTensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum I3sbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    StepOutOfRange = 6,
    Infeasible = 7,
    NonFinite = 8,
    Config = 9,
    Callback = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum I3sbBetaKind {
    SymmetricTriangular = 0,
    Constant = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum I3sbSpacing {
    Quadratic = 0,
    Uniform = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum I3sbPolicyKind {
    I2sbEquivalent = 0,
    StepFunction = 1,
    CustomTable = 2,
}

/// `r` is read for step functions; `table`/`table_len` (N − 1 multipliers)
/// for custom tables.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct I3sbPolicy {
    pub kind: I3sbPolicyKind,
    pub r: f64,
    pub table: *const f64,
    pub table_len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct I3sbCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub g2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct I3sbStepQuery {
    pub n: usize,
    pub t: f64,
    pub sigma2: f64,
    pub sbar2: f64,
}

/// ε-prediction callback. `x_t`, `x_n` and `out` each hold
/// `height·width·channels` row-major values. Return 0 on success.
pub type I3sbPredictFn = Option<
    unsafe extern "C" fn(
        user: *mut c_void,
        x_t: *const f64,
        x_n: *const f64,
        height: usize,
        width: usize,
        channels: usize,
        query: *const I3sbStepQuery,
        out: *mut f64,
    ) -> i32,
>;

pub struct I3sbSchedule(Schedule);
pub struct I3sbTensor(ImageTensor);
pub struct I3sbPredictor(Box<dyn EpsilonPredictor>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> I3sbStatus {
    match e {
        Error::Io { .. } => I3sbStatus::Io,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::Format(_)
        | Error::ZeroDimension { .. } => I3sbStatus::Format,
        Error::ShapeMismatch { .. } => I3sbStatus::ShapeMismatch,
        Error::StepOutOfRange { .. } | Error::SingularLastStep { .. } => I3sbStatus::StepOutOfRange,
        Error::GConstraint { .. } => I3sbStatus::Infeasible,
        Error::NonFinite { .. } | Error::NonFiniteStep { .. } | Error::Diverged { .. } => {
            I3sbStatus::NonFinite
        }
        Error::Config { .. } => I3sbStatus::Config,
        Error::Predictor(_) => I3sbStatus::Callback,
        _ => I3sbStatus::InvalidArgument,
    }
}

enum Fail {
    Lib(Error),
    Status(I3sbStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(I3sbStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> I3sbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => I3sbStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            I3sbStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        Fail::Status(
            I3sbStatus::InvalidArgument,
            "path is not valid UTF-8".into(),
        )
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn policy_arg(p: *const I3sbPolicy) -> Result<GnPolicy, Fail> {
    let p = deref(p, "policy")?;
    Ok(match p.kind {
        I3sbPolicyKind::I2sbEquivalent => GnPolicy::I2sbEquivalent,
        I3sbPolicyKind::StepFunction => GnPolicy::StepFunction { r: p.r },
        I3sbPolicyKind::CustomTable => {
            if p.table.is_null() && p.table_len > 0 {
                return Err(null("policy.table"));
            }
            let table = if p.table_len == 0 {
                Vec::new()
            } else {
                std::slice::from_raw_parts(p.table, p.table_len).to_vec()
            };
            GnPolicy::CustomTable { table }
        }
    })
}

fn into_handle<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn i3sb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn i3sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- schedule

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn i3sb_schedule_new(
    beta_kind: I3sbBetaKind,
    beta_min: f64,
    beta_max: f64,
    steps: usize,
    spacing: I3sbSpacing,
    t_min: f64,
    out: *mut *mut I3sbSchedule,
) -> I3sbStatus {
    guard(|| {
        let kind = match beta_kind {
            I3sbBetaKind::SymmetricTriangular => BetaKind::SymmetricTriangular,
            I3sbBetaKind::Constant => BetaKind::Constant,
        };
        let spacing = match spacing {
            I3sbSpacing::Quadratic => Spacing::Quadratic,
            I3sbSpacing::Uniform => Spacing::Uniform,
        };
        let s = Schedule::new(
            BetaSchedule::new(kind, beta_min, beta_max)?,
            steps,
            spacing,
            t_min,
        )?;
        write_out(out, into_handle(I3sbSchedule(s)), "out")
    })
}

/// # Safety
/// `s` must be null or a handle from [`i3sb_schedule_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn i3sb_schedule_free(s: *mut I3sbSchedule) {
    free_handle(s)
}

/// Number of generative steps N, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn i3sb_schedule_steps(s: *const I3sbSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.0.steps())
}

/// Step query (time, σ², σ̄²) at grid index `n ∈ [0, N]`.
///
/// # Safety
/// `s` must be a live schedule handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_schedule_query(
    s: *const I3sbSchedule,
    n: usize,
    out: *mut I3sbStepQuery,
) -> I3sbStatus {
    guard(|| {
        let s = &deref(s, "schedule")?.0;
        if n > s.steps() {
            return Err(Error::StepOutOfRange {
                n,
                lo: 0,
                hi: s.steps(),
            }
            .into());
        }
        let q = s.query(n);
        write_out(
            out,
            I3sbStepQuery {
                n: q.n,
                t: q.t,
                sigma2: q.sigma2,
                sbar2: q.sbar2,
            },
            "out",
        )
    })
}

/// Mean and variance of the bridge marginal at step `n` for scalar endpoints.
///
/// # Safety
/// `s` must be a live schedule handle; `mean` and `variance` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn i3sb_q_marginal(
    s: *const I3sbSchedule,
    n: usize,
    x0: f64,
    xn: f64,
    mean: *mut f64,
    variance: *mut f64,
) -> I3sbStatus {
    guard(|| {
        let (w0, wn, v) = q_weights(&deref(s, "schedule")?.0, n)?;
        if mean.is_null() || variance.is_null() {
            return Err(null("output"));
        }
        write_out(mean, w0 * x0 + wn * xn, "mean")?;
        write_out(variance, v, "variance")
    })
}

/// Coefficients of the generalized posterior at step `n ∈ [1, N − 2]`.
///
/// # Safety
/// `s` must be a live schedule handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_pg_coeffs(
    s: *const I3sbSchedule,
    n: usize,
    g: f64,
    out: *mut I3sbCoeffs,
) -> I3sbStatus {
    guard(|| {
        let k = pg_coeffs(&deref(s, "schedule")?.0, n, g)?;
        write_out(
            out,
            I3sbCoeffs {
                a: k.a,
                b: k.b,
                c: k.c,
                g2: k.g2,
            },
            "out",
        )
    })
}

/// Noise level `g_n` chosen by `policy` at step `n ∈ [1, N − 1]`.
///
/// # Safety
/// `s` must be a live schedule handle, `policy` valid (with a readable table
/// for custom tables) and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_gn_value(
    s: *const I3sbSchedule,
    n: usize,
    policy: *const I3sbPolicy,
    out: *mut f64,
) -> I3sbStatus {
    guard(|| {
        let s = &deref(s, "schedule")?.0;
        let policy = policy_arg(policy)?;
        policy.validate(s.steps())?;
        write_out(out, gn_value(s, n, &policy)?, "out")
    })
}

// ------------------------------------------------------------------ tensor

/// Copies `height·width·channels` floats from `data`.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn i3sb_tensor_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f32,
    range_min: f32,
    range_max: f32,
    out: *mut *mut I3sbTensor,
) -> I3sbStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| {
                Fail::Status(I3sbStatus::InvalidArgument, "tensor size overflows".into())
            })?;
        let v = std::slice::from_raw_parts(data, len).to_vec();
        let t = ImageTensor::new(height, width, channels, v, (range_min, range_max))?;
        write_out(out, into_handle(I3sbTensor(t)), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_tensor_read(
    path: *const c_char,
    out: *mut *mut I3sbTensor,
) -> I3sbStatus {
    guard(|| {
        let t = read_tensor(path_arg(path)?)?;
        write_out(out, into_handle(I3sbTensor(t)), "out")
    })
}

/// # Safety
/// `t` must be a live tensor handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn i3sb_tensor_write(
    t: *const I3sbTensor,
    path: *const c_char,
) -> I3sbStatus {
    guard(|| {
        let t = &deref(t, "tensor")?.0;
        write_tensor(t, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `t` must be a live tensor handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn i3sb_tensor_shape(
    t: *const I3sbTensor,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> I3sbStatus {
    guard(|| {
        let (h, w, c) = deref(t, "tensor")?.0.shape();
        for (p, v) in [(height, h), (width, w), (channels, c)] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Borrowed pointer to the tensor's row-major data, valid while the handle
/// lives. Null for a null handle.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn i3sb_tensor_data(t: *const I3sbTensor) -> *const f32 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// # Safety
/// `t` must be null or a tensor handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn i3sb_tensor_free(t: *mut I3sbTensor) {
    free_handle(t)
}

// --------------------------------------------------------------- predictor

/// Predictor that knows the clean image (a copy of `x0` is taken).
///
/// # Safety
/// `x0` must be a live tensor handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_predictor_cheat(
    x0: *const I3sbTensor,
    out: *mut *mut I3sbPredictor,
) -> I3sbStatus {
    guard(|| {
        let x0 = Field::from_tensor(&deref(x0, "x0")?.0);
        write_out(
            out,
            into_handle(I3sbPredictor(Box::new(cheat_oracle(x0)))),
            "out",
        )
    })
}

/// Exact MMSE predictor for the per-pixel model `X0 ~ N(mu0, s0sq)`,
/// `X1 = X0 + N(0, s1sq)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_predictor_analytic(
    mu0: f64,
    s0sq: f64,
    s1sq: f64,
    out: *mut *mut I3sbPredictor,
) -> I3sbStatus {
    guard(|| {
        let m = GaussianPairModel::new(mu0, s0sq, s1sq)?;
        write_out(
            out,
            into_handle(I3sbPredictor(Box::new(gaussian_analytic_oracle(m)))),
            "out",
        )
    })
}

/// Loads a trained network saved by the `train` command.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_predictor_mlp_load(
    dir: *const c_char,
    out: *mut *mut I3sbPredictor,
) -> I3sbStatus {
    guard(|| {
        let net = TinyMlp::load(path_arg(dir)?)?;
        write_out(out, into_handle(I3sbPredictor(Box::new(net))), "out")
    })
}

struct Callback {
    f: unsafe extern "C" fn(
        *mut c_void,
        *const f64,
        *const f64,
        usize,
        usize,
        usize,
        *const I3sbStepQuery,
        *mut f64,
    ) -> i32,
    user: *mut c_void,
}

// The caller promises the callback and its user data may be used from the
// thread that runs generation.
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

impl EpsilonPredictor for Callback {
    fn predict(&self, x_t: &Field, q: &StepQuery, cond: &Condition) -> i3sb::Result<Field> {
        let (h, w, c) = x_t.shape();
        let mut out = vec![0.0; x_t.len()];
        let query = I3sbStepQuery {
            n: q.n,
            t: q.t,
            sigma2: q.sigma2,
            sbar2: q.sbar2,
        };
        let rc = unsafe {
            (self.f)(
                self.user,
                x_t.data().as_ptr(),
                cond.xn.data().as_ptr(),
                h,
                w,
                c,
                &query,
                out.as_mut_ptr(),
            )
        };
        if rc != 0 {
            return Err(Error::Predictor(format!(
                "callback returned {rc} at step {}",
                q.n
            )));
        }
        Field::new((h, w, c), out)
    }
}

/// Wraps a C callback as a predictor. `user` is passed through unchanged.
///
/// # Safety
/// `f` must be callable with the documented arguments for as long as the
/// handle lives; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_predictor_callback(
    f: I3sbPredictFn,
    user: *mut c_void,
    out: *mut *mut I3sbPredictor,
) -> I3sbStatus {
    guard(|| {
        let f = f.ok_or_else(|| null("callback"))?;
        write_out(
            out,
            into_handle(I3sbPredictor(Box::new(Callback { f, user }))),
            "out",
        )
    })
}

/// # Safety
/// `p` must be null or a predictor handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn i3sb_predictor_free(p: *mut I3sbPredictor) {
    free_handle(p)
}

// -------------------------------------------------------------- generation

/// Restores `xn`, drawing noise from stream `stream` of `seed`. The result
/// is a new tensor handle owned by the caller.
///
/// # Safety
/// All handles must be live, `policy` valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_generate(
    xn: *const I3sbTensor,
    predictor: *const I3sbPredictor,
    schedule: *const I3sbSchedule,
    policy: *const I3sbPolicy,
    seed: u64,
    stream: u64,
    out: *mut *mut I3sbTensor,
) -> I3sbStatus {
    guard(|| {
        let xn = &deref(xn, "xn")?.0;
        let p = deref(predictor, "predictor")?.0.as_ref();
        let s = &deref(schedule, "schedule")?.0;
        let mut cfg = SamplerConfig::new(s.steps(), policy_arg(policy)?, seed);
        cfg.stream = stream;
        let (t, _) = generate(xn, p, s, &cfg)?;
        write_out(out, into_handle(I3sbTensor(t)), "out")
    })
}

// ----------------------------------------------------------------- metrics

/// # Safety
/// `a` and `b` must be live tensor handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn i3sb_ssim(
    a: *const I3sbTensor,
    b: *const I3sbTensor,
    data_range: f64,
    out: *mut f64,
) -> I3sbStatus {
    guard(|| {
        let v = ssim(&deref(a, "a")?.0, &deref(b, "b")?.0, data_range)?;
        write_out(out, v, "out")
    })
}

/// Normalized Haralick distance with the four unit offsets and a
/// symmetric co-occurrence matrix over `levels` bins of `[window_min, window_max]`.
///
/// # Safety
/// `test` and `reference` must be live tensor handles and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn i3sb_haralick_distance(
    test: *const I3sbTensor,
    reference: *const I3sbTensor,
    levels: usize,
    window_min: f64,
    window_max: f64,
    out: *mut f64,
) -> I3sbStatus {
    guard(|| {
        let cfg = GlcmConfig {
            levels,
            window: (window_min, window_max),
            ..GlcmConfig::default()
        };
        let v = haralick_distance(
            &deref(test, "test")?.0,
            &deref(reference, "reference")?.0,
            &cfg,
        )?;
        write_out(out, v, "out")
    })
}
