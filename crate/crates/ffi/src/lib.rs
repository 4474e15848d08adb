//! C ABI over the `cotsim` core.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load` function and released with the matching `*_free`.
//! Fallible calls return a [`CotsimStatus`]; the message of the most recent
//! failure on the calling thread is available from [`cotsim_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cotsim::inference::{self, EvalConfig};
use cotsim::io::Checkpoint;
use cotsim::model::AttentionModel;
use cotsim::patterns::{attach_tsr_basis, make_trr_basis, PatternBasis};
use cotsim::rng;
use cotsim::tasks::{
    correct_probs_for_tau, make_cyclic_task, make_transition_model, Bound, RunnerUpLayout,
    TransitionModel,
};
use cotsim::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CotsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionInfeasible = 3,
    InfeasibleParameters = 4,
    ShapeMismatch = 5,
    Numerical = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for CotsimStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionInfeasible(_) | Error::NoOrthogonalDirection { .. } => {
                CotsimStatus::DimensionInfeasible
            }
            Error::InfeasiblePrimacy(_)
            | Error::DegenerateSize(_)
            | Error::BalanceInfeasible { .. }
            | Error::InvalidTransition(_) => CotsimStatus::InfeasibleParameters,
            Error::ShapeMismatch(_) | Error::PromptKind { .. } | Error::EmptyContext => {
                CotsimStatus::ShapeMismatch
            }
            Error::Divergence { .. }
            | Error::DivisionDegenerate { .. }
            | Error::AmbiguousPattern { .. }
            | Error::AmbiguousCondition { .. } => CotsimStatus::Numerical,
            Error::Io(_) => CotsimStatus::Io,
            _ => CotsimStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Run `f`, record any failure and translate it into a status code.
fn guard<F: FnOnce() -> Result<(), CotsimFailure>>(f: F) -> CotsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CotsimStatus::Ok
        }
        Ok(Err(fail)) => {
            set_error(fail.message);
            fail.status
        }
        Err(_) => {
            set_error("panic inside cotsim".into());
            CotsimStatus::Panic
        }
    }
}

struct CotsimFailure {
    status: CotsimStatus,
    message: String,
}

impl From<Error> for CotsimFailure {
    fn from(e: Error) -> Self {
        Self {
            status: CotsimStatus::from(&e),
            message: e.to_string(),
        }
    }
}

fn fail(status: CotsimStatus, message: &str) -> CotsimFailure {
    CotsimFailure {
        status,
        message: message.to_string(),
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, CotsimFailure> {
    // SAFETY: the caller passes a handle obtained from this library or null.
    unsafe { p.as_ref() }.ok_or_else(|| fail(CotsimStatus::NullPointer, &format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), CotsimFailure> {
    if p.is_null() {
        Err(fail(CotsimStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, CotsimFailure> {
    if p.is_null() {
        return Err(fail(CotsimStatus::NullPointer, "path is null"));
    }
    // SAFETY: non-null, the caller guarantees a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(CotsimStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Orthonormal reasoning and testing patterns plus positional encodings.
pub struct CotsimBasis(PatternBasis);

/// One-layer single-head attention model.
pub struct CotsimModel(AttentionModel);

/// Cyclic reasoning task with its noisy step matrices.
pub struct CotsimTransition(TransitionModel);

/// Summary statistics of a transition model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CotsimStats {
    pub tau: f64,
    pub tau_o: f64,
    pub rho: f64,
    pub rho_o: f64,
    /// 1 if the most probable K-step output is correct for every input.
    pub condition1_holds: c_int,
}

/// Parameters of a Monte-Carlo error estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CotsimEvalParams {
    pub n_queries: usize,
    pub l_ts: usize,
    pub alpha_prime: f64,
    pub noise: f64,
    pub seed: u64,
}

/// Mean error and its binomial standard error.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CotsimErrorEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ties: usize,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cotsim_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cotsim_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` holds at least `len > n` bytes.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Build a basis with `m` reasoning patterns and `m_prime` testing patterns in
/// dimension `dim` for `k`-step tasks.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn cotsim_basis_new(
    dim: usize,
    m: usize,
    k: usize,
    m_prime: usize,
    seed: u64,
    out: *mut *mut CotsimBasis,
) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let b = make_trr_basis(dim, m, k, rng::derive_seed(seed, &[0]))?;
        let b = attach_tsr_basis(b, m_prime, rng::derive_seed(seed, &[1]))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(CotsimBasis(b))) };
        Ok(())
    })
}

/// # Safety
/// `basis` must be null or a handle from [`cotsim_basis_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cotsim_basis_free(basis: *mut CotsimBasis) {
    if !basis.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(basis) });
    }
}

/// Read the basis sizes. Any output pointer may be null.
///
/// # Safety
/// `basis` must be a live handle; the outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_basis_dims(
    basis: *const CotsimBasis,
    dim: *mut usize,
    m: *mut usize,
    m_prime: *mut usize,
    k: *mut usize,
) -> CotsimStatus {
    guard(|| {
        // SAFETY: per the contract above.
        let b = &unsafe { borrow(basis, "basis") }?.0;
        for (p, v) in [(dim, b.dim()), (m, b.m()), (m_prime, b.m_prime()), (k, b.k())] {
            if !p.is_null() {
                // SAFETY: non-null and writable per the contract.
                unsafe { *p = v };
            }
        }
        Ok(())
    })
}

/// Model with `W` drawn i.i.d. `N(0, xi²)` of size `2·dim × 2·dim`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn cotsim_model_init(
    dim: usize,
    xi: f64,
    seed: u64,
    out: *mut *mut CotsimModel,
) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let m = AttentionModel::init(dim, xi, seed)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(CotsimModel(m))) };
        Ok(())
    })
}

/// Load a JSON checkpoint written by the CLI or [`cotsim_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_model_load(path: *const c_char, out: *mut *mut CotsimModel) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        // SAFETY: per the contract above.
        let path = unsafe { path_arg(path) }?;
        let m = Checkpoint::load(&path)?.to_model()?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(CotsimModel(m))) };
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cotsim_model_save(
    model: *const CotsimModel,
    k: usize,
    basis_seed: u64,
    path: *const c_char,
) -> CotsimStatus {
    guard(|| {
        // SAFETY: per the contract above.
        let m = &unsafe { borrow(model, "model") }?.0;
        let path = unsafe { path_arg(path) }?;
        Checkpoint::from_model(m, k, basis_seed).save(&path)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cotsim_model_free(model: *mut CotsimModel) {
    if !model.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Copy `W` row-major into `buf`, which must hold `len ≥ (2·dim)²` doubles.
/// With a null `buf` only `needed` is written.
///
/// # Safety
/// `model` must be live, `buf` null or valid for `len` doubles, `needed`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_model_weights(
    model: *const CotsimModel,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> CotsimStatus {
    guard(|| {
        // SAFETY: per the contract above.
        let w = unsafe { borrow(model, "model") }?.0.w();
        let n = w.len();
        if !needed.is_null() {
            // SAFETY: non-null and writable.
            unsafe { *needed = n };
        }
        if buf.is_null() {
            return Ok(());
        }
        if len < n {
            return Err(fail(CotsimStatus::BufferTooSmall, &format!("need {n} doubles, got {len}")));
        }
        // SAFETY: `buf` is valid for `len ≥ n` doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(buf, n) };
        let cols = w.ncols();
        for (r, row) in w.row_iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                dst[r * cols + c] = *v;
            }
        }
        Ok(())
    })
}

/// Transition model for the cyclic task of `perm` (length `n`, 0-based)
/// over `k` steps, with trajectory accuracy `tau` and primacy `rho`.
/// `coherent = 1` aligns the runner-up columns so single-step errors share
/// one wrong final label.
///
/// # Safety
/// `perm` must be valid for `n` entries; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_transition_new(
    perm: *const usize,
    n: usize,
    k: usize,
    tau: f64,
    rho: f64,
    coherent: c_int,
    seed: u64,
    out: *mut *mut CotsimTransition,
) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if perm.is_null() {
            return Err(fail(CotsimStatus::NullPointer, "perm is null"));
        }
        // SAFETY: `perm` is valid for `n` entries.
        let perm = unsafe { std::slice::from_raw_parts(perm, n) };
        let task = make_cyclic_task(perm, k)?;
        let layout = if coherent != 0 {
            RunnerUpLayout::Coherent
        } else {
            RunnerUpLayout::Random
        };
        let t = make_transition_model(
            &task,
            &correct_probs_for_tau(tau, k),
            rho,
            layout,
            &mut rng::seeded(seed),
        )?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(CotsimTransition(t))) };
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cotsim_transition_free(t: *mut CotsimTransition) {
    if !t.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(t) });
    }
}

/// # Safety
/// `t` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_transition_stats(t: *const CotsimTransition, out: *mut CotsimStats) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        // SAFETY: per the contract above.
        let s = unsafe { borrow(t, "transition") }?.0.stats()?;
        // SAFETY: checked non-null above.
        unsafe {
            *out = CotsimStats {
                tau: s.tau,
                tau_o: s.tau_o,
                rho: s.rho,
                rho_o: s.rho_o,
                condition1_holds: c_int::from(s.condition1.holds),
            }
        };
        Ok(())
    })
}

/// `c · (α'·τ·ρ)⁻² · log M` testing examples for CoT.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_cot_bound(
    alpha_prime: f64,
    tau: f64,
    rho: f64,
    m: usize,
    constant: f64,
    out: *mut f64,
) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let v = Bound::CotTest { alpha_prime, tau, rho, m }.evaluate(constant)?;
        // SAFETY: checked non-null above.
        unsafe { *out = v };
        Ok(())
    })
}

/// `c · (α'·τ_o·ρ_o)⁻² · log M` testing examples for ICL.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_icl_bound(
    alpha_prime: f64,
    tau_o: f64,
    rho_o: f64,
    m: usize,
    constant: f64,
    out: *mut f64,
) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let v = Bound::IclTest { alpha_prime, tau_o, rho_o, m }.evaluate(constant)?;
        // SAFETY: checked non-null above.
        unsafe { *out = v };
        Ok(())
    })
}

#[derive(Clone, Copy)]
enum Mode {
    Cot,
    Icl,
}

unsafe fn estimate(
    mode: Mode,
    model: *const CotsimModel,
    basis: *const CotsimBasis,
    t: *const CotsimTransition,
    params: *const CotsimEvalParams,
    out: *mut CotsimErrorEstimate,
) -> CotsimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        // SAFETY: the public wrappers forward their contracts.
        let (m, b, t, p) = unsafe {
            (
                &borrow(model, "model")?.0,
                &borrow(basis, "basis")?.0,
                &borrow(t, "transition")?.0,
                *borrow(params, "params")?,
            )
        };
        let cfg = EvalConfig {
            n_queries: p.n_queries,
            l_ts: p.l_ts,
            alpha_prime: p.alpha_prime,
            noise: p.noise,
            seed: p.seed,
        };
        let e = match mode {
            Mode::Cot => inference::cot_error(m, b, t, &cfg)?,
            Mode::Icl => inference::icl_error(m, b, t, &cfg)?,
        };
        // SAFETY: checked non-null above.
        unsafe {
            *out = CotsimErrorEstimate {
                mean: e.mean,
                std_error: e.stderr,
                ties: e.ties,
            }
        };
        Ok(())
    })
}

/// Monte-Carlo CoT error of `model` on prompts built from `t`.
///
/// # Safety
/// All handles must be live; `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_cot_error(
    model: *const CotsimModel,
    basis: *const CotsimBasis,
    t: *const CotsimTransition,
    params: *const CotsimEvalParams,
    out: *mut CotsimErrorEstimate,
) -> CotsimStatus {
    // SAFETY: forwarded.
    unsafe { estimate(Mode::Cot, model, basis, t, params, out) }
}

/// Monte-Carlo ICL error of `model` on prompts built from `t`.
///
/// # Safety
/// All handles must be live; `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotsim_icl_error(
    model: *const CotsimModel,
    basis: *const CotsimBasis,
    t: *const CotsimTransition,
    params: *const CotsimEvalParams,
    out: *mut CotsimErrorEstimate,
) -> CotsimStatus {
    // SAFETY: forwarded.
    unsafe { estimate(Mode::Icl, model, basis, t, params, out) }
}
