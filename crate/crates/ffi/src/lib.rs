//! C ABI over `coherence-core`.
//!
//! Every function returns a [`CoherenceStatus`] and writes results through
//! out-pointers. On failure, [`coherence_last_error`] gives a message for the
//! calling thread. Strings returned by the library must be released with
//! [`coherence_string_free`]; e-process handles with
//! [`coherence_eprocess_free`].

use coherence_core::composition::{attribute, certify_raw, residual};
use coherence_core::decision::exposure;
use coherence_core::io::{to_json_line, CertificateOutput, CompositionRecord, RelationRef};
use coherence_core::monitor::{optimal_lambda, Decision, EProcess, StreamStep};
use coherence_core::projection::{project_relation, DykstraConfig};
use coherence_core::{CoherenceError, Relation};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoherenceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    DimensionMismatch = 4,
    Infeasible = 5,
    ParseError = 6,
    Unsupported = 7,
    Internal = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &CoherenceError) -> CoherenceStatus {
    match e {
        CoherenceError::DimensionMismatch { .. } => CoherenceStatus::DimensionMismatch,
        CoherenceError::InfeasibleJoint => CoherenceStatus::Infeasible,
        CoherenceError::NoClosedForm(_)
        | CoherenceError::EnumerationBound { .. }
        | CoherenceError::TooManyVertices { .. }
        | CoherenceError::ProductStructured => CoherenceStatus::Unsupported,
        CoherenceError::Internal(_) => CoherenceStatus::Internal,
        _ => CoherenceStatus::InvalidArgument,
    }
}

/// Runs `f`, recording its error and containing panics.
fn guard(f: impl FnOnce() -> Result<(), (CoherenceStatus, String)>) -> CoherenceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoherenceStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside coherence library");
            CoherenceStatus::Panic
        }
    }
}

fn core_err(e: CoherenceError) -> (CoherenceStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(name: &str) -> (CoherenceStatus, String) {
    (CoherenceStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (CoherenceStatus, String)> {
    if p.is_null() {
        return Err(null_err(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (CoherenceStatus::InvalidUtf8, format!("`{name}` is not UTF-8: {e}")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (CoherenceStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_err(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn relation(kind: *const c_char, m: usize) -> Result<Relation, (CoherenceStatus, String)> {
    let kind = read_str(kind, "kind")?;
    RelationRef {
        kind: kind.to_string(),
        m: Some(m),
    }
    .resolve()
    .map_err(core_err)
}

/// Message for the last failed call on this thread, or null. The pointer is
/// owned by the library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn coherence_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn coherence_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Projects the `m`-coordinate quote `q` onto the polytope of relation
/// `kind` (`neg`, `and`, `or`, `partition`, `ladder`, `paraphrase`).
///
/// Writes `m` values to `out` and the L2 residual to `residual` (may be null).
///
/// # Safety
/// `q` and `out` must point to `m` doubles; `kind` must be a C string.
#[no_mangle]
pub unsafe extern "C" fn coherence_project(
    kind: *const c_char,
    m: usize,
    q: *const f64,
    out: *mut f64,
    residual: *mut f64,
) -> CoherenceStatus {
    guard(|| {
        let relation = relation(kind, m)?;
        let q = read_slice(q, m, "q")?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let r = project_relation(&relation, q, &DykstraConfig::default()).map_err(core_err)?;
        std::slice::from_raw_parts_mut(out, m).copy_from_slice(&r.projected);
        if !residual.is_null() {
            *residual = r.residual;
        }
        Ok(())
    })
}

/// Dutch-book exposure of quote `q` under relation `kind`.
///
/// # Safety
/// `q` must point to `m` doubles, `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn coherence_exposure(
    kind: *const c_char,
    m: usize,
    q: *const f64,
    out: *mut f64,
) -> CoherenceStatus {
    guard(|| {
        let relation = relation(kind, m)?;
        let q = read_slice(q, m, "q")?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = exposure(&relation, q).map_err(core_err)?;
        Ok(())
    })
}

/// Certifies one composition record given as JSON (the `certify` input
/// format) and returns the certificate as a newly allocated JSON string.
///
/// # Safety
/// `input` must be a C string; `out` must be writable. Free `*out` with
/// [`coherence_string_free`].
#[no_mangle]
pub unsafe extern "C" fn coherence_certify_json(input: *const c_char, out: *mut *mut c_char) -> CoherenceStatus {
    guard(|| {
        let text = read_str(input, "input")?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let rec: CompositionRecord = serde_json::from_str(text)
            .map_err(|e| (CoherenceStatus::ParseError, format!("malformed composition: {e}")))?;
        let comp = rec.spec().map_err(core_err)?;
        let config = DykstraConfig::default();
        let cert = if rec.raw {
            certify_raw(&comp, &rec.locals, &config)
        } else {
            residual(&comp, &rec.locals, &config)
        }
        .map_err(core_err)?;
        let attribution = attribute(&comp, &cert);
        let json = to_json_line(&CertificateOutput {
            id: rec.id,
            eps_star: cert.epsilon_star,
            exposure_bound: cert.exposure_bound,
            repaired: cert.repaired,
            binding: cert.binding,
            inputs_locally_coherent: cert.inputs_locally_coherent,
            composed: cert.composed,
            attribution,
        })
        .map_err(core_err)?;
        *out = CString::new(json).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// Growth-optimal bet size for an alternative of size `delta`.
#[no_mangle]
pub extern "C" fn coherence_optimal_lambda(delta: f64, m: u64, k_samples: u64) -> f64 {
    optimal_lambda(delta, m, k_samples)
}

/// Opaque e-process state.
pub struct CoherenceEProcess {
    inner: EProcess,
}

/// Creates an e-process watching the `n` significance levels in `alphas`.
///
/// # Safety
/// `alphas` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coherence_eprocess_new(
    alphas: *const f64,
    n: usize,
    out: *mut *mut CoherenceEProcess,
) -> CoherenceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let watch = read_slice(alphas, n, "alphas")?.to_vec();
        let inner = EProcess::new(watch).map_err(core_err)?;
        *out = Box::into_raw(Box::new(CoherenceEProcess { inner }));
        Ok(())
    })
}

unsafe fn handle<'a>(h: *mut CoherenceEProcess) -> Result<&'a mut EProcess, (CoherenceStatus, String)> {
    h.as_mut().map(|h| &mut h.inner).ok_or_else(|| null_err("handle"))
}

/// Feeds one step: squared residual, clique size and per-coordinate sample count.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn coherence_eprocess_update(
    h: *mut CoherenceEProcess,
    eps_sq: f64,
    m: u64,
    k_samples: u64,
) -> CoherenceStatus {
    guard(|| {
        let p = handle(h)?;
        let step = StreamStep::new(eps_sq, m, k_samples).map_err(core_err)?;
        p.update(&step).map_err(core_err)
    })
}

/// Current log of the mixture e-value.
///
/// # Safety
/// `h` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coherence_eprocess_log_e_mix(h: *mut CoherenceEProcess, out: *mut f64) -> CoherenceStatus {
    guard(|| {
        let p = handle(h)?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = p.log_e_mix();
        Ok(())
    })
}

/// Writes 1 to `reject` once the running e-value has reached `1/alpha`, else 0.
///
/// # Safety
/// `h` must be a live handle; `reject` writable.
#[no_mangle]
pub unsafe extern "C" fn coherence_eprocess_decide(
    h: *mut CoherenceEProcess,
    alpha: f64,
    reject: *mut u8,
) -> CoherenceStatus {
    guard(|| {
        let p = handle(h)?;
        if reject.is_null() {
            return Err(null_err("reject"));
        }
        *reject = u8::from(p.decide(alpha).map_err(core_err)? == Decision::RejectNull);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must come from [`coherence_eprocess_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coherence_eprocess_free(h: *mut CoherenceEProcess) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
