//! C interface to `phasehit`.
//!
//! Models are opaque `PhModel` handles created by one of the `ph_model_*`
//! constructors and released with [`ph_model_free`]. Every other function
//! returns a [`PhStatus`] and writes its result through an out-pointer. On
//! failure, [`ph_last_error_message`] describes the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use phasehit::hitting::{joint_density, survival_single, DensityQuery};
use phasehit::mcore::{IntensityModel, TargetKey};
use phasehit::modelfile::{example_lattice_model, load_model, parse_model};
use phasehit::partitions::{Region, TimeVector};
use phasehit::simkit::{default_horizon, estimate_region_prob};
use phasehit::tails::{equality_prob, parse_constraints, raw_probability, TailEngine};
use phasehit::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidModel = 4,
    Domain = 5,
    Numeric = 6,
    Inconsistent = 7,
    Io = 8,
    Panic = 9,
}

/// An immutable model.
pub struct PhModel {
    model: IntensityModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PhStatus {
    match e {
        Error::Parse { .. } => PhStatus::Parse,
        Error::Partition(phasehit::partitions::PartitionError::Parse { .. }) => PhStatus::Parse,
        Error::Model(_) | Error::NotAbsorbing { .. } | Error::InitialMassOnTargets { .. } => PhStatus::InvalidModel,
        Error::Numeric(_) => PhStatus::Numeric,
        Error::Inconsistent(_) | Error::Contradiction(_) | Error::Overlap => PhStatus::Inconsistent,
        Error::Io(_) => PhStatus::Io,
        _ => PhStatus::Domain,
    }
}

struct Failure(PhStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> PhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PhStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PhStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(PhStatus::NullPointer, "null pointer argument".into())
}

unsafe fn utf8<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PhStatus::InvalidUtf8, "string is not valid UTF-8".into()))
}

unsafe fn model<'a>(m: *const PhModel) -> Result<&'a IntensityModel, Failure> {
    m.as_ref().map(|h| &h.model).ok_or_else(null)
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn emit(out: *mut *mut PhModel, m: IntensityModel) -> Result<(), Failure> {
    write(out, Box::into_raw(Box::new(PhModel { model: m })))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ph_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a model from TOML text.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_from_toml(text: *const c_char, out: *mut *mut PhModel) -> PhStatus {
    guard(|| {
        let m = parse_model(utf8(text)?, "<string>")?;
        emit(out, m)
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_from_path(path: *const c_char, out: *mut *mut PhModel) -> PhStatus {
    guard(|| {
        let m = load_model(utf8(path)?)?;
        emit(out, m)
    })
}

/// The bundled 27-state lattice model.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_example(out: *mut *mut PhModel) -> PhStatus {
    guard(|| emit(out, example_lattice_model()))
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `m` must come from a `ph_model_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ph_model_free(m: *mut PhModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of states.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_n_states(m: *const PhModel, out: *mut usize) -> PhStatus {
    guard(|| write(out, model(m)?.n_states()))
}

/// Number of targets.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_n_targets(m: *const PhModel, out: *mut usize) -> PhStatus {
    guard(|| write(out, model(m)?.targets().len()))
}

/// Joint density of the hitting times of `keys[i]` at `times[i]`; the region
/// is read off the ties in `times`.
///
/// # Safety
/// `keys` and `times` must hold `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_density(
    m: *const PhModel,
    keys: *const u32,
    times: *const f64,
    len: usize,
    out: *mut f64,
) -> PhStatus {
    guard(|| {
        let model = model(m)?;
        let keys: &[TargetKey] = slice(keys, len)?;
        let times = slice(times, len)?;
        let t = TimeVector::new(keys.iter().copied().zip(times.iter().copied())).map_err(Error::from)?;
        let v = joint_density(model, &DensityQuery::new(t))?;
        write(out, v.value)
    })
}

/// Joint density on `region` (e.g. `"{2,3}<{1}"`) at block times
/// `block_times[0..len]`.
///
/// # Safety
/// `region` must be a nul-terminated string, `block_times` must hold `len`
/// elements and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_density_in_region(
    m: *const PhModel,
    region: *const c_char,
    block_times: *const f64,
    len: usize,
    out: *mut f64,
) -> PhStatus {
    guard(|| {
        let model = model(m)?;
        let region: Region = utf8(region)?.parse().map_err(Error::from)?;
        let q = DensityQuery::from_block_times(region, slice(block_times, len)?)?;
        write(out, joint_density(model, &q)?.value)
    })
}

/// Probability of a constraint expression such as
/// `"tau(1) > 0.5 && tau(2) == tau(3)"`.
///
/// # Safety
/// `expr` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_tail(m: *const PhModel, expr: *const c_char, out: *mut f64) -> PhStatus {
    guard(|| {
        let model = model(m)?;
        let constraints = parse_constraints(utf8(expr)?)?;
        let p = raw_probability(&TailEngine::new(model), &constraints)?;
        write(out, p)
    })
}

/// `P(τ_{k1} = τ_{k2} < ∞)` from the first-step equality system.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_equality_prob(m: *const PhModel, k1: u32, k2: u32, out: *mut f64) -> PhStatus {
    guard(|| {
        let model = model(m)?;
        let q = equality_prob(model, k1, k2)?;
        write(out, (model.alpha() * q)[0])
    })
}

/// `P(τ_k > u)`.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_survival(m: *const PhModel, key: u32, u: f64, out: *mut f64) -> PhStatus {
    guard(|| {
        let model = model(m)?;
        let g = model.target(key).map_err(Error::from)?;
        write(out, survival_single(model, g, u)?.survival)
    })
}

/// Simulated frequency of `τ ∈ region` over `n` paths. A `horizon` of zero or
/// less selects the default horizon.
///
/// # Safety
/// `region` must be a nul-terminated string; `value` and `stderr_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_simulate_region(
    m: *const PhModel,
    region: *const c_char,
    n: usize,
    horizon: f64,
    seed: u64,
    value: *mut f64,
    stderr_out: *mut f64,
) -> PhStatus {
    guard(|| {
        let model = model(m)?;
        if value.is_null() || stderr_out.is_null() {
            return Err(null());
        }
        let region: Region = utf8(region)?.parse().map_err(Error::from)?;
        let h = if horizon > 0.0 { horizon } else { default_horizon(model) };
        let e = estimate_region_prob(model, &region, n, h, seed)?;
        write(value, e.value)?;
        write(stderr_out, e.stderr)
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ph_version() -> *const c_char {
    static VERSION: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();
    VERSION.as_ptr().cast()
}
