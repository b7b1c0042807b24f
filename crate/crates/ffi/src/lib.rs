//! C ABI over the perfect-sampling core.
//!
//! Models are opaque handles created by `ps_model_*_new` and released with
//! [`ps_model_free`]. Every entry point returns a [`PsStatus`]; the message
//! of the most recent failure on the calling thread is available through
//! [`ps_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use perfect_sampling::cftp::{cftp_bounding, cftp_bruteforce, cftp_monotone, BackoffSchedule};
use perfect_sampling::couplers::SliceChain;
use perfect_sampling::fill::{fill_run, reverse_kernel};
use perfect_sampling::models::{DecreasingDensity, Ising, LadderWalk, NonMonotoneWalk};
use perfect_sampling::{Error, FiniteSpace, KeyedNoise, Recursion};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CapBreach = 3,
    OracleUnavailable = 4,
    Unsupported = 5,
    Internal = 6,
    Panic = 7,
}

/// Sampler selector for [`ps_sample`] and [`ps_sample_many`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsSampler {
    CftpBruteforce = 0,
    CftpMonotone = 1,
    CftpBounding = 2,
    Fill = 3,
}

enum Model {
    Ladder(LadderWalk),
    Walk3(NonMonotoneWalk),
    Ising(Ising),
    Slice(SliceChain),
}

/// Opaque model handle.
pub struct PsModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::OracleUnavailable(_) => PsStatus::OracleUnavailable,
        e if e.is_cap_breach() => PsStatus::CapBreach,
        Error::InvalidParameter(_) | Error::InvalidState(_) | Error::InvalidDistribution(_) => {
            PsStatus::InvalidArgument
        }
        _ => PsStatus::Internal,
    }
}

fn guard<F: FnOnce() -> Result<(), (PsStatus, String)>>(f: F) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            PsStatus::Panic
        }
    }
}

fn core<T>(r: perfect_sampling::Result<T>) -> Result<T, (PsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (PsStatus, String) {
    (PsStatus::NullPointer, format!("{what} is null"))
}

fn new_model(
    out: *mut *mut PsModel,
    build: impl FnOnce() -> perfect_sampling::Result<Model>,
) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = core(build())?;
        // SAFETY: `out` is non-null and the caller promises it is writable.
        unsafe { *out = Box::into_raw(Box::new(PsModel { inner })) };
        Ok(())
    })
}

/// Ladder walk on {0.25, 0.5, 2, 4} moving up with probability `p`.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_model_ladder_new(p: f64, out: *mut *mut PsModel) -> PsStatus {
    new_model(out, || LadderWalk::new(p).map(Model::Ladder))
}

/// Non-monotone three-state walk with parameter `p`.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_model_walk3_new(p: f64, out: *mut *mut PsModel) -> PsStatus {
    new_model(out, || NonMonotoneWalk::new(p).map(Model::Walk3))
}

/// Ising model on a `side × side` grid; draws report `|m|` per site.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_model_ising_new(
    side: u32,
    beta: f64,
    out: *mut *mut PsModel,
) -> PsStatus {
    new_model(out, || Ising::new(side as usize, beta).map(Model::Ising))
}

/// Slice chain for `exp(-y)` truncated to `(0, c)`.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_model_trunc_exp_new(c: f64, out: *mut *mut PsModel) -> PsStatus {
    new_model(out, || {
        DecreasingDensity::truncated_exponential(c).map(|d| Model::Slice(SliceChain::new(d)))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from `ps_model_*_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(model: *mut PsModel) {
    if !model.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

fn unsupported(sampler: PsSampler) -> (PsStatus, String) {
    (
        PsStatus::Unsupported,
        format!("sampler {sampler:?} does not apply to this model"),
    )
}

fn draw_one(
    model: &Model,
    sampler: PsSampler,
    seed: u64,
    replicate: u64,
    s: &BackoffSchedule,
) -> Result<f64, (PsStatus, String)> {
    fn keyed<M: Recursion>(m: &M, seed: u64, r: u64) -> KeyedNoise {
        KeyedNoise::new(seed, r, m.noise_shape())
    }
    match (model, sampler) {
        (Model::Ladder(m), PsSampler::CftpBruteforce) => {
            core(cftp_bruteforce(m, &keyed(m, seed, replicate), s)).map(|c| m.value(&c.draw))
        }
        (Model::Ladder(m), PsSampler::CftpMonotone) => {
            core(cftp_monotone(m, &keyed(m, seed, replicate), s)).map(|c| m.value(&c.draw))
        }
        (Model::Ladder(m), PsSampler::Fill) => {
            let rev = core(reverse_kernel(&m.chain_spec()))?;
            core(fill_run(m, &rev, 8, seed, replicate, 32)).map(|f| m.value(&f.draw))
        }
        (Model::Walk3(m), PsSampler::CftpBruteforce) => {
            core(cftp_bruteforce(m, &keyed(m, seed, replicate), s)).map(|c| m.value(&c.draw))
        }
        (Model::Walk3(m), PsSampler::CftpBounding) => {
            core(cftp_bounding(m, &keyed(m, seed, replicate), s)).map(|c| m.value(&c.draw))
        }
        (Model::Ising(m), PsSampler::CftpMonotone) => {
            core(cftp_monotone(m, &keyed(m, seed, replicate), s)).map(|c| m.value(&c.draw))
        }
        (Model::Slice(m), PsSampler::CftpMonotone) => {
            core(cftp_monotone(m, &keyed(m, seed, replicate), s)).map(|c| m.value(&c.draw))
        }
        _ => Err(unsupported(sampler)),
    }
}

fn schedule(depth_cap: u64) -> Result<BackoffSchedule, (PsStatus, String)> {
    if depth_cap == 0 {
        Ok(BackoffSchedule::default())
    } else {
        core(BackoffSchedule::new(depth_cap))
    }
}

/// One exact draw on replicate stream `replicate`. `depth_cap` of 0 selects
/// the default cap; otherwise it must be a power of two.
///
/// # Safety
/// `model` must be a live handle and `out` writable for one `double`.
#[no_mangle]
pub unsafe extern "C" fn ps_sample(
    model: *const PsModel,
    sampler: PsSampler,
    seed: u64,
    replicate: u64,
    depth_cap: u64,
    out: *mut f64,
) -> PsStatus {
    guard(|| {
        if model.is_null() {
            return Err(null("model"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; the caller guarantees the handle is live.
        let m = unsafe { &(*model).inner };
        let v = draw_one(m, sampler, seed, replicate, &schedule(depth_cap)?)?;
        // SAFETY: checked non-null and writable per contract.
        unsafe { *out = v };
        Ok(())
    })
}

/// Draws on replicates `0..n` into `out[0..n]`. On failure the contents of
/// `out` are unspecified.
///
/// # Safety
/// `model` must be a live handle and `out` writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_sample_many(
    model: *const PsModel,
    sampler: PsSampler,
    seed: u64,
    n: usize,
    depth_cap: u64,
    out: *mut f64,
) -> PsStatus {
    guard(|| {
        if model.is_null() {
            return Err(null("model"));
        }
        if out.is_null() && n > 0 {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; the caller guarantees the handle is live.
        let m = unsafe { &(*model).inner };
        let s = schedule(depth_cap)?;
        for r in 0..n {
            let v = draw_one(m, sampler, seed, r as u64, &s)?;
            // SAFETY: `out` holds at least `n` doubles per contract.
            unsafe { *out.add(r) = v };
        }
        Ok(())
    })
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// or 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ps_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: `buf` is writable for `len` bytes and `n < len`.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn ps_status_name(status: PsStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        PsStatus::Ok => b"ok\0",
        PsStatus::NullPointer => b"null_pointer\0",
        PsStatus::InvalidArgument => b"invalid_argument\0",
        PsStatus::CapBreach => b"cap_breach\0",
        PsStatus::OracleUnavailable => b"oracle_unavailable\0",
        PsStatus::Unsupported => b"unsupported\0",
        PsStatus::Internal => b"internal\0",
        PsStatus::Panic => b"panic\0",
    };
    s.as_ptr() as *const c_char
}
