//! C interface to the modspec diagonalizer.
//!
//! Objects are opaque handles created by `*_new`/`*_from_file`/
//! `modspec_diagonalize` and released with the matching `*_free`. Every
//! fallible call returns a [`ModspecStatus`]; on failure the message is
//! available from [`modspec_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use modspec::algebra::ParameterGrid;
use modspec::diag::{diagonalize, DiagonalizeOptions, ModuleOperator, SpectralDecomposition};
use modspec::error::Error;
use modspec::io::read_operator_file;
use modspec::linalg::{eigh, CMat, C64};
use modspec::tol;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModspecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NotHermitian = 4,
    NotPositive = 5,
    Parse = 6,
    Io = 7,
    Hypothesis = 8,
    OutOfRange = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Self-adjoint operator on a truncated Hilbert module.
pub struct ModspecOperator(ModuleOperator);

/// Result of [`modspec_diagonalize`].
pub struct ModspecDecomposition(SpectralDecomposition);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn fail(status: ModspecStatus, msg: impl Into<String>) -> ModspecStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> ModspecStatus {
    match e {
        Error::GridMismatch(_) | Error::ShapeMismatch(_) => ModspecStatus::ShapeMismatch,
        Error::InvalidGrid(_) | Error::InvalidParameter(_) => ModspecStatus::InvalidArgument,
        Error::NotHermitian { .. } => ModspecStatus::NotHermitian,
        Error::NotPositive { .. } => ModspecStatus::NotPositive,
        Error::Parse { .. } => ModspecStatus::Parse,
        Error::Io(_) => ModspecStatus::Io,
        _ => ModspecStatus::Hypothesis,
    }
}

fn guard(f: impl FnOnce() -> Result<(), ModspecStatus>) -> ModspecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ModspecStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(ModspecStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> ModspecStatus {
    fail(status_of(&e), e.to_string())
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), ModspecStatus> {
    if p.is_null() {
        Err(fail(ModspecStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn modspec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn modspec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an operator from `points` fibers. Fiber `i` has matrix size
/// `len * dims[i]`; its entries are read row-major from `re` and `im`, with
/// the fibers stored one after another. Weights must sum to one.
///
/// # Safety
/// `weights` and `dims` must point to `points` elements; `re` and `im` to
/// `Σ (len·dims[i])²` elements each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modspec_operator_new(
    points: usize,
    weights: *const f64,
    dims: *const usize,
    len: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut ModspecOperator,
) -> ModspecStatus {
    guard(|| {
        non_null(weights, "weights")?;
        non_null(dims, "dims")?;
        non_null(re, "re")?;
        non_null(im, "im")?;
        non_null(out, "out")?;
        if points == 0 || len == 0 {
            return Err(fail(ModspecStatus::InvalidArgument, "points and len must be positive"));
        }
        let weights = std::slice::from_raw_parts(weights, points).to_vec();
        let dims = std::slice::from_raw_parts(dims, points).to_vec();
        let total: usize = dims.iter().map(|&d| (len * d) * (len * d)).sum();
        let re = std::slice::from_raw_parts(re, total);
        let im = std::slice::from_raw_parts(im, total);
        let labels = (0..points).map(|i| i as f64).collect();
        let grid = ParameterGrid::new(labels, weights, dims.clone()).map_err(lib_err)?;
        let mut offset = 0;
        let fibers = dims
            .iter()
            .map(|&d| {
                let size = len * d;
                let m = CMat::from_fn(size, size, |r, c| {
                    let k = offset + r * size + c;
                    C64::new(re[k], im[k])
                });
                offset += size * size;
                m
            })
            .collect();
        let op = ModuleOperator::with_tolerance(&grid, len, fibers, tol::HERMITIAN_INPUT).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ModspecOperator(op)));
        Ok(())
    })
}

/// Loads an operator field file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modspec_operator_from_file(path: *const c_char, out: *mut *mut ModspecOperator) -> ModspecStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(ModspecStatus::InvalidArgument, "path is not UTF-8"))?;
        let op = read_operator_file(Path::new(path)).and_then(|f| f.to_operator()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ModspecOperator(op)));
        Ok(())
    })
}

/// # Safety
/// `op` must come from this library and not have been freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn modspec_operator_free(op: *mut ModspecOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Number of grid points and truncation length.
///
/// # Safety
/// `op` must be a live handle; `points` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modspec_operator_shape(
    op: *const ModspecOperator,
    points: *mut usize,
    len: *mut usize,
) -> ModspecStatus {
    guard(|| {
        non_null(op, "op")?;
        non_null(points, "points")?;
        non_null(len, "len")?;
        let op = &(*op).0;
        *points = op.grid().len();
        *len = op.len();
        Ok(())
    })
}

/// Runs the diagonalizer. `max_terms = 0` means the full rank budget.
///
/// # Safety
/// `op` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modspec_diagonalize(
    op: *const ModspecOperator,
    target: f64,
    max_terms: usize,
    out: *mut *mut ModspecDecomposition,
) -> ModspecStatus {
    guard(|| {
        non_null(op, "op")?;
        non_null(out, "out")?;
        let opts = DiagonalizeOptions {
            target,
            max_terms: (max_terms > 0).then_some(max_terms),
            ..Default::default()
        };
        let dec = diagonalize(&(*op).0, &opts).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ModspecDecomposition(dec)));
        Ok(())
    })
}

/// # Safety
/// `dec` must come from this library and not have been freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn modspec_decomposition_free(dec: *mut ModspecDecomposition) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// Counts of positive and negative terms.
///
/// # Safety
/// `dec` must be a live handle; `positive` and `negative` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modspec_decomposition_terms(
    dec: *const ModspecDecomposition,
    positive: *mut usize,
    negative: *mut usize,
) -> ModspecStatus {
    guard(|| {
        non_null(dec, "dec")?;
        non_null(positive, "positive")?;
        non_null(negative, "negative")?;
        *positive = (*dec).0.terms.len();
        *negative = (*dec).0.negative.len();
        Ok(())
    })
}

/// Writes 1 to `passed` when every certificate passed, else 0.
///
/// # Safety
/// `dec` must be a live handle; `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modspec_decomposition_certified(dec: *const ModspecDecomposition, passed: *mut i32) -> ModspecStatus {
    guard(|| {
        non_null(dec, "dec")?;
        non_null(passed, "passed")?;
        *passed = i32::from((*dec).0.certificates.passed());
        Ok(())
    })
}

/// Ascending spectrum of the eigenvalue field of a term at one grid point.
/// Positive terms are indexed `0..positive`, negative terms follow. Writes
/// the count to `written`; fails with `BufferTooSmall` (count still written)
/// when `capacity` is insufficient.
///
/// # Safety
/// `dec` must be a live handle; `values` must hold `capacity` doubles;
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modspec_decomposition_eigenvalues(
    dec: *const ModspecDecomposition,
    term: usize,
    point: usize,
    values: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> ModspecStatus {
    guard(|| {
        non_null(dec, "dec")?;
        non_null(written, "written")?;
        let d = &(*dec).0;
        let t = d
            .terms
            .iter()
            .chain(&d.negative)
            .nth(term)
            .ok_or_else(|| fail(ModspecStatus::OutOfRange, format!("term {term} out of range")))?;
        if point >= d.grid().len() {
            return Err(fail(ModspecStatus::OutOfRange, format!("point {point} out of range")));
        }
        let spec = eigh(t.eigenvalue.fiber(point)).values;
        *written = spec.len();
        if capacity < spec.len() {
            return Err(fail(ModspecStatus::BufferTooSmall, format!("need {} values", spec.len())));
        }
        non_null(values, "values")?;
        ptr::copy_nonoverlapping(spec.as_ptr(), values, spec.len());
        Ok(())
    })
}
