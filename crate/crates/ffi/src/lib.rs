//! C interface to `erm-ipm`.
//!
//! Every function returns an [`ErmStatus`]. On failure the message is kept per thread
//! and read with [`erm_last_error`]. Handles are opaque and released with the matching
//! `_free` function; passing null to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use erm_ipm::dynsparsifier::{DecrementalConfig, DynamicSparsifier, RowId};
use erm_ipm::frontend::{instance_from_json, load_instance, ErmInstance};
use erm_ipm::ipm::{solve, IpmConfig, Mode, Profile, SolveReport};
use erm_ipm::linalg::exact_leverage;
use erm_ipm::{DenseMatrix, ErmError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    DimensionMismatch = 4,
    NotPositiveDefinite = 5,
    Numerical = 6,
    Invariant = 7,
    Io = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErmMode {
    Exact = 0,
    Sketched = 1,
}

/// A loaded standard-form instance.
pub struct ErmProblem {
    inner: ErmInstance,
}

/// Result of a solve.
pub struct ErmSolution {
    inner: SolveReport,
}

/// Leverage-score sparsifier under row insertions and deletions.
pub struct ErmSparsifier {
    inner: DynamicSparsifier,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &ErmError) -> ErmStatus {
    match e {
        ErmError::DimensionMismatch { .. } | ErmError::IndexOutOfRange { .. } => ErmStatus::DimensionMismatch,
        ErmError::NotPositiveDefinite { .. } => ErmStatus::NotPositiveDefinite,
        ErmError::RowNormBound { .. } | ErmError::InvalidArgument(_) | ErmError::NotInterior { .. } => {
            ErmStatus::InvalidArgument
        }
        ErmError::Validation { .. } => ErmStatus::Validation,
        ErmError::Numerical(_) => ErmStatus::Numerical,
        ErmError::Invariant(_) => ErmStatus::Invariant,
        ErmError::Io(_) => ErmStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ErmStatus, String)>) -> ErmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ErmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            ErmStatus::Internal
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (ErmStatus, String)>;
}

impl<T> IntoFfi<T> for erm_ipm::Result<T> {
    fn ffi(self) -> Result<T, (ErmStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (ErmStatus, String) {
    (ErmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ErmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ErmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (ErmStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (ErmStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn erm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn erm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an instance file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erm_problem_load(path: *const c_char, out: *mut *mut ErmProblem) -> ErmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = load_instance(Path::new(path)).ffi()?;
        *out = Box::into_raw(Box::new(ErmProblem { inner }));
        Ok(())
    })
}

/// Parses an instance from JSON text. Sidecar paths resolve against the working directory.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erm_problem_from_json(json: *const c_char, out: *mut *mut ErmProblem) -> ErmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let inner = instance_from_json(text, None).ffi()?;
        *out = Box::into_raw(Box::new(ErmProblem { inner }));
        Ok(())
    })
}

/// Writes `n` (variables), `d` (constraints) and `m` (blocks). Any output may be null.
///
/// # Safety
/// `problem` must come from this library; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn erm_problem_dims(
    problem: *const ErmProblem,
    n: *mut usize,
    d: *mut usize,
    m: *mut usize,
) -> ErmStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        for (ptr, v) in [(n, p.n()), (d, p.d()), (m, p.m())] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn erm_problem_free(problem: *mut ErmProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solves to additive accuracy `eps` with the aggressive parameter profile.
///
/// # Safety
/// `problem` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn erm_solve(
    problem: *const ErmProblem,
    eps: f64,
    mode: ErmMode,
    seed: u64,
    out: *mut *mut ErmSolution,
) -> ErmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        if !(eps > 0.0) {
            return Err((ErmStatus::InvalidArgument, format!("eps must be positive, got {eps}")));
        }
        let mode = match mode {
            ErmMode::Exact => Mode::Exact,
            ErmMode::Sketched => Mode::Sketched,
        };
        let cfg = IpmConfig::for_instance(p, Profile::Aggressive, mode).with_seed(seed);
        let inner = solve(p, eps, cfg).ffi()?;
        *out = Box::into_raw(Box::new(ErmSolution { inner }));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from this library; `objective` must be valid.
#[no_mangle]
pub unsafe extern "C" fn erm_solution_objective(solution: *const ErmSolution, objective: *mut f64) -> ErmStatus {
    guard(|| {
        let s = &solution.as_ref().ok_or_else(|| null("solution"))?.inner;
        *out_arg(objective, "objective")? = s.objective;
        Ok(())
    })
}

/// Iteration count and whether the target accuracy was reached (1) or the cap hit (0).
///
/// # Safety
/// `solution` must come from this library; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn erm_solution_status(
    solution: *const ErmSolution,
    iterations: *mut usize,
    converged: *mut i32,
) -> ErmStatus {
    guard(|| {
        let s = &solution.as_ref().ok_or_else(|| null("solution"))?.inner;
        if let Some(r) = iterations.as_mut() {
            *r = s.iterations;
        }
        if let Some(r) = converged.as_mut() {
            *r = s.converged as i32;
        }
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> Result<(), (ErmStatus, String)> {
    if let Some(w) = written.as_mut() {
        *w = src.len();
    }
    if buf.is_null() {
        return if len == 0 { Ok(()) } else { Err(null("buf")) };
    }
    if len < src.len() {
        return Err((
            ErmStatus::DimensionMismatch,
            format!("buffer holds {len} values, {} required", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the primal point into `buf`. With `buf` null and `len` 0 only the length is reported.
///
/// # Safety
/// `buf` must hold `len` doubles; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn erm_solution_x(
    solution: *const ErmSolution,
    buf: *mut f64,
    len: usize,
    required: *mut usize,
) -> ErmStatus {
    guard(|| {
        let s = &solution.as_ref().ok_or_else(|| null("solution"))?.inner;
        copy_out(&s.x, buf, len, required)
    })
}

/// Copies the dual point, as [`erm_solution_x`].
///
/// # Safety
/// `buf` must hold `len` doubles; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn erm_solution_y(
    solution: *const ErmSolution,
    buf: *mut f64,
    len: usize,
    required: *mut usize,
) -> ErmStatus {
    guard(|| {
        let s = &solution.as_ref().ok_or_else(|| null("solution"))?.inner;
        copy_out(&s.y, buf, len, required)
    })
}

/// # Safety
/// `solution` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn erm_solution_free(solution: *mut ErmSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Exact leverage scores of the row-major `rows x cols` matrix `a`.
///
/// # Safety
/// `a` must hold `rows * cols` doubles and `out` `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn erm_exact_leverage(a: *const f64, rows: usize, cols: usize, out: *mut f64) -> ErmStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or((ErmStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
        let data = slice_arg(a, len, "a")?.to_vec();
        let m = DenseMatrix::from_row_major(rows, cols, data).ffi()?;
        let lev = exact_leverage(&m, 0.0).ffi()?;
        if rows > 0 && out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(lev.as_ptr(), out, rows);
        Ok(())
    })
}

/// New empty sparsifier over rows of width `dim` with squared row norms at most `kappa`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn erm_sparsifier_new(
    dim: usize,
    kappa: f64,
    seed: u64,
    out: *mut *mut ErmSparsifier,
) -> ErmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = DynamicSparsifier::new(dim, kappa, seed, DecrementalConfig::default()).ffi()?;
        *out = Box::into_raw(Box::new(ErmSparsifier { inner }));
        Ok(())
    })
}

/// Inserts `count` row-major rows and writes their ids to `ids`.
///
/// # Safety
/// `rows` must hold `count * dim` doubles and `ids` `count` values.
#[no_mangle]
pub unsafe extern "C" fn erm_sparsifier_insert(
    sparsifier: *mut ErmSparsifier,
    rows: *const f64,
    count: usize,
    dim: usize,
    ids: *mut u64,
) -> ErmStatus {
    guard(|| {
        let s = &mut sparsifier.as_mut().ok_or_else(|| null("sparsifier"))?.inner;
        let len = count
            .checked_mul(dim)
            .ok_or((ErmStatus::InvalidArgument, "count * dim overflows".to_string()))?;
        let data = slice_arg(rows, len, "rows")?;
        if count > 0 && ids.is_null() {
            return Err(null("ids"));
        }
        let batch: Vec<Vec<f64>> = if dim == 0 {
            vec![Vec::new(); count]
        } else {
            data.chunks_exact(dim).map(<[f64]>::to_vec).collect()
        };
        let new = s.insert_batch(&batch).ffi()?;
        for (k, id) in new.iter().enumerate() {
            *ids.add(k) = id.0;
        }
        Ok(())
    })
}

/// Deletes the row with id `id`.
///
/// # Safety
/// `sparsifier` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn erm_sparsifier_delete(sparsifier: *mut ErmSparsifier, id: u64) -> ErmStatus {
    guard(|| {
        let s = &mut sparsifier.as_mut().ok_or_else(|| null("sparsifier"))?.inner;
        s.delete(RowId(id)).ffi()
    })
}

/// Current leverage-score overestimate of a live row.
///
/// # Safety
/// `sparsifier` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn erm_sparsifier_overestimate(
    sparsifier: *const ErmSparsifier,
    id: u64,
    out: *mut f64,
) -> ErmStatus {
    guard(|| {
        let s = &sparsifier.as_ref().ok_or_else(|| null("sparsifier"))?.inner;
        let v = s
            .overestimate(RowId(id))
            .ok_or((ErmStatus::InvalidArgument, format!("row id {id} is not live")))?;
        *out_arg(out, "out")? = v;
        Ok(())
    })
}

/// Number of live rows.
///
/// # Safety
/// `sparsifier` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn erm_sparsifier_len(sparsifier: *const ErmSparsifier, out: *mut usize) -> ErmStatus {
    guard(|| {
        let s = &sparsifier.as_ref().ok_or_else(|| null("sparsifier"))?.inner;
        *out_arg(out, "out")? = s.len();
        Ok(())
    })
}

/// # Safety
/// `sparsifier` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn erm_sparsifier_free(sparsifier: *mut ErmSparsifier) {
    if !sparsifier.is_null() {
        drop(Box::from_raw(sparsifier));
    }
}
