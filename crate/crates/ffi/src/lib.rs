//! C ABI over the `audiorec` harness.
//!
//! Conventions:
//! * every fallible function returns an [`ArStatus`]; on failure a message is
//!   kept per thread and read with [`ar_last_error`];
//! * handles are opaque pointers created by `*_load` / `*_new` and released
//!   by the matching `*_free`, which accepts NULL;
//! * strings returned through out-pointers are owned by the caller and must
//!   be released with [`ar_string_free`];
//! * panics never cross the boundary, they surface as `AR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use audiorec::config::RunConfig;
use audiorec::domain::EmbeddingTable;
use audiorec::eval::{bootstrap_significance, metrics_at_k};
use audiorec::ingest::{load_embeddings, pool_chunks, ChunkEmbeddingSet};
use audiorec::pipeline::run_pipeline;
use audiorec::report::render_report;
use audiorec::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed file contents or unparseable values.
    Format = 4,
    InvalidInput = 5,
    Config = 6,
    UnknownId = 7,
    Diverged = 8,
    /// Some (model, variant) pairs of a run failed.
    PartialFailure = 9,
    /// Every pair of a run failed.
    RunFailed = 10,
    Panic = 11,
}

/// Per-user ranking metrics at a cutoff K.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArMetrics {
    pub hitrate: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub precision: f64,
}

/// Opaque item embedding table.
pub struct ArEmbeddings(EmbeddingTable);

/// Opaque run configuration.
pub struct ArRunConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> ArStatus {
    match e {
        Error::Io { .. } => ArStatus::Io,
        Error::Format { .. } | Error::Parse(_) | Error::NonFinite { .. } | Error::Json(_) | Error::Csv(_) => ArStatus::Format,
        Error::UnknownId(_) => ArStatus::UnknownId,
        Error::Config(_) => ArStatus::Config,
        Error::Diverged(_) => ArStatus::Diverged,
        Error::EmptyIntersection { .. } | Error::Empty(_) | Error::InvalidInput(_) => ArStatus::InvalidInput,
    }
}

struct Fail(ArStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult = Result<ArStatus, Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> ArStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => {
            if s == ArStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            ArStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ArStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ArStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a PARE or CSV embedding table.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ar_embeddings_load(path: *const c_char, out: *mut *mut ArEmbeddings) -> ArStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let t = load_embeddings(path)?;
        *out = Box::into_raw(Box::new(ArEmbeddings(t)));
        Ok(ArStatus::Ok)
    })
}

/// Number of items, 0 for NULL.
///
/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ar_embeddings_n_items(h: *const ArEmbeddings) -> usize {
    h.as_ref().map_or(0, |h| h.0.n_items())
}

/// Vector width, 0 for NULL.
///
/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ar_embeddings_dim(h: *const ArEmbeddings) -> usize {
    h.as_ref().map_or(0, |h| h.0.dim())
}

/// Copies the vector of `item_id` into `out`, which holds `len` floats
/// (at least the table dim).
///
/// # Safety
/// `h` must be a live handle, `item_id` NUL-terminated, `out` writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn ar_embeddings_row(
    h: *const ArEmbeddings,
    item_id: *const c_char,
    out: *mut f32,
    len: usize,
) -> ArStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let id = str_arg(item_id, "item_id")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let row = h.0.row_by_id(id).ok_or_else(|| Fail::from(Error::UnknownId(id.into())))?;
        if len < row.len() {
            return Err(Fail(ArStatus::InvalidInput, format!("buffer holds {len} floats, need {}", row.len())));
        }
        std::slice::from_raw_parts_mut(out, row.len()).copy_from_slice(row);
        Ok(ArStatus::Ok)
    })
}

/// # Safety
/// `h` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_embeddings_free(h: *mut ArEmbeddings) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Mean-pools `n_chunks` row-major chunk vectors of width `dim` into `out`
/// (`dim` floats).
///
/// # Safety
/// `chunks` must hold `n_chunks * dim` floats and `out` `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn ar_pool_chunks(chunks: *const f32, n_chunks: usize, dim: usize, out: *mut f32) -> ArStatus {
    guard(|| {
        let n = n_chunks
            .checked_mul(dim)
            .ok_or_else(|| Fail(ArStatus::InvalidInput, "n_chunks * dim overflows".into()))?;
        let data = slice_arg(chunks, n, "chunks")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let set = ChunkEmbeddingSet {
            item_id: String::new(),
            dim,
            chunks: data.to_vec(),
        };
        let pooled = pool_chunks(&set)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&pooled);
        Ok(ArStatus::Ok)
    })
}

/// Metrics of one ranked list (item indices, best first) against the
/// relevant set.
///
/// # Safety
/// Arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ar_metrics_at_k(
    ranking: *const u32,
    n_ranking: usize,
    relevant: *const u32,
    n_relevant: usize,
    k: usize,
    out: *mut ArMetrics,
) -> ArStatus {
    guard(|| {
        let r = slice_arg(ranking, n_ranking, "ranking")?;
        let rel = slice_arg(relevant, n_relevant, "relevant")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = metrics_at_k(r, rel, k)?;
        *out = ArMetrics {
            hitrate: m.hitrate,
            recall: m.recall,
            ndcg: m.ndcg,
            mrr: m.mrr,
            precision: m.precision,
        };
        Ok(ArStatus::Ok)
    })
}

/// Two-sided paired bootstrap p-value for the mean difference of `a` and `b`.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `p_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ar_bootstrap_significance(
    a: *const f64,
    b: *const f64,
    n: usize,
    resamples: usize,
    seed: u64,
    p_value: *mut f64,
) -> ArStatus {
    guard(|| {
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, n, "b")?;
        let out = p_value.as_mut().ok_or_else(|| null("p_value"))?;
        *out = bootstrap_significance(a, b, resamples, seed)?;
        Ok(ArStatus::Ok)
    })
}

/// Parses and validates a JSON run config file. Relative paths resolve
/// against its directory.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ar_config_load(path: *const c_char, out: *mut *mut ArRunConfig) -> ArStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = RunConfig::load(str_arg(path, "path")?)?;
        cfg.validate()?;
        *out = Box::into_raw(Box::new(ArRunConfig(cfg)));
        Ok(ArStatus::Ok)
    })
}

/// Overrides the master seed.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ar_config_set_seed(h: *mut ArRunConfig, seed: u64) -> ArStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| null("handle"))?;
        h.0.seed = seed;
        Ok(ArStatus::Ok)
    })
}

/// Overrides the output directory.
///
/// # Safety
/// `h` must be a live handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ar_config_set_output_dir(h: *mut ArRunConfig, dir: *const c_char) -> ArStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| null("handle"))?;
        h.0.output_dir = PathBuf::from(str_arg(dir, "dir")?);
        Ok(ArStatus::Ok)
    })
}

/// # Safety
/// `h` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_config_free(h: *mut ArRunConfig) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs every (model, variant) pair and writes the artifacts. Returns
/// `AR_STATUS_PARTIAL_FAILURE` or `AR_STATUS_RUN_FAILED` when pairs failed;
/// the run directory is written in both cases.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ar_run(h: *const ArRunConfig) -> ArStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let outcome = run_pipeline(&h.0, None)?;
        let failed: Vec<String> = outcome
            .manifest
            .pairs
            .iter()
            .filter(|p| !p.ok)
            .map(|p| format!("{}__{}: {}", p.model, p.variant, p.error.as_deref().unwrap_or("")))
            .collect();
        match outcome.exit_code() {
            0 => Ok(ArStatus::Ok),
            2 => Err(Fail(ArStatus::PartialFailure, failed.join("; "))),
            _ => Err(Fail(ArStatus::RunFailed, failed.join("; "))),
        }
    })
}

/// Renders the comparison table of a run directory, as text or CSV.
///
/// # Safety
/// `run_dir` must be NUL-terminated; `out` must be writable. Free the result
/// with [`ar_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ar_render_report(run_dir: *const c_char, csv: bool, out: *mut *mut c_char) -> ArStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let r = render_report(str_arg(run_dir, "run_dir")?)?;
        *out = to_c_string(if csv { r.csv } else { r.text });
        Ok(ArStatus::Ok)
    })
}
