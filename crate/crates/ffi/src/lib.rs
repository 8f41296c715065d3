//! C ABI over `mvscale`.
//!
//! Every function returns an [`MvsStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`mvs_last_error_message`]. Objects
//! cross the boundary as opaque handles that the caller releases with the
//! matching `*_free` function. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use mvscale::experiment::{self, ExperimentConfig, RunOptions, ZooModel};
use mvscale::frozen::{invariant_measure, InvariantConfig};
use mvscale::measures::wasserstein2;
use mvscale::{Ensemble, Error, MeanFieldModel, SimConfig, TimeScales};

/// Result codes. The numeric values of `MVS_STATUS_VALIDATION`,
/// `MVS_STATUS_NUMERICAL` and `MVS_STATUS_REPLAY_MISMATCH` equal the exit
/// codes of the `mvscale` binary.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MvsStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numerical = 3,
    ReplayMismatch = 4,
    Panic = 5,
}

/// Opaque particle ensemble.
pub struct MvsEnsemble(Ensemble);

/// Opaque model built from a JSON model description.
pub struct MvsModel(ZooModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn status_of(e: &Error) -> MvsStatus {
    match experiment::exit_code(e) {
        experiment::EXIT_VALIDATION => MvsStatus::Validation,
        experiment::EXIT_REPLAY_MISMATCH => MvsStatus::ReplayMismatch,
        _ => MvsStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> MvsStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MvsStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MvsStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MvsStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::Config(format!("{what} is not valid UTF-8"))))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn json<T: serde::de::DeserializeOwned>(text: &str) -> FfiResult<T> {
    serde_json::from_str(text).map_err(|e| Failure::Core(Error::Json(e)))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mvs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn mvs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mvs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `dim * count` row-major values into a new ensemble.
///
/// # Safety
/// `data` must point to `dim * count` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_new(
    dim: usize,
    count: usize,
    data: *const f64,
    out: *mut *mut MvsEnsemble,
) -> MvsStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let len = dim.checked_mul(count).ok_or_else(|| Error::Config("size overflow".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite input value at position {i}")).into());
        }
        let e = Ensemble::new(dim, values)?;
        write_out(out, Box::into_raw(Box::new(MvsEnsemble(e))), "out")
    })
}

/// # Safety
/// `e` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_free(e: *mut MvsEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Dimension of each particle; 0 for NULL.
///
/// # Safety
/// `e` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_dim(e: *const MvsEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.0.dim())
}

/// Number of particles; 0 for NULL.
///
/// # Safety
/// `e` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_count(e: *const MvsEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.0.count())
}

/// Copies the particles into `out`, which holds `len >= dim * count` doubles.
///
/// # Safety
/// `e` must be a live handle and `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_copy(e: *const MvsEnsemble, out: *mut f64, len: usize) -> MvsStatus {
    guard(|| {
        let e = as_ref(e, "ensemble")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let src = e.0.as_slice();
        if len < src.len() {
            return Err(Error::DimensionMismatch {
                expected: src.len(),
                got: len,
            }
            .into());
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
        Ok(())
    })
}

/// Wasserstein-2 distance between two ensembles. `approximate` is set when
/// the sliced estimator was used.
///
/// # Safety
/// Handles must be live; `value` and `approximate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvs_wasserstein2(
    a: *const MvsEnsemble,
    b: *const MvsEnsemble,
    value: *mut f64,
    approximate: *mut bool,
) -> MvsStatus {
    guard(|| {
        let (a, b) = (as_ref(a, "a")?, as_ref(b, "b")?);
        let w = wasserstein2(&a.0, &b.0)?;
        write_out(value, w.value, "value")?;
        write_out(approximate, w.approximate, "approximate")
    })
}

/// Builds a model from a JSON description such as
/// `{"name": "linear", "a": 1, "c": 1, "k": 1, "s": 1}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_from_json(spec_json: *const c_char, out: *mut *mut MvsModel) -> MvsStatus {
    guard(|| {
        let spec: experiment::ModelSpec = json(as_str(spec_json, "spec_json")?)?;
        let model = spec.build()?;
        write_out(out, Box::into_raw(Box::new(MvsModel(model))), "out")
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_free(m: *mut MvsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Slow, fast and noise dimensions of a model.
///
/// # Safety
/// `m` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_dims(
    m: *const MvsModel,
    slow: *mut usize,
    fast: *mut usize,
    slow_noise: *mut usize,
    fast_noise: *mut usize,
) -> MvsStatus {
    guard(|| {
        let d = as_ref(m, "model")?.0.dims();
        write_out(slow, d.slow, "slow")?;
        write_out(fast, d.fast, "fast")?;
        write_out(slow_noise, d.slow_noise, "slow_noise")?;
        write_out(fast_noise, d.fast_noise, "fast_noise")
    })
}

/// Simulates replication `rep` from `(slow0, fast0)` and returns the terminal
/// ensembles. `time_scales_json` and `sim_json` use the experiment config
/// schema.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn mvs_simulate(
    m: *const MvsModel,
    slow0: *const MvsEnsemble,
    fast0: *const MvsEnsemble,
    time_scales_json: *const c_char,
    sim_json: *const c_char,
    rep: u64,
    out_slow: *mut *mut MvsEnsemble,
    out_fast: *mut *mut MvsEnsemble,
) -> MvsStatus {
    guard(|| {
        let model = &as_ref(m, "model")?.0;
        let (x0, y0) = (&as_ref(slow0, "slow0")?.0, &as_ref(fast0, "fast0")?.0);
        let ts: TimeScales = json(as_str(time_scales_json, "time_scales_json")?)?;
        let sim: SimConfig = json(as_str(sim_json, "sim_json")?)?;
        if out_slow.is_null() || out_fast.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = mvscale::sde::simulate_rep(x0, y0, model, &ts, &sim, rep)?;
        let x = path.slow.last().clone();
        let y = path.fast.last().clone();
        write_out(out_slow, Box::into_raw(Box::new(MvsEnsemble(x))), "out_slow")?;
        write_out(out_fast, Box::into_raw(Box::new(MvsEnsemble(y))), "out_fast")
    })
}

/// Invariant ensemble of the frozen fast dynamics at slow law `mu`.
/// `config_json` may be NULL for the defaults.
///
/// # Safety
/// Handles must be live; `config_json` NULL or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mvs_invariant_measure(
    m: *const MvsModel,
    mu: *const MvsEnsemble,
    config_json: *const c_char,
    converged: *mut bool,
    out: *mut *mut MvsEnsemble,
) -> MvsStatus {
    guard(|| {
        let model = &as_ref(m, "model")?.0;
        let mu = &as_ref(mu, "mu")?.0;
        let cfg: InvariantConfig = if config_json.is_null() {
            InvariantConfig::default()
        } else {
            json(as_str(config_json, "config_json")?)?
        };
        let inv = invariant_measure(model, mu, &cfg, None)?;
        write_out(converged, inv.converged, "converged")?;
        write_out(out, Box::into_raw(Box::new(MvsEnsemble(inv.measure))), "out")
    })
}

/// Runs an experiment config and writes its artifacts to `out_dir` (NULL
/// uses the config's directory). On success `summary_json` receives the
/// summary, to be released with [`mvs_string_free`].
///
/// # Safety
/// Strings must be NUL-terminated (or NULL where allowed); `summary_json`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvs_experiment_run(
    config_json: *const c_char,
    out_dir: *const c_char,
    threads: usize,
    summary_json: *mut *mut c_char,
) -> MvsStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(as_str(config_json, "config_json")?)?;
        let out_dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(as_str(out_dir, "out_dir")?))
        };
        if summary_json.is_null() {
            return Err(Failure::Null("summary_json"));
        }
        let opts = RunOptions {
            out_dir,
            seed_override: None,
        };
        let threads = (threads > 0).then_some(threads);
        let (summary, _) = experiment::with_threads(threads, || experiment::run(cfg, &opts))??;
        let text = serde_json::to_string(&summary).map_err(Error::Json)?;
        let c = CString::new(text).map_err(|e| Error::Config(e.to_string()))?;
        write_out(summary_json, c.into_raw(), "summary_json")
    })
}

/// Replays a recorded summary. Returns `MVS_STATUS_REPLAY_MISMATCH` when an
/// artifact differs; the error message names the file and byte offset.
///
/// # Safety
/// `summary_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mvs_experiment_replay(summary_path: *const c_char, threads: usize) -> MvsStatus {
    guard(|| {
        let path = Path::new(as_str(summary_path, "summary_path")?);
        let threads = (threads > 0).then_some(threads);
        experiment::with_threads(threads, || experiment::replay(path))??.into_result()?;
        Ok(())
    })
}
