//! C ABI over `nial-core`.
//!
//! Conventions, shared by every exported function:
//! - Fallible functions return a [`NialStatus`]; `NIAL_STATUS_OK` (0) means
//!   success and every other value names an error category. The matching
//!   human-readable message is available from [`nial_last_error_message`]
//!   on the same thread until the next failing call.
//! - Models and datasets are opaque handles created by `*_load` / `*_synth`
//!   style constructors through an out-pointer and released with the
//!   matching `*_free`. Passing NULL to `*_free` is a no-op.
//! - Strings are NUL-terminated UTF-8. Sizes are `size_t`.
//! - Panics never cross the boundary; they surface as `NIAL_STATUS_PANIC`.
//!
//! The header `include/nial.h` is regenerated by cbindgen on every build.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nial_core::data::{load_csv, synth_dataset, Dataset, SynthSpec};
use nial_core::metrics::predictions;
use nial_core::model::{self, NialModel as CoreModel};
use nial_core::runner::{self, Preprocess, TrainConfig};
use nial_core::tensor::Tensor;
use nial_core::NialError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NialStatus {
    Ok = 0,
    Dimension = 1,
    Label = 2,
    Contract = 3,
    Build = 4,
    CheckpointFormat = 5,
    CheckpointVersion = 6,
    Parse = 7,
    EmptyDataset = 8,
    Split = 9,
    Divergence = 10,
    Config = 11,
    Io = 12,
    /// A required pointer argument was NULL.
    NullPointer = 100,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 101,
    /// An output buffer was too small for the result.
    BufferTooSmall = 102,
    /// The library panicked; this is a bug.
    Panic = 199,
}

impl From<&NialError> for NialStatus {
    fn from(e: &NialError) -> Self {
        match e {
            NialError::Dimension(_) => NialStatus::Dimension,
            NialError::Label(_) => NialStatus::Label,
            NialError::Contract(_) => NialStatus::Contract,
            NialError::Build(_) => NialStatus::Build,
            NialError::CheckpointFormat(_) => NialStatus::CheckpointFormat,
            NialError::CheckpointVersion { .. } => NialStatus::CheckpointVersion,
            NialError::Parse { .. } => NialStatus::Parse,
            NialError::EmptyDataset(_) => NialStatus::EmptyDataset,
            NialError::Split(_) => NialStatus::Split,
            NialError::Divergence(_) => NialStatus::Divergence,
            NialError::Config(_) => NialStatus::Config,
            NialError::Io { .. } => NialStatus::Io,
        }
    }
}

/// Opaque trained or loaded classifier.
pub struct NialModel(CoreModel);

/// Opaque labelled set of fixed-length beats.
pub struct NialDataset(Dataset);

/// Metrics returned by [`nial_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NialEvalReport {
    pub n_samples: usize,
    /// Mean per-sample loss.
    pub loss: f64,
    pub accuracy: f64,
    /// F1 of class 1 for binary models, macro F1 otherwise.
    pub f1: f64,
}

/// Summary of a [`nial_train_from_config`] run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NialTrainSummary {
    pub epochs_run: usize,
    /// 1-based epoch of the best validation loss, 0 if no epoch ran.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_lr: f64,
    pub stopped_early: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NialStatus, String);

impl From<NialError> for Failure {
    fn from(e: NialError) -> Self {
        Failure((&e).into(), format!("{}: {e}", e.category()))
    }
}

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> NialStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NialStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {what}"));
            NialStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(
        NialStatus::NullPointer,
        format!("null-pointer: {name} is NULL"),
    )
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            NialStatus::InvalidUtf8,
            format!("invalid-utf8: {name} is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nial_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL if none has
/// failed. The pointer stays valid until the next failing call on the same
/// thread. The message starts with the error category, e.g. `"config: ..."`.
#[no_mangle]
pub extern "C" fn nial_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Short stable name of a status code (`"ok"`, `"config"`, ...), or
/// `"unknown"` for values outside [`NialStatus`]. Never NULL.
#[no_mangle]
pub extern "C" fn nial_status_name(status: i32) -> *const c_char {
    const NAMES: &[(NialStatus, &str)] = &[
        (NialStatus::Ok, "ok\0"),
        (NialStatus::Dimension, "dimension\0"),
        (NialStatus::Label, "label\0"),
        (NialStatus::Contract, "contract\0"),
        (NialStatus::Build, "build\0"),
        (NialStatus::CheckpointFormat, "checkpoint-format\0"),
        (NialStatus::CheckpointVersion, "checkpoint-version\0"),
        (NialStatus::Parse, "parse\0"),
        (NialStatus::EmptyDataset, "empty-dataset\0"),
        (NialStatus::Split, "split\0"),
        (NialStatus::Divergence, "divergence\0"),
        (NialStatus::Config, "config\0"),
        (NialStatus::Io, "io\0"),
        (NialStatus::NullPointer, "null-pointer\0"),
        (NialStatus::InvalidUtf8, "invalid-utf8\0"),
        (NialStatus::BufferTooSmall, "buffer-too-small\0"),
        (NialStatus::Panic, "panic\0"),
    ];
    NAMES
        .iter()
        .find(|(s, _)| *s as i32 == status)
        .map_or("unknown\0", |(_, n)| n)
        .as_ptr()
        .cast()
}

// ------------------------------------------------------------------ models

/// Loads a NIAL checkpoint from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nial_model_load(
    path: *const c_char,
    out: *mut *mut NialModel,
) -> NialStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let m = model::load(path)?;
        put(out, NialModel(m), "out")
    })
}

/// Writes `model` as a NIAL checkpoint to `path`.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nial_model_save(
    model: *const NialModel,
    path: *const c_char,
) -> NialStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let path = str_arg(path, "path")?;
        model::save(&m.0, path)?;
        Ok(())
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nial_model_free(model: *mut NialModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Samples per beat the model expects, or 0 if `model` is NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nial_model_input_len(model: *const NialModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().input_len)
}

/// Number of label classes (2 for a single-logit binary head), or 0 if
/// `model` is NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nial_model_num_classes(model: *const NialModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().label_classes())
}

/// Number of logits per sample: 1 for binary heads, else the class count.
/// Returns 0 if `model` is NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nial_model_num_outputs(model: *const NialModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().n_classes)
}

unsafe fn batch_logits(
    model: *const NialModel,
    signals: *const f64,
    n_rows: usize,
    row_len: usize,
) -> FfiResult<(usize, Tensor)> {
    let m = &ref_arg(model, "model")?.0;
    if signals.is_null() {
        return Err(null("signals"));
    }
    if n_rows == 0 {
        return Err(NialError::EmptyDataset("no rows to predict".into()).into());
    }
    if row_len != m.config().input_len {
        return Err(NialError::Config(format!(
            "model expects {} samples per row, got {row_len}",
            m.config().input_len
        ))
        .into());
    }
    let data = std::slice::from_raw_parts(signals, n_rows * row_len).to_vec();
    let x = Tensor::from_vec(vec![n_rows, 1, row_len], data)?;
    Ok((m.config().n_classes, m.predict(&x)?))
}

/// Eval-mode logits for `n_rows` row-major beats of `row_len` samples.
/// Writes `n_rows * nial_model_num_outputs(model)` values to `out`, whose
/// capacity is `out_len`. No preprocessing is applied.
///
/// # Safety
/// `signals` must point to `n_rows * row_len` doubles and `out` to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nial_model_logits(
    model: *const NialModel,
    signals: *const f64,
    n_rows: usize,
    row_len: usize,
    out: *mut f64,
    out_len: usize,
) -> NialStatus {
    guard(|| {
        let (_, logits) = batch_logits(model, signals, n_rows, row_len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = logits.data();
        if out_len < v.len() {
            return Err(Failure(
                NialStatus::BufferTooSmall,
                format!("buffer-too-small: need {} doubles, got {out_len}", v.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(v);
        Ok(())
    })
}

/// Predicted class index of each of `n_rows` beats, written to
/// `out_labels[0..n_rows]`. No preprocessing is applied.
///
/// # Safety
/// `signals` must point to `n_rows * row_len` doubles and `out_labels` to
/// `n_rows` writable `size_t`s.
#[no_mangle]
pub unsafe extern "C" fn nial_model_predict(
    model: *const NialModel,
    signals: *const f64,
    n_rows: usize,
    row_len: usize,
    out_labels: *mut usize,
) -> NialStatus {
    guard(|| {
        let (n_outputs, logits) = batch_logits(model, signals, n_rows, row_len)?;
        if out_labels.is_null() {
            return Err(null("out_labels"));
        }
        let preds = predictions(logits.data(), n_outputs);
        std::slice::from_raw_parts_mut(out_labels, n_rows).copy_from_slice(&preds);
        Ok(())
    })
}

// ---------------------------------------------------------------- datasets

/// Loads a headerless CSV (signal columns then an integer label). With
/// `expected_len` > 0 every row must have that many signal columns.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_load_csv(
    path: *const c_char,
    expected_len: usize,
    out: *mut *mut NialDataset,
) -> NialStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let ds = load_csv(path, (expected_len > 0).then_some(expected_len))?;
        put(out, NialDataset(ds), "out")
    })
}

/// Builds a dataset from caller memory: `n_rows` row-major beats of
/// `row_len` samples and one label per row, with `n_classes` classes.
///
/// # Safety
/// `signals` must hold `n_rows * row_len` doubles, `labels` `n_rows`
/// values, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_from_arrays(
    signals: *const f64,
    labels: *const usize,
    n_rows: usize,
    row_len: usize,
    n_classes: usize,
    out: *mut *mut NialDataset,
) -> NialStatus {
    guard(|| {
        if signals.is_null() {
            return Err(null("signals"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let s = std::slice::from_raw_parts(signals, n_rows * row_len).to_vec();
        let l = std::slice::from_raw_parts(labels, n_rows).to_vec();
        let ds = Dataset::new(s, row_len, l, n_classes)?;
        put(out, NialDataset(ds), "out")
    })
}

/// Deterministic synthetic beats (the same generator as `nial gen-synth`).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_synth(
    n_classes: usize,
    per_class: usize,
    len: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut NialDataset,
) -> NialStatus {
    guard(|| {
        let ds = synth_dataset(&SynthSpec {
            n_classes,
            n_per_class: per_class,
            len,
            noise_sigma: noise,
            seed,
        })?;
        put(out, NialDataset(ds), "out")
    })
}

/// Applies per-row preprocessing in place: min-max to [0, 1] first, then
/// z-scoring, each only if its flag is set.
///
/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_preprocess(
    dataset: *mut NialDataset,
    minmax: bool,
    standardize: bool,
) -> NialStatus {
    guard(|| {
        let ds = dataset.as_mut().ok_or_else(|| null("dataset"))?;
        ds.0 = Preprocess {
            minmax,
            standardize,
        }
        .apply(&ds.0);
        Ok(())
    })
}

/// Number of rows, or 0 if `dataset` is NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_num_samples(dataset: *const NialDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.num_samples())
}

/// Samples per row, or 0 if `dataset` is NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_signal_len(dataset: *const NialDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.signal_len())
}

/// Number of classes, or 0 if `dataset` is NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_num_classes(dataset: *const NialDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.n_classes())
}

/// Releases a dataset handle. NULL is ignored.
///
/// # Safety
/// `dataset` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nial_dataset_free(dataset: *mut NialDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

// ------------------------------------------------------- train / evaluate

/// Eval-mode metrics of `model` on `dataset` (same as `nial evaluate`).
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nial_evaluate(
    model: *const NialModel,
    dataset: *const NialDataset,
    out: *mut NialEvalReport,
) -> NialStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let d = ref_arg(dataset, "dataset")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = runner::evaluate(&m.0, &d.0)?;
        *out = NialEvalReport {
            n_samples: r.n_samples,
            loss: r.loss,
            accuracy: r.accuracy,
            f1: r.f1,
        };
        Ok(())
    })
}

/// Runs `nial train` on the config file at `config_path` with `n_overrides`
/// `key=value` strings applied on top. On success `*out_best` receives the
/// lowest-validation-loss model and, if `summary` is non-NULL, it is filled
/// in. Outputs configured in the file (epoch log, checkpoints) are written
/// as by the CLI.
///
/// # Safety
/// `config_path` and each of the `n_overrides` entries of `overrides` must be
/// NUL-terminated; `overrides` may be NULL when `n_overrides` is 0.
#[no_mangle]
pub unsafe extern "C" fn nial_train_from_config(
    config_path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out_best: *mut *mut NialModel,
    summary: *mut NialTrainSummary,
) -> NialStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        if out_best.is_null() {
            return Err(null("out_best"));
        }
        let mut sets = Vec::with_capacity(n_overrides);
        if n_overrides > 0 {
            if overrides.is_null() {
                return Err(null("overrides"));
            }
            for (i, &p) in std::slice::from_raw_parts(overrides, n_overrides)
                .iter()
                .enumerate()
            {
                sets.push(str_arg(p, &format!("overrides[{i}]"))?.to_string());
            }
        }
        let cfg = TrainConfig::from_file(path, &sets)?;
        let outcome = runner::train(&cfg)?;
        if let Some(s) = summary.as_mut() {
            let best = outcome
                .best_epoch
                .and_then(|e| outcome.records.iter().find(|r| r.epoch == e));
            *s = NialTrainSummary {
                epochs_run: outcome.records.len(),
                best_epoch: outcome.best_epoch.unwrap_or(0),
                best_val_loss: best.map_or(f64::NAN, |r| r.val_loss),
                final_lr: outcome.records.last().map_or(cfg.initial_lr, |r| r.lr),
                stopped_early: outcome.stopped_early,
            };
        }
        put(out_best, NialModel(outcome.best), "out_best")
    })
}
