//! Experiment runner: training loop, evaluation, the adaptive-vs-static
//! learning-rate benchmark, and synthetic data generation. The `nial`
//! binary is a thin argument parser over these functions.

mod config;
mod train;

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

pub use config::{
    apply_overrides, DataSource, EarlyStopParams, Preprocess, SchedulerKind, TrainConfig,
};
pub use train::{
    prepare_data, train, train_model, EpochLog, EpochRecord, Splits, TrainOutcome, ValStats,
    EPOCH_LOG_HEADER,
};

use crate::data::{batches, synth_dataset, Dataset, SynthSpec};
use crate::error::{NialError, Result};
use crate::metrics::{confusion, predictions, F1Mode};
use crate::model::NialModel;
use crate::tensor::Graph;

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Metrics of a model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Mean per-sample loss.
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub f1_mode: F1Mode,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

/// Checks that `ds` can be fed to `model`: same beat length and no label
/// the head cannot represent.
pub fn check_compatible(model: &NialModel, ds: &Dataset) -> Result<()> {
    let cfg = model.config();
    if ds.signal_len() != cfg.input_len {
        return Err(NialError::Config(format!(
            "model expects {} samples per row, data has {}",
            cfg.input_len,
            ds.signal_len()
        )));
    }
    if ds.n_classes() > cfg.label_classes() {
        return Err(NialError::Config(format!(
            "model predicts {} classes, data has {}",
            cfg.label_classes(),
            ds.n_classes()
        )));
    }
    Ok(())
}

/// Eval-mode metrics of `model` on `ds` (dropout off). Binary heads report
/// the F1 of class 1, multi-class heads the macro F1.
pub fn evaluate(model: &NialModel, ds: &Dataset) -> Result<EvalReport> {
    check_compatible(model, ds)?;
    let k = model.config().label_classes();
    let outputs = model.config().n_classes;
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(ds.num_samples());
    for batch in batches(ds, EVAL_BATCH, None)? {
        let logits = model.predict(&batch.signals)?;
        preds.extend(predictions(logits.data(), outputs));
        let mut g = Graph::new();
        let l = g.constant(logits);
        let loss = model.loss(&mut g, l, &batch.labels)?;
        loss_sum += g.value(loss).item().expect("scalar loss") * batch.labels.len() as f64;
    }
    let cm = confusion(&preds, ds.labels(), k)?;
    let mode = if model.config().is_binary() {
        F1Mode::Binary
    } else {
        F1Mode::Macro
    };
    Ok(EvalReport {
        n_samples: ds.num_samples(),
        loss: loss_sum / ds.num_samples() as f64,
        accuracy: cm.accuracy()?,
        f1: cm.f1(mode)?,
        f1_mode: mode,
        confusion: cm.rows(),
    })
}

/// One arm of the learning-rate benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkArm {
    pub scheduler: String,
    /// First epoch whose validation loss is at or below the threshold.
    pub epochs_to_threshold: Option<usize>,
    /// Wall time until the threshold epoch; only with `log.wall_time`.
    pub wall_ms_to_threshold: Option<u64>,
    pub epochs_run: usize,
    pub final_val_loss: Option<f64>,
    pub final_val_accuracy: Option<f64>,
    pub final_val_f1: Option<f64>,
    pub lr_trajectory: Vec<f64>,
    pub val_loss_trajectory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub initial_lr: f64,
    pub loss_threshold: f64,
    pub adaptive: BenchmarkArm,
    #[serde(rename = "static")]
    pub static_lr: BenchmarkArm,
    /// adaptive epochs / static epochs, when both reached the threshold.
    pub epoch_ratio: Option<f64>,
    /// Both arms started from bit-identical parameters.
    pub identical_init: bool,
}

impl BenchmarkReport {
    /// The adaptive arm reached the threshold no later than the static arm
    /// (or the static arm never reached it).
    pub fn adaptive_not_slower(&self) -> bool {
        match (
            self.adaptive.epochs_to_threshold,
            self.static_lr.epochs_to_threshold,
        ) {
            (Some(a), Some(s)) => a <= s,
            (Some(_), None) => true,
            (None, _) => false,
        }
    }
}

/// Trains twin models from the same data, seed and initial parameters, one
/// with the plateau scheduler and one with a constant rate, and reports how
/// many epochs each needs to reach `threshold` validation loss. Early
/// stopping is off in both arms so both run the full `train.epochs` budget
/// and the trajectories are comparable.
pub fn benchmark_lr(cfg: &TrainConfig, threshold: f64) -> Result<BenchmarkReport> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(NialError::Config(format!(
            "loss threshold must be positive, got {threshold}"
        )));
    }
    let splits = prepare_data(cfg)?;
    let model_cfg = cfg.model_config(splits.signal_len(), splits.n_classes())?;
    let init = NialModel::build(model_cfg, cfg.seed)?;

    let arm_cfg = |kind: SchedulerKind| {
        let mut c = cfg.clone();
        c.scheduler = kind;
        c.early_stop.enabled = false;
        c.output_dir = None;
        c
    };
    let run = |kind: SchedulerKind, model: NialModel| -> Result<(BenchmarkArm, Vec<u64>)> {
        let c = arm_cfg(kind);
        let init_bits: Vec<u64> = model
            .parameters()
            .iter()
            .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
            .collect();
        let start = Instant::now();
        let mut hit: Option<(usize, u64)> = None;
        let val = &splits.val;
        let out = train_model(
            &c,
            model,
            &splits.train,
            |m| Ok(ValStats::from(&evaluate(m, val)?)),
            |rec| {
                if hit.is_none() && rec.val_loss <= threshold {
                    hit = Some((rec.epoch, start.elapsed().as_millis() as u64));
                }
                Ok(())
            },
        )?;
        let last = out.records.last();
        Ok((
            BenchmarkArm {
                scheduler: kind.to_string(),
                epochs_to_threshold: hit.map(|h| h.0),
                wall_ms_to_threshold: hit.filter(|_| cfg.wall_time).map(|h| h.1),
                epochs_run: out.records.len(),
                final_val_loss: last.map(|r| r.val_loss),
                final_val_accuracy: last.map(|r| r.val_accuracy),
                final_val_f1: last.map(|r| r.val_f1),
                lr_trajectory: out.records.iter().map(|r| r.lr).collect(),
                val_loss_trajectory: out.records.iter().map(|r| r.val_loss).collect(),
            },
            init_bits,
        ))
    };

    let (adaptive, static_lr) = std::thread::scope(|s| {
        let a = s.spawn(|| run(SchedulerKind::Adaptive, init.clone()));
        let b = run(SchedulerKind::Static, init.clone());
        (a.join().expect("adaptive arm panicked"), b)
    });
    let (adaptive, bits_a) = adaptive?;
    let (static_lr, bits_s) = static_lr?;
    let epoch_ratio = match (adaptive.epochs_to_threshold, static_lr.epochs_to_threshold) {
        (Some(a), Some(s)) => Some(a as f64 / s as f64),
        _ => None,
    };
    Ok(BenchmarkReport {
        seed: cfg.seed,
        initial_lr: cfg.initial_lr,
        loss_threshold: threshold,
        adaptive,
        static_lr,
        epoch_ratio,
        identical_init: bits_a == bits_s,
    })
}

/// Generates a synthetic dataset and writes it as label-last CSV.
pub fn gen_synth(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<Dataset> {
    let ds = synth_dataset(spec)?;
    ds.write_csv(out)?;
    Ok(ds)
}
