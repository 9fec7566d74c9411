use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{DataSource, SchedulerKind, TrainConfig};
use super::{evaluate, EvalReport};
use crate::data::{self, batches, stratified_indices, synth_dataset, Dataset};
use crate::error::{NialError, Result};
use crate::model::{self, NialModel};
use crate::optim::{Adam, AdaptiveScheduler, EarlyStopping, LrScheduler, StaticScheduler};
use crate::tensor::Graph;

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,val_f1,lr,elapsed_ms";

/// One row of the training log. `lr` is the rate used during the epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub lr: f64,
    pub elapsed_ms: u64,
}

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.val_loss,
            self.val_accuracy,
            self.val_f1,
            self.lr,
            self.elapsed_ms
        )
    }
}

/// Train / validation / optional test partitions after preprocessing.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
}

impl Splits {
    pub fn n_classes(&self) -> usize {
        self.train.n_classes()
    }

    pub fn signal_len(&self) -> usize {
        self.train.signal_len()
    }
}

/// Loads or generates the data, splits it, and applies preprocessing.
pub fn prepare_data(cfg: &TrainConfig) -> Result<Splits> {
    let split_seed = cfg.seed ^ SPLIT_SEED_SALT;
    let (train, val, test) = match &cfg.data {
        DataSource::Csv {
            train,
            val: Some(val),
            test,
            expected_len,
        } => (
            data::load_csv(train, *expected_len)?,
            data::load_csv(val, *expected_len)?,
            test.as_ref()
                .map(|t| data::load_csv(t, *expected_len))
                .transpose()?,
        ),
        DataSource::Csv {
            train,
            val: None,
            test,
            expected_len,
        } => {
            let full = data::load_csv(train, *expected_len)?;
            let (tr, va, te) = three_way(&full, cfg, split_seed)?;
            let te = match test {
                Some(t) => Some(data::load_csv(t, *expected_len)?),
                None => te,
            };
            (tr, va, te)
        }
        DataSource::Synth(spec) => three_way(&synth_dataset(spec)?, cfg, split_seed)?,
    };
    let len = train.signal_len();
    for ds in std::iter::once(&val).chain(&test) {
        if ds.signal_len() != len {
            return Err(NialError::Config(format!(
                "split row lengths differ: {len} vs {}",
                ds.signal_len()
            )));
        }
    }
    let k = std::iter::once(&train)
        .chain(std::iter::once(&val))
        .chain(&test)
        .map(Dataset::n_classes)
        .max()
        .expect("non-empty");
    let prep = |ds: Dataset| ds.with_n_classes(k).map(|d| cfg.preprocess.apply(&d));
    Ok(Splits {
        train: prep(train)?,
        val: prep(val)?,
        test: test.map(prep).transpose()?,
    })
}

/// Mixed into the run seed so the split draws differ from the init draws.
const SPLIT_SEED_SALT: u64 = 0x5eed_0000_5711_7000;

fn three_way(
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Dataset, Dataset, Option<Dataset>)> {
    let (tr, rest) = stratified_indices(ds, cfg.train_frac, seed)?;
    let train = ds.subset(&tr)?;
    let rest = ds.subset(&rest)?;
    let test_frac = 1.0 - cfg.train_frac - cfg.val_frac;
    if test_frac <= 1e-9 {
        return Ok((train, rest, None));
    }
    let frac = cfg.val_frac / (cfg.val_frac + test_frac);
    let (va, te) = stratified_indices(&rest, frac, seed.wrapping_add(1))?;
    Ok((train, rest.subset(&va)?, Some(rest.subset(&te)?)))
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last completed epoch.
    pub model: NialModel,
    /// Parameters from the epoch with the lowest validation loss (the
    /// initial model when no epoch ran).
    pub best: NialModel,
    pub best_epoch: Option<usize>,
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Final-model metrics on the test split, if there is one.
    pub test: Option<EvalReport>,
}

/// Validation statistics consumed by the scheduler and early stopping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValStats {
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
}

impl From<&EvalReport> for ValStats {
    fn from(r: &EvalReport) -> Self {
        Self {
            loss: r.loss,
            accuracy: r.accuracy,
            f1: r.f1,
        }
    }
}

/// Full pipeline: prepare data, train, write checkpoints and the epoch log
/// into `output.dir` when set.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let splits = prepare_data(cfg)?;
    let model_cfg = cfg.model_config(splits.signal_len(), splits.n_classes())?;
    let model = NialModel::build(model_cfg, cfg.seed)?;
    let mut log = match &cfg.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| NialError::io(dir, e))?;
            Some(EpochLog::create(&dir.join("epochs.csv"))?)
        }
        None => None,
    };
    let val = splits.val.clone();
    let mut outcome = train_model(
        cfg,
        model,
        &splits.train,
        |m| Ok(ValStats::from(&evaluate(m, &val)?)),
        |rec| match log.as_mut() {
            Some(l) => l.append(rec),
            None => Ok(()),
        },
    )?;
    if let Some(test) = &splits.test {
        outcome.test = Some(evaluate(&outcome.model, test)?);
    }
    if let Some(dir) = &cfg.output_dir {
        model::save(&outcome.best, dir.join("best.nial"))?;
        model::save(&outcome.model, dir.join("final.nial"))?;
    }
    Ok(outcome)
}

/// Incrementally flushed CSV log so an interrupted run leaves usable rows.
pub struct EpochLog {
    path: std::path::PathBuf,
    w: BufWriter<File>,
}

impl EpochLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| NialError::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            w: BufWriter::new(f),
        };
        log.line(EPOCH_LOG_HEADER)?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.w, "{s}")
            .and_then(|_| self.w.flush())
            .map_err(|e| NialError::io(&self.path, e))
    }

    pub fn append(&mut self, rec: &EpochRecord) -> Result<()> {
        self.line(&rec.csv_line())
    }
}

/// The epoch loop. Gradients and optimizer steps come only from
/// `train_set` batches; `validate` sees the model read-only after each
/// epoch, and its loss drives the scheduler, early stopping, and the
/// best-model choice. `on_epoch` receives every record as it is produced.
pub fn train_model<V, E>(
    cfg: &TrainConfig,
    mut model: NialModel,
    train_set: &Dataset,
    mut validate: V,
    mut on_epoch: E,
) -> Result<TrainOutcome>
where
    V: FnMut(&NialModel) -> Result<ValStats>,
    E: FnMut(&EpochRecord) -> Result<()>,
{
    let mut adam = Adam::new(cfg.initial_lr);
    let mut scheduler: Box<dyn LrScheduler> = match cfg.scheduler {
        SchedulerKind::Adaptive => Box::new(AdaptiveScheduler::new(cfg.initial_lr, cfg.plateau)?),
        SchedulerKind::Static => Box::new(StaticScheduler::new(cfg.initial_lr)),
    };
    let mut early = EarlyStopping::new(cfg.early_stop.patience, cfg.early_stop.min_delta);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(2);

    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let lr = scheduler.current_lr();
        adam.lr = lr;
        model.set_training(true);
        let mut loss_sum = 0.0;
        for (bi, batch) in batches(train_set, cfg.batch_size, Some(shuffle_rng.next_u64()))?
            .into_iter()
            .enumerate()
        {
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let x = g.constant(batch.signals);
            let logits = model.forward(&mut g, &bound, x)?;
            let loss = model.loss(&mut g, logits, &batch.labels)?;
            let value = g.value(loss).item().expect("scalar loss");
            if !value.is_finite() {
                return Err(NialError::Divergence(format!(
                    "loss {value} at epoch {epoch}, batch {}",
                    bi + 1
                )));
            }
            loss_sum += value * batch.labels.len() as f64;
            g.backward(loss)?;
            model.zero_grad();
            model.accumulate_grads(&g, &bound);
            adam.step(model.parameters_mut())?;
        }
        model.set_training(false);

        let val = validate(&model)?;
        if !val.loss.is_finite() {
            return Err(NialError::Divergence(format!(
                "validation loss {} at epoch {epoch}",
                val.loss
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.num_samples() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_f1: val.f1,
            lr,
            elapsed_ms: if cfg.wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        on_epoch(&record)?;
        records.push(record);

        if val.loss < best_loss {
            best_loss = val.loss;
            best_epoch = Some(epoch);
            best = model.clone();
        }
        scheduler.on_epoch_end(val.loss)?;
        if cfg.early_stop.enabled && early.on_epoch_end(val.loss)? {
            stopped_early = true;
            break;
        }
    }
    model.zero_grad();
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        records,
        stopped_early,
        test: None,
    })
}
