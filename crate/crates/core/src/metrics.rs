//! Confusion matrix, accuracy and F1.
//!
//! Per-class F1 uses the convention 0/0 := 0, so a class that never appears
//! in labels or predictions scores 0 and still counts toward the macro mean.

use serde::Serialize;

use crate::error::{NialError, Result};

/// K×K counts; entry (i, j) is the number of samples of true class `i`
/// predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// F1 of class 1.
    Binary,
    /// Unweighted mean of per-class F1.
    Macro,
}

pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(NialError::Contract(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix {
        k,
        counts: vec![0; k * k],
    };
    for (i, (&p, &l)) in preds.iter().zip(labels).enumerate() {
        if p >= k || l >= k {
            return Err(NialError::Contract(format!(
                "sample {i}: class (pred {p}, label {l}) outside [0, {k})"
            )));
        }
        cm.counts[l * k + p] += 1;
    }
    Ok(cm)
}

/// Class index with the largest logit per row (first on ties); for a single
/// logit column, class 1 iff sigmoid(z) >= 0.5, i.e. z >= 0.
pub fn predictions(logits: &[f64], n_outputs: usize) -> Vec<usize> {
    if n_outputs == 1 {
        return logits.iter().map(|&z| usize::from(z >= 0.0)).collect();
    }
    logits
        .chunks(n_outputs)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.k.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Samples per true class.
    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j)).sum())
            .collect()
    }

    /// Samples per predicted class.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|j| (0..self.k).map(|i| self.get(i, j)).sum())
            .collect()
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(NialError::Contract(
                "metrics of an empty confusion matrix".into(),
            ))
        } else {
            Ok(())
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.nonempty()?;
        Ok(self.trace() as f64 / self.total() as f64)
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.get(class, class), self.col_sums()[class])
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.get(class, class), self.row_sums()[class])
    }

    pub fn class_f1(&self, class: usize) -> f64 {
        let tp = self.get(class, class);
        let fp = self.col_sums()[class] - tp;
        let fn_ = self.row_sums()[class] - tp;
        // 2PR/(P+R) == 2TP/(2TP+FP+FN)
        ratio(2 * tp, 2 * tp + fp + fn_)
    }

    pub fn f1(&self, mode: F1Mode) -> Result<f64> {
        self.nonempty()?;
        match mode {
            F1Mode::Binary => {
                if self.k != 2 {
                    return Err(NialError::Contract(format!(
                        "binary F1 needs 2 classes, matrix has {}",
                        self.k
                    )));
                }
                Ok(self.class_f1(1))
            }
            F1Mode::Macro => Ok((0..self.k).map(|c| self.class_f1(c)).sum::<f64>() / self.k as f64),
        }
    }
}
