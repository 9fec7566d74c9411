//! Segmented-beat datasets: CSV ingestion, per-row preprocessing, stratified
//! splitting, batching, and a synthetic beat generator.
//!
//! CSV layout: no header, one beat per row, `L` sample values followed by an
//! integer-valued class label.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NialError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    signals: Vec<f64>,
    len: usize,
    labels: Vec<usize>,
    n_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    /// `signals` is row-major B×L.
    pub fn new(
        signals: Vec<f64>,
        len: usize,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(NialError::EmptyDataset("no samples".into()));
        }
        if len == 0 || signals.len() != labels.len() * len {
            return Err(NialError::Dimension(format!(
                "{} values cannot form {} rows of length {len}",
                signals.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(NialError::Label(format!(
                "label {l} at row {i} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            signals,
            len,
            labels,
            n_classes,
            class_names: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(NialError::Dimension("ragged rows".into()));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(rows.concat(), len, labels, n_classes)
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn signal_len(&self) -> usize {
        self.len
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn signals(&self) -> &[f64] {
        &self.signals
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.signals[i * self.len..(i + 1) * self.len]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Widens the label space (e.g. so a validation split sees every class).
    pub fn with_n_classes(mut self, n_classes: usize) -> Result<Self> {
        if n_classes < self.n_classes {
            return Err(NialError::Label(format!(
                "cannot shrink label space from {} to {n_classes}",
                self.n_classes
            )));
        }
        self.n_classes = n_classes;
        Ok(self)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut signals = Vec::with_capacity(indices.len() * self.len);
        for &i in indices {
            signals.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut ds = Self::new(signals, self.len, labels, self.n_classes)?;
        ds.class_names = self.class_names.clone();
        Ok(ds)
    }

    fn map_rows(&self, f: impl Fn(&mut [f64])) -> Self {
        let mut out = self.clone();
        for row in out.signals.chunks_mut(self.len) {
            f(row);
        }
        out
    }

    /// Maps each row to [0, 1] by its own min and max; constant rows become 0.
    pub fn normalize_minmax(&self) -> Self {
        self.map_rows(|row| {
            let (lo, hi) = row
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let span = hi - lo;
            for v in row.iter_mut() {
                *v = if span > 0.0 {
                    ((*v - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        })
    }

    /// Per-row z-score with the population standard deviation; constant rows
    /// become 0.
    pub fn standardize(&self) -> Self {
        self.map_rows(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let sd = (row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
            for v in row.iter_mut() {
                *v = if sd > 0.0 { (*v - mu) / sd } else { 0.0 };
            }
        })
    }

    /// Rows as a [B×1×L] tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![self.num_samples(), 1, self.len], self.signals.clone())
            .expect("validated at construction")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| NialError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w)
            .map_err(|e| NialError::io(path, e))?;
        w.flush().map_err(|e| NialError::io(path, e))
    }

    /// Writes rows with 17 significant digits so values parse back exactly.
    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, &label) in self.labels.iter().enumerate() {
            let mut line = String::new();
            for v in self.row(i) {
                line.push_str(&format!("{v:.16e},"));
            }
            line.push_str(&format!("{label:.16e}\n"));
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// Loads a headerless CSV of `L` values plus a trailing label per row.
pub fn load_csv(path: impl AsRef<Path>, expected_len: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| NialError::io(path, e))?;
    parse_csv(&text, expected_len)
}

pub fn parse_csv(text: &str, expected_len: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut width: Option<usize> = expected_len.map(|l| l + 1);
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| NialError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec
            .position()
            .map_or(labels.len() + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() < 2 {
            return Err(NialError::Parse {
                line,
                msg: "need at least one sample and a label".into(),
            });
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(NialError::Parse {
                    line,
                    msg: format!("{} fields, expected {w}", rec.len()),
                })
            }
            _ => {}
        }
        for (j, field) in rec.iter().take(rec.len() - 1).enumerate() {
            let v: f64 = field.parse().map_err(|_| NialError::Parse {
                line,
                msg: format!("field {} is not a number: {field:?}", j + 1),
            })?;
            if !v.is_finite() {
                return Err(NialError::Parse {
                    line,
                    msg: format!("field {} is not finite", j + 1),
                });
            }
            signals.push(v);
        }
        let raw = &rec[rec.len() - 1];
        let label = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v < u32::MAX as f64)
            .ok_or_else(|| NialError::Parse {
                line,
                msg: format!("label {raw:?} is not a non-negative integer"),
            })?;
        labels.push(label as usize);
    }
    if labels.is_empty() {
        return Err(NialError::EmptyDataset("CSV has no rows".into()));
    }
    let len = width.expect("set with first row") - 1;
    let n_classes = labels.iter().max().expect("non-empty") + 1;
    Dataset::new(signals, len, labels, n_classes)
}

/// Per-class shuffled split. Each class contributes `round(frac * count)`
/// samples to the first part, clamped so both parts get at least one.
/// Each part keeps the original row order.
pub fn stratified_split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (a, b) = stratified_indices(ds, train_frac, seed)?;
    Ok((ds.subset(&a)?, ds.subset(&b)?))
}

pub fn stratified_indices(
    ds: &Dataset,
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(NialError::Split(format!(
            "train fraction {train_frac} outside (0, 1)"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(NialError::Split(format!(
                "class {class} has a single sample; need at least 2"
            )));
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let k = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
        first.extend_from_slice(&idx[..k]);
        second.extend_from_slice(&idx[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

/// A mini-batch: signals as [B'×1×L] plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub signals: Tensor,
    pub labels: Vec<usize>,
}

/// Splits one pass over `ds` into batches of `batch_size` (last may be
/// smaller). With a seed the sample order is a seeded permutation.
pub fn batches(ds: &Dataset, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(NialError::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.num_samples()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let mut signals = Vec::with_capacity(chunk.len() * ds.signal_len());
            for &i in chunk {
                signals.extend_from_slice(ds.row(i));
            }
            Batch {
                signals: Tensor::from_vec(vec![chunk.len(), 1, ds.signal_len()], signals)
                    .expect("non-empty chunk"),
                labels: chunk.iter().map(|&i| ds.labels()[i]).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub len: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// The noiseless template for class `k`: a sinusoid with `k + 1` cycles over
/// the window plus a Gaussian spike whose position and width depend on `k`.
pub fn synth_template(k: usize, n_classes: usize, len: usize) -> Vec<f64> {
    let l = len as f64;
    let center = l * (k as f64 + 1.0) / (n_classes as f64 + 1.0);
    let width = (l / 40.0) * (1.0 + 0.5 * k as f64);
    (0..len)
        .map(|t| {
            let t = t as f64;
            let wave = 0.5 * (2.0 * std::f64::consts::PI * (k as f64 + 1.0) * t / l).sin();
            let spike = (-0.5 * ((t - center) / width).powi(2)).exp();
            wave + spike
        })
        .collect()
}

/// Synthetic labelled beats, grouped by class; deterministic per seed.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n_classes < 2 {
        return Err(NialError::Config(format!(
            "synthetic data needs at least 2 classes, got {}",
            spec.n_classes
        )));
    }
    if spec.n_per_class == 0 || spec.len == 0 {
        return Err(NialError::Config(
            "n_per_class and len must be positive".into(),
        ));
    }
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| NialError::Config(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut signals = Vec::with_capacity(spec.n_classes * spec.n_per_class * spec.len);
    let mut labels = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    for k in 0..spec.n_classes {
        let template = synth_template(k, spec.n_classes, spec.len);
        for _ in 0..spec.n_per_class {
            for &v in &template {
                let eps = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                signals.push(v + eps);
            }
            labels.push(k);
        }
    }
    Dataset::new(signals, spec.len, labels, spec.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_file() {
        let ds = parse_csv("0.1,0.2,0.0\n0.3,0.4,1.0", None).unwrap();
        assert_eq!(ds.num_samples(), 2);
        assert_eq!(ds.signal_len(), 2);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.row(1), &[0.3, 0.4]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = "1,2,3,0\n1,2,3,1\n1,2,0\n1,2,3,0\n";
        match parse_csv(text, None) {
            Err(NialError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expected_len_enforced() {
        assert!(matches!(
            parse_csv("1,2,3,0\n", Some(2)),
            Err(NialError::Parse { line: 1, .. })
        ));
        assert!(parse_csv("1,2,0\n", Some(2)).is_ok());
    }

    #[test]
    fn fractional_label_rejected() {
        assert!(matches!(
            parse_csv("1,2,0.5\n", None),
            Err(NialError::Parse { .. })
        ));
        assert!(matches!(
            parse_csv("1,2,-1\n", None),
            Err(NialError::Parse { .. })
        ));
        assert!(matches!(
            parse_csv("1,x,1\n", None),
            Err(NialError::Parse { .. })
        ));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            parse_csv("", None),
            Err(NialError::EmptyDataset(_))
        ));
        assert!(matches!(
            parse_csv("\n\n", None),
            Err(NialError::EmptyDataset(_))
        ));
    }

    #[test]
    fn minmax_and_standardize() {
        let ds = Dataset::from_rows(
            &[vec![0., 5., 10.], vec![1., 2., 3.], vec![7., 7., 7.]],
            vec![0, 1, 0],
        )
        .unwrap();
        let n = ds.normalize_minmax();
        assert_eq!(n.row(0), &[0.0, 0.5, 1.0]);
        assert_eq!(n.row(2), &[0.0, 0.0, 0.0]);
        let s = ds.standardize();
        for (a, e) in s.row(1).iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((a - e).abs() < 1e-4);
        }
        assert_eq!(s.row(2), &[0.0, 0.0, 0.0]);
        assert_eq!(s.labels(), ds.labels());
    }

    #[test]
    fn split_exact_proportions() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let ds = Dataset::from_rows(&rows, labels).unwrap();
        let (tr, va) = stratified_split(&ds, 0.8, 1).unwrap();
        assert_eq!(tr.class_counts(), vec![4, 4]);
        assert_eq!(va.class_counts(), vec![1, 1]);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let ds = Dataset::from_rows(&[vec![0.], vec![1.], vec![2.]], vec![0, 0, 1]).unwrap();
        match stratified_split(&ds, 0.5, 0) {
            Err(NialError::Split(m)) => assert!(m.contains("class 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn batch_sizes() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let ds = Dataset::from_rows(&rows, (0..10).map(|i| i % 3).collect()).unwrap();
        let b = batches(&ds, 4, None).unwrap();
        assert_eq!(
            b.iter().map(|b| b.labels.len()).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
        assert_eq!(b[0].signals.shape(), &[4, 1, 2]);
        let all: Vec<usize> = b.iter().flat_map(|b| b.labels.clone()).collect();
        assert_eq!(all, ds.labels());
        assert!(batches(&ds, 0, None).is_err());
    }

    #[test]
    fn synth_rejects_one_class() {
        let spec = SynthSpec {
            n_classes: 1,
            n_per_class: 3,
            len: 10,
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(synth_dataset(&spec).is_err());
    }

    #[test]
    fn csv_text_round_trip_is_exact() {
        let spec = SynthSpec {
            n_classes: 3,
            n_per_class: 4,
            len: 20,
            noise_sigma: 0.1,
            seed: 9,
        };
        let ds = synth_dataset(&spec).unwrap();
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let back = parse_csv(std::str::from_utf8(&buf).unwrap(), Some(20)).unwrap();
        assert_eq!(back, ds);
    }
}
