//! Linear softmax probe used to test how much label information a feature
//! carries, and to exercise paired-gradient averaging at small scale.
//!
//! Weights are a `(dim + 1) × classes` row-major matrix whose last row is the
//! bias. Losses are mean cross-entropy in nats.
//!
//! `MTX1` feature files: magic, `rows u32`, `cols u32`, then row-major `f32`,
//! all little-endian. Labels are one integer per line.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::relevance::{mi_from_classifier, RelevanceError};
use crate::rng::SplitMix64;

pub const MTX_MAGIC: &[u8; 4] = b"MTX1";

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("feature dimension {got}, probe expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("probe needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid paired batch: {0}")]
    InvalidPairing(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("matrix: {0}")]
    Matrix(String),
    #[error("labels line {line}: {msg}")]
    Labels { line: usize, msg: String },
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
}

/// Borrowed labelled feature vector.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }

    pub fn as_example(&self) -> Example<'_> {
        Example {
            features: &self.features,
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxProbe {
    feature_dim: usize,
    num_classes: usize,
    weights: Vec<f64>,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl SoftmaxProbe {
    /// Zero-initialised probe.
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        learning_rate: f64,
        rng_seed: u64,
    ) -> Result<Self, ProbeError> {
        if num_classes < 2 {
            return Err(ProbeError::TooFewClasses(num_classes));
        }
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(ProbeError::InvalidConfig(format!(
                "learning rate {learning_rate}"
            )));
        }
        Ok(Self {
            feature_dim,
            num_classes,
            weights: vec![0.0; (feature_dim + 1) * num_classes],
            learning_rate,
            rng_seed,
        })
    }

    /// Small uniform weights in `[-scale, scale)` drawn from `rng_seed`.
    pub fn randomized(mut self, scale: f64) -> Self {
        let mut rng = SplitMix64::new(self.rng_seed);
        for w in &mut self.weights {
            *w = (rng.next_f64() * 2.0 - 1.0) * scale;
        }
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn check(&self, ex: &Example) -> Result<(), ProbeError> {
        if ex.features.len() != self.feature_dim {
            return Err(ProbeError::DimensionMismatch {
                expected: self.feature_dim,
                got: ex.features.len(),
            });
        }
        if ex.label >= self.num_classes {
            return Err(ProbeError::LabelOutOfRange {
                label: ex.label,
                classes: self.num_classes,
            });
        }
        Ok(())
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.num_classes;
        out.copy_from_slice(&self.weights[self.feature_dim * k..]);
        for (f, &xf) in x.iter().enumerate() {
            if xf == 0.0 {
                continue;
            }
            let row = &self.weights[f * k..(f + 1) * k];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xf * w;
            }
        }
    }

    /// Natural-log class probabilities.
    pub fn log_probs(&self, x: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if x.len() != self.feature_dim {
            return Err(ProbeError::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let mut z = vec![0.0; self.num_classes];
        self.logits_into(x, &mut z);
        log_softmax_in_place(&mut z);
        Ok(z)
    }

    /// Arg-max class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, ProbeError> {
        let lp = self.log_probs(x)?;
        Ok(argmax(&lp))
    }

    /// Mean cross-entropy and its exact gradient with respect to the weights.
    pub fn loss_and_grad(&self, examples: &[Example]) -> Result<(f64, Vec<f64>), ProbeError> {
        if examples.is_empty() {
            return Err(ProbeError::EmptyBatch);
        }
        let k = self.num_classes;
        let mut grad = vec![0.0; self.weights.len()];
        let mut loss = 0.0;
        let mut z = vec![0.0; k];
        for ex in examples {
            self.check(ex)?;
            self.logits_into(ex.features, &mut z);
            log_softmax_in_place(&mut z);
            loss -= z[ex.label];
            // dL/dz = softmax - onehot
            for v in z.iter_mut() {
                *v = v.exp();
            }
            z[ex.label] -= 1.0;
            for (f, &xf) in ex.features.iter().enumerate() {
                if xf == 0.0 {
                    continue;
                }
                for (g, &d) in grad[f * k..(f + 1) * k].iter_mut().zip(&z) {
                    *g += xf * d;
                }
            }
            for (g, &d) in grad[self.feature_dim * k..].iter_mut().zip(&z) {
                *g += d;
            }
        }
        let n = examples.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss / n, grad))
    }

    pub fn apply_gradient(&mut self, grad: &[f64]) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= self.learning_rate * g;
        }
    }

    /// Plain SGD step on one batch; returns the batch loss.
    pub fn step(&mut self, examples: &[Example]) -> Result<f64, ProbeError> {
        let (loss, grad) = self.loss_and_grad(examples)?;
        self.apply_gradient(&grad);
        Ok(loss)
    }

    /// Computes the original-branch and variant-branch gradients separately,
    /// averages them, and takes one step.
    pub fn paired_step(&mut self, batch: &PairedBatch) -> Result<(), ProbeError> {
        let originals: Vec<Example> = batch.originals.iter().map(Sample::as_example).collect();
        let variants: Vec<Example> = batch.variants.iter().map(Sample::as_example).collect();
        let (_, g_orig) = self.loss_and_grad(&originals)?;
        let (_, g_var) = self.loss_and_grad(&variants)?;
        let avg: Vec<f64> = g_orig
            .iter()
            .zip(&g_var)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        self.apply_gradient(&avg);
        Ok(())
    }
}

fn log_softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Originals and their appearance-changed variants; `pairing[i]` is the
/// variant index paired with original `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    originals: Vec<Sample>,
    variants: Vec<Sample>,
    pairing: Vec<usize>,
}

impl PairedBatch {
    pub fn new(
        originals: Vec<Sample>,
        variants: Vec<Sample>,
        pairing: Vec<usize>,
    ) -> Result<Self, ProbeError> {
        if originals.is_empty() {
            return Err(ProbeError::EmptyBatch);
        }
        if originals.len() != variants.len() || pairing.len() != originals.len() {
            return Err(ProbeError::InvalidPairing(format!(
                "{} originals, {} variants, {} pairing entries",
                originals.len(),
                variants.len(),
                pairing.len()
            )));
        }
        let mut seen = vec![false; variants.len()];
        for (i, &j) in pairing.iter().enumerate() {
            if j >= variants.len() || std::mem::replace(&mut seen[j], true) {
                return Err(ProbeError::InvalidPairing(
                    "pairing is not a bijection".into(),
                ));
            }
            if originals[i].label != variants[j].label {
                return Err(ProbeError::InvalidPairing(format!(
                    "original {i} and variant {j} have different labels"
                )));
            }
        }
        Ok(Self {
            originals,
            variants,
            pairing,
        })
    }

    /// Pairs `originals[i]` with `variants[i]`.
    pub fn aligned(originals: Vec<Sample>, variants: Vec<Sample>) -> Result<Self, ProbeError> {
        let pairing = (0..originals.len()).collect();
        Self::new(originals, variants, pairing)
    }

    pub fn originals(&self) -> &[Sample] {
        &self.originals
    }

    pub fn variants(&self) -> &[Sample] {
        &self.variants
    }

    pub fn pairing(&self) -> &[usize] {
        &self.pairing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of samples held out for the final evaluation.
    pub holdout_fraction: f64,
    /// Steps per plateau check.
    pub plateau_window: usize,
    /// Minimum drop in windowed mean loss (nats) that counts as progress.
    pub plateau_tolerance: f64,
    pub decay_factor: f64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 64,
            learning_rate: 0.1,
            seed: 0,
            holdout_fraction: 0.2,
            plateau_window: 500,
            plateau_tolerance: 1e-3,
            decay_factor: 0.1,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub learning_rate: f64,
}

/// Per-dimension affine map fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            n += 1;
            for (f, &x) in row.iter().enumerate() {
                let d = x - mean[f];
                mean[f] += d / n as f64;
                m2[f] += d * (x - mean[f]);
            }
        }
        let scale = m2
            .iter()
            .map(|&s| {
                let sd = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub probe: SoftmaxProbe,
    pub standardizer: Standardizer,
    /// Accuracy on the held-out split (the training split when nothing is held out).
    pub eval_accuracy: f64,
    pub eval_loss: f64,
    /// Classifier-based relevance estimate on the evaluation split, in bits.
    pub eval_mi_bits: f64,
    pub eval_samples: usize,
}

impl TrainOutcome {
    pub fn final_learning_rate(&self) -> f64 {
        self.trace
            .last()
            .map_or(self.probe.learning_rate, |r| r.learning_rate)
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,loss,accuracy\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.step, r.loss, r.accuracy);
        }
        out
    }
}

/// Minibatch SGD on `rows` (each of length `dim`).
///
/// Indices are shuffled once with `config.seed`; the tail is held out. Each
/// epoch reshuffles the training indices and consumes them in consecutive
/// batches. Every `plateau_window` steps the windowed mean loss is compared to
/// the best previous window and the learning rate is multiplied by
/// `decay_factor` when it failed to improve by `plateau_tolerance`.
pub fn train_probe(
    rows: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome, ProbeError> {
    if rows.len() != labels.len() {
        return Err(ProbeError::InvalidConfig(format!(
            "{} feature rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(ProbeError::EmptyBatch);
    }
    if config.batch_size == 0 || config.plateau_window == 0 {
        return Err(ProbeError::InvalidConfig(
            "batch size and plateau window must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(ProbeError::InvalidConfig(format!(
            "holdout fraction {}",
            config.holdout_fraction
        )));
    }
    let dim = rows[0].len();
    for (r, &y) in rows.iter().zip(labels) {
        if r.len() != dim {
            return Err(ProbeError::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        if y >= num_classes {
            return Err(ProbeError::LabelOutOfRange {
                label: y,
                classes: num_classes,
            });
        }
    }

    let mut rng = SplitMix64::new(config.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    rng.shuffle(&mut order);
    let n_eval =
        ((rows.len() as f64 * config.holdout_fraction).round() as usize).min(rows.len() - 1);
    let (train_idx, eval_idx) = order.split_at(rows.len() - n_eval);
    let mut train_idx = train_idx.to_vec();
    let eval_idx = if eval_idx.is_empty() {
        train_idx.clone()
    } else {
        eval_idx.to_vec()
    };

    let standardizer = if config.standardize {
        Standardizer::fit(train_idx.iter().map(|&i| rows[i].as_slice()), dim)
    } else {
        Standardizer::identity(dim)
    };
    let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();

    let mut probe = SoftmaxProbe::new(dim, num_classes, config.learning_rate, config.seed)?;
    let mut trace = Vec::with_capacity(config.steps);
    let mut cursor = train_idx.len();
    let mut window_sum = 0.0;
    let mut best_window = f64::INFINITY;

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(train_idx.len()) {
            if cursor == train_idx.len() {
                rng.shuffle(&mut train_idx);
                cursor = 0;
            }
            let i = train_idx[cursor];
            cursor += 1;
            batch.push(Example {
                features: &x[i],
                label: labels[i],
            });
        }
        let correct = batch
            .iter()
            .filter(|e| probe.predict(e.features).ok() == Some(e.label))
            .count();
        let loss = probe.step(&batch)?;
        trace.push(TraceRow {
            step,
            loss,
            accuracy: correct as f64 / batch.len() as f64,
            learning_rate: probe.learning_rate,
        });

        window_sum += loss;
        if (step + 1) % config.plateau_window == 0 {
            let mean = window_sum / config.plateau_window as f64;
            if best_window.is_finite() && best_window - mean < config.plateau_tolerance {
                probe.learning_rate *= config.decay_factor;
            }
            best_window = best_window.min(mean);
            window_sum = 0.0;
        }
    }

    let mut log_probs = Vec::with_capacity(eval_idx.len());
    let mut eval_labels = Vec::with_capacity(eval_idx.len());
    let mut correct = 0usize;
    let mut loss = 0.0;
    for &i in &eval_idx {
        let lp = probe.log_probs(&x[i])?;
        if argmax(&lp) == labels[i] {
            correct += 1;
        }
        loss -= lp[labels[i]];
        log_probs.push(lp);
        eval_labels.push(labels[i]);
    }
    let eval_mi_bits = mi_from_classifier(&log_probs, &eval_labels)?;
    Ok(TrainOutcome {
        trace,
        probe,
        standardizer,
        eval_accuracy: correct as f64 / eval_idx.len() as f64,
        eval_loss: loss / eval_idx.len() as f64,
        eval_mi_bits,
        eval_samples: eval_idx.len(),
    })
}

/// Dense `f32` matrix in `MTX1` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, ProbeError> {
        if data.len() != rows * cols {
            return Err(ProbeError::Matrix(format!(
                "{} values for {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProbeError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ProbeError::Matrix("ragged rows".into()));
        }
        Self::new(
            rows.len(),
            cols,
            rows.iter().flatten().map(|&v| v as f32).collect(),
        )
    }

    pub fn row_vectors(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .take(self.rows)
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(MTX_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProbeError> {
        if bytes.len() < 12 || &bytes[..4] != MTX_MAGIC {
            return Err(ProbeError::Matrix("bad magic or short header".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(12));
        if expected != Some(bytes.len()) {
            return Err(ProbeError::Matrix(format!(
                "payload is {} bytes, header declares {rows}x{cols}",
                bytes.len()
            )));
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { rows, cols, data })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let bytes = std::fs::read(path).map_err(|e| ProbeError::Matrix(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ProbeError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| ProbeError::Matrix(e.to_string()))
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>, ProbeError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|e: std::num::ParseIntError| ProbeError::Labels {
                    line: i + 1,
                    msg: e.to_string(),
                })
        })
        .collect()
}
