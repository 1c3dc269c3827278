//! Discrete information measures, all in bits.
//!
//! A [`CategoricalJoint`] stores counts with feature values as rows and class
//! labels as columns. Zero-probability terms contribute nothing, which keeps
//! every measure total on valid input.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RelevanceError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("joint table has zero total count")]
    EmptyJoint,
    #[error("joint table shape is invalid: {0}")]
    BadShape(String),
    #[error("q is zero where p is positive at outcome {0}")]
    SupportMismatch(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

const SUM_TOLERANCE: f64 = 1e-12;

/// Probabilities over a finite set of outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, RelevanceError> {
        if probs.is_empty() {
            return Err(RelevanceError::InvalidDistribution("no outcomes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(RelevanceError::InvalidDistribution(format!(
                "probability {p} is negative or not finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(RelevanceError::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalised counts. Errors when all counts are zero.
    pub fn from_counts(counts: &[u64]) -> Result<Self, RelevanceError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(RelevanceError::InvalidDistribution(
                "all counts are zero".into(),
            ));
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn uniform(k: usize) -> Result<Self, RelevanceError> {
        if k == 0 {
            return Err(RelevanceError::InvalidDistribution("no outcomes".into()));
        }
        Ok(Self {
            probs: vec![1.0 / k as f64; k],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `Σ p log2(1/p)`.
pub fn entropy(d: &Distribution) -> f64 {
    d.probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Entropy of raw counts, 0 for an all-zero row.
fn count_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Value × label count table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalJoint {
    num_values: usize,
    num_labels: usize,
    counts: Vec<u64>,
}

impl CategoricalJoint {
    pub fn new(
        num_values: usize,
        num_labels: usize,
        counts: Vec<u64>,
    ) -> Result<Self, RelevanceError> {
        if num_values == 0 || num_labels == 0 {
            return Err(RelevanceError::BadShape(format!(
                "{num_values}x{num_labels}"
            )));
        }
        if counts.len() != num_values * num_labels {
            return Err(RelevanceError::BadShape(format!(
                "{} counts for {num_values}x{num_labels}",
                counts.len()
            )));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(RelevanceError::EmptyJoint);
        }
        Ok(Self {
            num_values,
            num_labels,
            counts,
        })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, RelevanceError> {
        let num_labels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_labels) {
            return Err(RelevanceError::BadShape("ragged rows".into()));
        }
        Self::new(rows.len(), num_labels, rows.concat())
    }

    /// Parses integer counts, one row per line, comma-separated. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<Self, RelevanceError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<u64>().map_err(|e| RelevanceError::Csv {
                        line: i + 1,
                        msg: format!("{:?}: {e}", f.trim()),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn num_values(&self) -> usize {
        self.num_values
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn count(&self, value: usize, label: usize) -> u64 {
        self.counts[value * self.num_labels + label]
    }

    pub fn row(&self, value: usize) -> &[u64] {
        &self.counts[value * self.num_labels..(value + 1) * self.num_labels]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn label_counts(&self) -> Vec<u64> {
        (0..self.num_labels)
            .map(|y| (0..self.num_values).map(|x| self.count(x, y)).sum())
            .collect()
    }

    pub fn value_counts(&self) -> Vec<u64> {
        (0..self.num_values)
            .map(|x| self.row(x).iter().sum())
            .collect()
    }

    pub fn joint_distribution(&self) -> Distribution {
        Distribution::from_counts(&self.counts).expect("total is positive")
    }

    /// Outer product of the two marginals, in the same layout as the joint.
    pub fn marginal_product(&self) -> Distribution {
        let n = self.total() as f64;
        let px = self.value_counts();
        let py = self.label_counts();
        let mut probs = Vec::with_capacity(self.counts.len());
        for &cx in &px {
            for &cy in &py {
                probs.push((cx as f64 / n) * (cy as f64 / n));
            }
        }
        Distribution { probs }
    }

    pub fn label_entropy(&self) -> f64 {
        count_entropy(&self.label_counts())
    }

    pub fn value_entropy(&self) -> f64 {
        count_entropy(&self.value_counts())
    }
}

/// `H(labels) − Σ_v |D^v|/|D| · H(labels | v)`.
pub fn information_gain(j: &CategoricalJoint) -> f64 {
    let n = j.total() as f64;
    let conditional: f64 = (0..j.num_values)
        .map(|v| {
            let row = j.row(v);
            let size: u64 = row.iter().sum();
            if size == 0 {
                0.0
            } else {
                size as f64 / n * count_entropy(row)
            }
        })
        .sum();
    j.label_entropy() - conditional
}

/// `Σ p(x,y) log2(p(x,y) / (p(x) p(y)))`.
pub fn mutual_information(j: &CategoricalJoint) -> f64 {
    let n = j.total() as f64;
    let px = j.value_counts();
    let py = j.label_counts();
    let mut sum = 0.0;
    for x in 0..j.num_values {
        for y in 0..j.num_labels {
            let c = j.count(x, y);
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            sum += pxy * ((c as f64 * n) / (px[x] as f64 * py[y] as f64)).log2();
        }
    }
    sum
}

/// `Σ p log2(p/q)`; requires `q_i = 0 ⇒ p_i = 0`.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64, RelevanceError> {
    if p.len() != q.len() {
        return Err(RelevanceError::LengthMismatch(p.len(), q.len()));
    }
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(RelevanceError::SupportMismatch(i));
        }
        sum += pi * (pi / qi).log2();
    }
    Ok(sum)
}

/// Empirical relevance of a predictor: `H(empirical labels) − mean CE` in bits.
///
/// `pred_log_probs[i]` holds natural-log class probabilities for sample `i`.
/// A classifier worse than the label prior yields a negative value, which is
/// returned unchanged.
pub fn mi_from_classifier(
    pred_log_probs: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64, RelevanceError> {
    if pred_log_probs.len() != labels.len() {
        return Err(RelevanceError::LengthMismatch(
            pred_log_probs.len(),
            labels.len(),
        ));
    }
    if labels.is_empty() {
        return Err(RelevanceError::EmptyJoint);
    }
    let classes = pred_log_probs[0].len();
    let mut label_counts = vec![0u64; classes];
    let mut ce_nats = 0.0;
    for (lp, &y) in pred_log_probs.iter().zip(labels) {
        if lp.len() != classes {
            return Err(RelevanceError::LengthMismatch(lp.len(), classes));
        }
        if y >= classes {
            return Err(RelevanceError::LabelOutOfRange { label: y, classes });
        }
        label_counts[y] += 1;
        ce_nats -= lp[y];
    }
    let mean_ce_bits = ce_nats / labels.len() as f64 / std::f64::consts::LN_2;
    Ok(count_entropy(&label_counts) - mean_ce_bits)
}
