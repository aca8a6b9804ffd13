//! Labeled embedding batches, label grouping and the label range.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with a norm at or below this are rejected by normalization.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Tolerance on unit-norm rows of a normalized batch.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// `N` embeddings of dimension `d_e` with one scalar label each.
///
/// The rows are either raw encoder outputs or, when [`is_normalized`] is set,
/// unit vectors.
///
/// [`is_normalized`]: LabeledBatch::is_normalized
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    embeddings: Array2<f64>,
    labels: Vec<f64>,
    normalized: bool,
}

impl LabeledBatch {
    /// Wrap raw (pre-normalization) embeddings.
    pub fn new(embeddings: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        validate(&embeddings, &labels)?;
        Ok(Self {
            embeddings,
            labels,
            normalized: false,
        })
    }

    /// Normalize every row of `raw` and wrap the result.
    pub fn normalized(raw: &Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        validate(raw, &labels)?;
        Ok(Self {
            embeddings: normalize_embeddings(raw)?,
            labels,
            normalized: true,
        })
    }

    /// Wrap rows that are already unit vectors; fails if any row is off by more
    /// than [`UNIT_NORM_TOL`].
    pub fn from_unit_rows(embeddings: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        validate(&embeddings, &labels)?;
        for (i, row) in embeddings.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self {
            embeddings,
            labels,
            normalized: true,
        })
    }

    /// The same labels with unit-normalized rows.
    pub fn to_normalized(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        Self::normalized(&self.embeddings, self.labels.clone())
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(i)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Replace the rows, keeping labels. Used by finite-difference checks.
    pub fn with_embeddings(&self, embeddings: Array2<f64>) -> Result<Self> {
        if self.normalized {
            Self::from_unit_rows(embeddings, self.labels.clone())
        } else {
            Self::new(embeddings, self.labels.clone())
        }
    }
}

fn validate(embeddings: &Array2<f64>, labels: &[f64]) -> Result<()> {
    let (n, d) = embeddings.dim();
    if n != labels.len() {
        return Err(Error::invalid(format!(
            "{n} embedding rows but {} labels",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::invalid(format!("batch needs at least 2 samples, got {n}")));
    }
    if d < 2 {
        return Err(Error::invalid(format!("embedding dimension must be >= 2, got {d}")));
    }
    if let Some((i, _)) = labels.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(Error::invalid(format!("label {i} is not finite")));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("embeddings contain non-finite entries"));
    }
    Ok(())
}

/// Divide each row by its Euclidean norm.
pub fn normalize_embeddings(raw: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = raw.clone();
    for (row, mut r) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = r.dot(&r).sqrt();
        if !(norm > MIN_ROW_NORM) {
            return Err(Error::DegenerateEmbedding { row, norm });
        }
        r /= norm;
    }
    Ok(out)
}

/// Label binning rule. A zero width groups labels by exact equality.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuantizationRule {
    bin_width: f64,
}

impl QuantizationRule {
    pub fn new(bin_width: f64) -> Result<Self> {
        if !(bin_width >= 0.0) || !bin_width.is_finite() {
            return Err(Error::invalid(format!("bin width must be >= 0, got {bin_width}")));
        }
        Ok(Self { bin_width })
    }

    pub fn exact() -> Self {
        Self { bin_width: 0.0 }
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    /// The bin center for `value`, or `value` itself for exact grouping.
    pub fn quantize(&self, value: f64) -> f64 {
        if self.bin_width > 0.0 {
            (value / self.bin_width).floor() * self.bin_width + self.bin_width / 2.0
        } else {
            value
        }
    }

    pub fn same_bin(&self, a: f64, b: f64) -> bool {
        self.quantize(a) == self.quantize(b)
    }
}

/// Samples partitioned by (quantized) label, groups in ascending label order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGroups {
    unique_labels: Vec<f64>,
    group_indices: Vec<Vec<usize>>,
    rank_of_sample: Vec<usize>,
    rule: QuantizationRule,
}

impl LabelGroups {
    /// Quantized label of each group, strictly increasing.
    pub fn unique_labels(&self) -> &[f64] {
        &self.unique_labels
    }

    pub fn group_indices(&self) -> &[Vec<usize>] {
        &self.group_indices
    }

    pub fn group(&self, rank: usize) -> &[usize] {
        &self.group_indices[rank]
    }

    /// Group rank of each sample.
    pub fn rank_of_sample(&self) -> &[usize] {
        &self.rank_of_sample
    }

    pub fn rank_of(&self, sample: usize) -> usize {
        self.rank_of_sample[sample]
    }

    /// `k_m` for the group containing `sample`.
    pub fn group_size_of(&self, sample: usize) -> usize {
        self.group_indices[self.rank_of_sample[sample]].len()
    }

    pub fn num_groups(&self) -> usize {
        self.unique_labels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.rank_of_sample.len()
    }

    pub fn rule(&self) -> QuantizationRule {
        self.rule
    }
}

/// Partition sample indices by quantized label. Within a group, samples keep
/// their input order.
pub fn group_by_label(labels: &[f64], rule: QuantizationRule) -> Result<LabelGroups> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot group an empty label vector"));
    }
    if let Some(i) = labels.iter().position(|l| !l.is_finite()) {
        return Err(Error::invalid(format!("label {i} is not finite")));
    }
    let mut keyed: Vec<(f64, usize)> = labels.iter().enumerate().map(|(i, &l)| (rule.quantize(l), i)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut unique_labels = Vec::new();
    let mut group_indices: Vec<Vec<usize>> = Vec::new();
    let mut rank_of_sample = vec![0; labels.len()];
    for (key, idx) in keyed {
        if unique_labels.last() != Some(&key) {
            unique_labels.push(key);
            group_indices.push(Vec::new());
        }
        let rank = unique_labels.len() - 1;
        group_indices[rank].push(idx);
        rank_of_sample[idx] = rank;
    }
    Ok(LabelGroups {
        unique_labels,
        group_indices,
        rank_of_sample,
        rule,
    })
}

/// Global label extent of a training split; fixed once computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRange {
    min: f64,
    max: f64,
}

impl LabelRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::invalid("label range bounds must be finite"));
        }
        if !(max > min) {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Self { min, max })
    }

    /// `[0, 1]`.
    pub fn unit() -> Self {
        Self { min: 0.0, max: 1.0 }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Min and max over the training labels.
pub fn label_range(train_labels: &[f64]) -> Result<LabelRange> {
    let first = *train_labels
        .first()
        .ok_or_else(|| Error::invalid("cannot take the range of no labels"))?;
    let (min, max) = train_labels
        .iter()
        .fold((first, first), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    LabelRange::new(min, max)
}
