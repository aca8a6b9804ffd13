//! Datasets: synthetic ordinal manifolds, CSV ingestion and the label
//! manipulations used by the robustness experiments (permutation,
//! subsampling, label-range exclusion).

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
pub const DEFAULT_LABEL_GRID: usize = 41;
const SINUSOIDS: usize = 5;
const SUBSAMPLE_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        match token.trim() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `(cos 4πm, sin 4πm, m)` rotated into `ℝ^D`.
    Helix,
    /// Each coordinate a sum of random sinusoids of the label.
    SmoothRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
    pub label_grid: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Helix,
            n: 2000,
            input_dim: 16,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            label_grid: DEFAULT_LABEL_GRID,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::invalid(format!("n = {} < 10", self.n)));
        }
        if self.input_dim < 3 {
            return Err(Error::invalid(format!("input_dim = {} < 3", self.input_dim)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_sigma = {} must be finite and >= 0",
                self.noise_sigma
            )));
        }
        if self.label_grid < 2 {
            return Err(Error::invalid(format!("label_grid = {} < 2", self.label_grid)));
        }
        Ok(())
    }
}

/// Inputs, labels and a split assignment per sample, plus an optional
/// categorical group id per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<f64>,
    pub splits: Vec<Split>,
    pub groups: Option<Vec<usize>>,
    pub feature_names: Vec<String>,
}

/// Rows of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub indices: Vec<usize>,
    pub inputs: Array2<f64>,
    pub labels: Vec<f64>,
    pub groups: Option<Vec<usize>>,
}

fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<f64>,
        splits: Vec<Split>,
        groups: Option<Vec<usize>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = inputs.nrows();
        if labels.len() != n || splits.len() != n || groups.as_ref().is_some_and(|g| g.len() != n) {
            return Err(Error::invalid("inputs, labels, splits and groups differ in length"));
        }
        if let Some((i, _)) = labels.iter().enumerate().find(|(_, l)| !l.is_finite()) {
            return Err(Error::invalid(format!("label {i} is not finite")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("inputs contain non-finite values"));
        }
        let feature_names = feature_names.unwrap_or_else(|| (0..inputs.ncols()).map(|j| format!("x{j}")).collect());
        if feature_names.len() != inputs.ncols() {
            return Err(Error::invalid("feature names do not match the input width"));
        }
        let ds = Self {
            inputs,
            labels,
            splits,
            groups,
            feature_names,
        };
        if distinct_count(&ds.split_labels(Split::Train)) < 2 {
            return Err(Error::invalid("training split needs at least 2 distinct labels"));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_labels(&self, split: Split) -> Vec<f64> {
        self.split_indices(split).iter().map(|&i| self.labels[i]).collect()
    }

    pub fn split(&self, split: Split) -> SplitData {
        let indices = self.split_indices(split);
        SplitData {
            inputs: self.inputs.select(Axis(0), &indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: self.groups.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
            indices,
        }
    }

    /// Keep the listed rows, in order.
    fn select(&self, rows: &[usize]) -> Result<Self> {
        Dataset::new(
            self.inputs.select(Axis(0), rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
            rows.iter().map(|&i| self.splits[i]).collect(),
            self.groups.as_ref().map(|g| rows.iter().map(|&i| g[i]).collect()),
            Some(self.feature_names.clone()),
        )
    }

    /// Write with columns `features…, label_column, split[, group]`.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(label_column.to_string());
        header.push("split".into());
        if self.groups.is_some() {
            header.push("group".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.inputs.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.labels[i]));
            rec.push(self.splits[i].as_str().into());
            if let Some(g) = &self.groups {
                rec.push(g[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Seeded 80/10/10 assignment.
fn random_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, &[1]));
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = (0.1 * n as f64).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            splits[i] = Split::Train;
        } else if pos < n_train + n_val {
            splits[i] = Split::Val;
        }
    }
    splits
}

/// `D × 3` matrix with orthonormal columns (Gram–Schmidt on Gaussian draws).
fn orthonormal_frame(dim: usize, r: &mut rng::Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut frame = Array2::<f64>::zeros((dim, 3));
    let mut k = 0;
    while k < 3 {
        let mut v: Array1<f64> = (0..dim).map(|_| normal.sample(r)).collect();
        for j in 0..k {
            let q = frame.column(j);
            let proj = q.dot(&v);
            v = v - &q * proj;
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            frame.column_mut(k).assign(&(v / norm));
            k += 1;
        }
    }
    frame
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let grid = spec.label_grid;
    let mut label_rng = rng::substream(spec.seed, &[0]);
    let labels: Vec<f64> = (0..spec.n)
        .map(|_| label_rng.random_range(0..grid) as f64 / (grid - 1) as f64)
        .collect();

    let mut map_rng = rng::substream(spec.seed, &[2]);
    let mut inputs = Array2::<f64>::zeros((spec.n, spec.input_dim));
    match spec.kind {
        SyntheticKind::Helix => {
            let frame = orthonormal_frame(spec.input_dim, &mut map_rng);
            let angle = 4.0 * std::f64::consts::PI;
            for (i, &m) in labels.iter().enumerate() {
                let base = ndarray::arr1(&[(angle * m).cos(), (angle * m).sin(), m]);
                inputs.row_mut(i).assign(&frame.dot(&base));
            }
        }
        SyntheticKind::SmoothRandom => {
            let normal = Normal::new(0.0, 1.0 / (SINUSOIDS as f64).sqrt()).expect("valid sd");
            let waves: Vec<[(f64, f64, f64); SINUSOIDS]> = (0..spec.input_dim)
                .map(|_| {
                    std::array::from_fn(|_| {
                        (
                            normal.sample(&mut map_rng),
                            map_rng.random_range(0.5..2.0),
                            map_rng.random_range(0.0..std::f64::consts::TAU),
                        )
                    })
                })
                .collect();
            for (i, &m) in labels.iter().enumerate() {
                for (k, w) in waves.iter().enumerate() {
                    inputs[[i, k]] = w
                        .iter()
                        .map(|(a, f, phi)| a * (std::f64::consts::TAU * f * m + phi).sin())
                        .sum();
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        let mut noise_rng = rng::substream(spec.seed, &[3]);
        inputs.mapv_inplace(|v| v + noise.sample(&mut noise_rng));
    }
    Dataset::new(inputs, labels, random_splits(spec.n, spec.seed), None, None)
}

/// Load a headed CSV. Every column other than the label, the group and an
/// optional `split` column is a feature. Without a `split` column, rows are
/// assigned 80/10/10 by a seeded hash of the row index. Parse errors report
/// 1-based data row numbers.
pub fn load_csv(path: &Path, label_column: &str, group_column: Option<&str>, seed: u64) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_idx = find(label_column)?;
    let group_idx = group_column.map(find).transpose()?;
    let split_idx = header.iter().position(|h| h == "split");
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&j| j != label_idx && Some(j) != group_idx && Some(j) != split_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::Format("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    let mut group_ids: HashMap<String, usize> = HashMap::new();
    let mut groups = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let number = |j: usize| -> Result<f64> {
            let cell = record.get(j).unwrap_or("").trim();
            cell.parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: header[j].clone(),
                message: format!("`{cell}`: {e}"),
            })
        };
        for &j in &feature_idx {
            values.push(number(j)?);
        }
        labels.push(number(label_idx)?);
        splits.push(match split_idx {
            Some(j) => {
                let cell = record.get(j).unwrap_or("");
                Split::parse(cell).ok_or_else(|| Error::Parse {
                    row,
                    column: "split".into(),
                    message: format!("`{cell}` is not train/val/test"),
                })?
            }
            None => match rng::derive_seed(seed, &[r as u64]) % 10 {
                0..=7 => Split::Train,
                8 => Split::Val,
                _ => Split::Test,
            },
        });
        if let Some(j) = group_idx {
            let token = record.get(j).unwrap_or("").trim().to_string();
            let next = group_ids.len();
            groups.push(*group_ids.entry(token).or_insert(next));
        }
    }
    let n = labels.len();
    let inputs = Array2::from_shape_vec((n, feature_idx.len()), values).expect("rectangular records");
    Dataset::new(
        inputs,
        labels,
        splits,
        group_idx.map(|_| groups),
        Some(feature_idx.iter().map(|&j| header[j].clone()).collect()),
    )
}

/// Seeded bijection on the unique label values, never the identity.
pub fn permute_labels(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let mut unique = dataset.labels.clone();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if unique.len() < 2 {
        return Err(Error::invalid("label permutation needs at least 2 distinct labels"));
    }
    let mut attempt = 0u64;
    let image = loop {
        let mut image = unique.clone();
        image.shuffle(&mut rng::substream(seed, &[attempt]));
        if image != unique {
            break image;
        }
        attempt += 1;
    };
    let labels = dataset
        .labels
        .iter()
        .map(|l| {
            let k = unique.binary_search_by(|u| u.total_cmp(l)).expect("label present");
            image[k]
        })
        .collect();
    Ok(Dataset {
        labels,
        ..dataset.clone()
    })
}

/// Uniform subsample of the training split to `n_train` rows; other splits untouched.
pub fn subsample(dataset: &Dataset, n_train: usize, seed: u64) -> Result<Dataset> {
    let train = dataset.split_indices(Split::Train);
    if n_train > train.len() {
        return Err(Error::invalid(format!(
            "n_train {n_train} exceeds training size {}",
            train.len()
        )));
    }
    if n_train == train.len() {
        return Ok(dataset.clone());
    }
    for attempt in 0..SUBSAMPLE_ATTEMPTS {
        let mut r = rng::substream(seed, &[attempt]);
        let mut keep: Vec<usize> = rand::seq::index::sample(&mut r, train.len(), n_train)
            .into_iter()
            .map(|k| train[k])
            .collect();
        let labels: Vec<f64> = keep.iter().map(|&i| dataset.labels[i]).collect();
        if distinct_count(&labels) < 2 {
            continue;
        }
        keep.extend((0..dataset.len()).filter(|&i| dataset.splits[i] != Split::Train));
        keep.sort_unstable();
        return dataset.select(&keep);
    }
    Err(Error::invalid(format!(
        "no subsample of {n_train} training rows with 2 distinct labels in {SUBSAMPLE_ATTEMPTS} attempts"
    )))
}

/// Drop training rows whose label lies in any closed interval `[lo, hi]`.
pub fn filter_label_range(dataset: &Dataset, excluded: &[(f64, f64)]) -> Result<Dataset> {
    if let Some(&(lo, hi)) = excluded
        .iter()
        .find(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
    {
        return Err(Error::invalid(format!("malformed interval [{lo}, {hi}]")));
    }
    let removed = |i: usize| {
        dataset.splits[i] == Split::Train && excluded.iter().any(|&(lo, hi)| (lo..=hi).contains(&dataset.labels[i]))
    };
    let keep: Vec<usize> = (0..dataset.len()).filter(|&i| !removed(i)).collect();
    if !keep.iter().any(|&i| dataset.splits[i] == Split::Train) {
        return Err(Error::invalid("label-range filter removes every training row"));
    }
    dataset.select(&keep)
}
