//! Representation and regression analytics.
//!
//! - [`compute_metrics`]: MAE, MSE, geometric-mean error and Pearson correlation.
//! - [`compute_nlfd`]: normalized Lipschitz factor distribution, i.e.
//!   `|ΔT| / ‖Δφ‖ · √d` to each point's nearest neighbor in a per-coordinate
//!   standardized representation.
//! - [`z_gap`] / [`bootstrap_gap`]: comparing two factor distributions and
//!   relating the gap to the regression-performance gap.
//! - [`track_logits`]: positive / hardest-negative similarity tracking.
//! - [`ordinality_score`]: rank agreement between labels and the first
//!   principal direction of the embeddings.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{LabelGroups, LabeledBatch};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

/// Offset inside the log of the geometric-mean error.
pub const GM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub gm: f64,
    /// `None` when predictions or targets are constant.
    pub pearson: Option<f64>,
}

pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.len() < 2 {
        return Err(Error::invalid("metrics need at least 2 samples"));
    }
    let n = predictions.len() as f64;
    let errors: Vec<f64> = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).collect();
    Ok(Metrics {
        mae: errors.iter().sum::<f64>() / n,
        mse: errors.iter().map(|e| e * e).sum::<f64>() / n,
        gm: (errors.iter().map(|e| (e + GM_EPS).ln()).sum::<f64>() / n).exp(),
        pearson: stats::pearson(predictions, targets),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlfdResult {
    /// One factor per point whose neighbor pair was kept.
    pub factors: Vec<f64>,
    /// Query point of each factor.
    pub points: Vec<usize>,
    /// Nearest neighbor of every point.
    pub neighbors: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub skewness: Option<f64>,
    pub dim: usize,
    /// Pairs dropped for zero embedding distance or zero target difference.
    pub excluded_pairs: usize,
    pub zero_distance_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl NlfdResult {
    pub fn is_degenerate(&self) -> bool {
        self.factors.is_empty()
    }

    /// Single-column CSV of the factors.
    pub fn write_factors_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["factor"])?;
        for f in &self.factors {
            w.write_record([format!("{f:?}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Zero mean, unit (population) variance per column; constant columns become 0.
pub fn standardize_columns(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    let n = x.nrows() as f64;
    for mut col in out.axis_iter_mut(Axis(1)) {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|v| (v - m) / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}

pub fn compute_nlfd(embeddings: &Array2<f64>, targets: &[f64]) -> Result<NlfdResult> {
    let (n, d) = embeddings.dim();
    if n < 3 {
        return Err(Error::invalid(format!("NLFD needs at least 3 points, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::invalid(format!("{n} embeddings but {} targets", targets.len())));
    }
    let z = standardize_columns(embeddings);
    // Every column constant means every pairwise distance is zero.
    if z.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateRepresentation(
            "all pairwise embedding distances are zero".into(),
        ));
    }
    let nearest: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = z.row(i);
            let mut best = (usize::MAX, f64::INFINITY);
            for j in (0..n).filter(|&j| j != i) {
                let diff = &zi - &z.row(j);
                let d2 = diff.dot(&diff);
                if d2 < best.1 {
                    best = (j, d2);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect();
    let scale = (d as f64).sqrt();
    let mut factors = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    let mut zero_distance_pairs = 0;
    let mut excluded_pairs = 0;
    for (i, &(j, dist)) in nearest.iter().enumerate() {
        let dt = (targets[i] - targets[j]).abs();
        if dist == 0.0 {
            zero_distance_pairs += 1;
            excluded_pairs += 1;
        } else if dt == 0.0 {
            excluded_pairs += 1;
        } else {
            factors.push(dt / dist * scale);
            points.push(i);
        }
    }
    let note = factors
        .is_empty()
        .then(|| "every neighbor pair was excluded (zero target difference or distance)".to_string());
    let (mean, std) = if factors.is_empty() {
        (0.0, 0.0)
    } else {
        (stats::mean(&factors), stats::std_dev(&factors))
    };
    Ok(NlfdResult {
        skewness: stats::skewness(&factors),
        factors,
        points,
        neighbors: nearest.into_iter().map(|(j, _)| j).collect(),
        mean,
        std,
        dim: d,
        excluded_pairs,
        zero_distance_pairs,
        note,
    })
}

/// `(μ_b − μ_a)/√(σ_a² + σ_b²)`: positive when `a` has smaller factors than `b`.
pub fn z_gap(a: &NlfdResult, b: &NlfdResult) -> Result<f64> {
    if a.is_degenerate() || b.is_degenerate() {
        return Err(Error::Undefined("Z-score gap of an empty factor distribution".into()));
    }
    let denom = (a.std.powi(2) + b.std.powi(2)).sqrt();
    if denom == 0.0 {
        return Err(Error::Undefined("Z-score gap with zero spread on both sides".into()));
    }
    Ok((b.mean - a.mean) / denom)
}

/// Representation and predictions of one model on a shared evaluation set.
#[derive(Debug, Clone, Copy)]
pub struct ModelView<'a> {
    pub embeddings: &'a Array2<f64>,
    pub predictions: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZGapReport {
    /// Z-score gap on the full evaluation set.
    pub z: f64,
    /// `(NLFD Z gap, Pearson gap)` per usable resample.
    pub pairs: Vec<(f64, f64)>,
    /// `None` when either gap series is constant.
    pub pearson_of_gaps: Option<f64>,
    pub resamples: usize,
    /// Resamples where a gap was undefined.
    pub skipped: usize,
}

/// Bootstrap the NLFD gap between `candidate` and `reference` together with
/// the gap in prediction–target Pearson correlation (`candidate − reference`).
pub fn bootstrap_gap(
    candidate: ModelView<'_>,
    reference: ModelView<'_>,
    targets: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<ZGapReport> {
    if resamples < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 resamples"));
    }
    let n = targets.len();
    for view in [&candidate, &reference] {
        if view.embeddings.nrows() != n || view.predictions.len() != n {
            return Err(Error::invalid("model outputs and targets differ in length"));
        }
    }
    let z = z_gap(
        &compute_nlfd(candidate.embeddings, targets)?,
        &compute_nlfd(reference.embeddings, targets)?,
    )?;

    let draws: Vec<Option<(f64, f64)>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, &[b as u64]);
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let pick = |v: &ModelView<'_>| {
                (
                    v.embeddings.select(Axis(0), &idx),
                    idx.iter().map(|&i| v.predictions[i]).collect::<Vec<f64>>(),
                )
            };
            let (ea, pa) = pick(&candidate);
            let (eb, pb) = pick(&reference);
            let zg = z_gap(&compute_nlfd(&ea, &t).ok()?, &compute_nlfd(&eb, &t).ok()?).ok()?;
            let perf = stats::pearson(&pa, &t)? - stats::pearson(&pb, &t)?;
            Some((zg, perf))
        })
        .collect();
    let pairs: Vec<(f64, f64)> = draws.iter().flatten().copied().collect();
    let skipped = resamples - pairs.len();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let pearson_of_gaps = if pairs.len() >= 2 {
        stats::pearson(&xs, &ys)
    } else {
        None
    };
    Ok(ZGapReport {
        z,
        pairs,
        pearson_of_gaps,
        resamples,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitStats {
    /// Mean inner product over real positive pairs; `None` without positives.
    pub avg_pos_logit: Option<f64>,
    /// Mean of the `k` largest inner products among real negative pairs.
    pub mean_top_k_neg_logit: Option<f64>,
}

/// Similarity tracking over unordered real pairs of a normalized batch.
pub fn track_logits(batch: &LabeledBatch, groups: &LabelGroups, k: usize) -> Result<LogitStats> {
    if !batch.is_normalized() {
        return Err(Error::invalid("logit tracking needs a normalized batch"));
    }
    let z = batch.embeddings();
    let gram = z.dot(&z.t());
    let n = batch.len();
    let (mut pos_sum, mut pos_count) = (0.0, 0usize);
    let mut neg = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let s = gram[[i, j]];
            if groups.rank_of(i) == groups.rank_of(j) {
                pos_sum += s;
                pos_count += 1;
            } else {
                neg.push(s);
            }
        }
    }
    let top = k.min(neg.len());
    let mean_top = (top > 0).then(|| {
        neg.select_nth_unstable_by(top - 1, |a, b| b.total_cmp(a));
        neg[..top].iter().sum::<f64>() / top as f64
    });
    Ok(LogitStats {
        avg_pos_logit: (pos_count > 0).then(|| pos_sum / pos_count as f64),
        mean_top_k_neg_logit: mean_top,
    })
}

/// `|Spearman(labels, projection on the first principal direction)|`.
pub fn ordinality_score(embeddings: &Array2<f64>, labels: &[f64]) -> Result<f64> {
    let (n, d) = embeddings.dim();
    if n < 3 || labels.len() != n {
        return Err(Error::invalid("ordinality needs at least 3 labeled points"));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid("ordinality needs at least 3 distinct labels"));
    }
    let mean = embeddings.mean_axis(Axis(0)).expect("non-empty");
    let centered = embeddings - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    if cov.diag().iter().all(|&v| v == 0.0) {
        return Err(Error::Undefined("embeddings have zero variance".into()));
    }
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("d >= 1");
    let direction: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let projection: Vec<f64> = centered
        .outer_iter()
        .map(|r| r.iter().zip(&direction).map(|(a, b)| a * b).sum())
        .collect();
    stats::spearman(labels, &projection)
        .map(f64::abs)
        .ok_or_else(|| Error::Undefined("projection onto the principal direction is constant".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::{group_by_label, QuantizationRule};
    use ndarray::array;

    #[test]
    fn metrics_examples() {
        let t = [1.0, 2.0, 3.0];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!((m.mae, m.mse), (0.0, 0.0));
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-15);

        let m = compute_metrics(&[1.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(m.mae, 2.5);
        assert_eq!(m.mse, 8.5);
        let expected = ((1.0 + GM_EPS) * (4.0 + GM_EPS)).sqrt();
        assert!((m.gm - expected).abs() < 1e-12);
        assert!((m.gm / 2.000001 - 1.0).abs() < 1e-6);
        assert!(m.pearson.is_none());

        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((compute_metrics(&neg, &t).unwrap().pearson.unwrap() + 1.0).abs() < 1e-15);
        assert!(compute_metrics(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn gm_scales_with_errors() {
        let t = [0.0; 5];
        let p = [0.3, 1.2, 2.0, 0.7, 5.0];
        let base = compute_metrics(&p, &t).unwrap().gm;
        let scaled: Vec<f64> = p.iter().map(|v| v * 3.0).collect();
        let gm3 = compute_metrics(&scaled, &t).unwrap().gm;
        assert!((gm3 / base - 3.0).abs() < 1e-5);
    }

    #[test]
    fn nlfd_three_points() {
        // 1-D representation: standardization of [0, 0.5, 2] then factors by hand.
        let e = array![[0.0], [0.5], [2.0]];
        let t = [0.0, 1.0, 5.0];
        let r = compute_nlfd(&e, &t).unwrap();
        let sd = {
            let m = 2.5 / 3.0;
            ((m * m + (0.5 - m) * (0.5 - m) + (2.0 - m) * (2.0 - m)) / 3.0f64).sqrt()
        };
        assert_eq!(r.neighbors, vec![1, 0, 1]);
        let expect = [1.0 / (0.5 / sd), 1.0 / (0.5 / sd), 4.0 / (1.5 / sd)];
        for (f, x) in r.factors.iter().zip(expect) {
            assert!((f - x).abs() < 1e-12);
        }
    }

    #[test]
    fn nlfd_factor_formula() {
        // Unit spread after standardization: ΔT = 1 across distance 0.5.
        let e = array![[-1.0], [1.0], [-1.0], [1.0]];
        let r = compute_nlfd(&e, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.zero_distance_pairs, 4);
        assert!(r.is_degenerate());

        let e = array![[0.0, 1.0], [0.0, 1.0], [3.0, 1.0]];
        let r = compute_nlfd(&e, &[0.0, 0.0, 1.0]).unwrap();
        assert!(r.excluded_pairs >= 2);
    }

    #[test]
    fn nlfd_constant_targets_are_all_excluded() {
        let e = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]];
        let r = compute_nlfd(&e, &[1.0; 4]).unwrap();
        assert!(r.factors.is_empty());
        assert_eq!(r.excluded_pairs, 4);
        assert!(r.note.is_some());
        let same = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            compute_nlfd(&same, &[0.0, 1.0, 2.0]),
            Err(Error::DegenerateRepresentation(_))
        ));
    }

    fn nlfd_with(mean: f64, std: f64) -> NlfdResult {
        NlfdResult {
            factors: vec![mean],
            points: vec![0],
            neighbors: vec![],
            mean,
            std,
            skewness: None,
            dim: 1,
            excluded_pairs: 0,
            zero_distance_pairs: 0,
            note: None,
        }
    }

    #[test]
    fn z_gap_cases() {
        let a = nlfd_with(2.0, 1.0);
        assert_eq!(z_gap(&a, &a).unwrap(), 0.0);
        let b = nlfd_with(3.0, 1.0);
        assert!((z_gap(&a, &b).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(z_gap(&a, &b).unwrap(), -z_gap(&b, &a).unwrap());
        assert!(z_gap(&nlfd_with(1.0, 0.0), &nlfd_with(2.0, 0.0)).is_err());
    }

    #[test]
    fn logit_tracking_examples() {
        let same =
            LabeledBatch::from_unit_rows(array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]], vec![0.0, 0.0, 1.0]).unwrap();
        let g = group_by_label(same.labels(), QuantizationRule::exact()).unwrap();
        let s = track_logits(&same, &g, 1000).unwrap();
        assert_eq!(s.avg_pos_logit, Some(1.0));
        assert_eq!(s.mean_top_k_neg_logit, Some(1.0));

        let ortho = LabeledBatch::from_unit_rows(array![[1.0, 0.0], [0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let g = group_by_label(ortho.labels(), QuantizationRule::exact()).unwrap();
        let s = track_logits(&ortho, &g, 10).unwrap();
        assert_eq!(s.avg_pos_logit, Some(0.0));
        assert_eq!(s.mean_top_k_neg_logit, None);
    }

    #[test]
    fn ordinality_linear_embedding() {
        let labels: Vec<f64> = (0..10).map(f64::from).collect();
        let e = Array2::from_shape_fn((10, 3), |(i, j)| if j == 0 { labels[i] } else { 0.0 });
        assert!((ordinality_score(&e, &labels).unwrap() - 1.0).abs() < 1e-12);
        assert!(ordinality_score(&Array2::zeros((10, 3)), &labels).is_err());
        assert!(ordinality_score(&e, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).is_err());
    }
}
