//! Executable checks of the loss's analytic properties.
//!
//! - [`check_distance_magnifying`]: DM weights strictly increase the
//!   gradient ratio between a far and a near negative.
//! - [`bound_trials`]: the loss never falls below its closed-form bound.
//! - [`construct_ordered_embeddings`] / [`infimum_gap`]: an ordered,
//!   locally linear embedding approaches the bound as `τ → 0⁺`.
//! - [`check_epsilon_ordered`]: the ε-ordered predicate.
//! - [`gradient_check_sweep`]: analytic vs finite-difference gradients
//!   across toggle combinations, window modes and mixing spaces.

use ndarray::{Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{group_by_label, label_range, LabelGroups, LabelRange, LabeledBatch, QuantizationRule};
use crate::error::{Error, Result};
use crate::loss::{
    anchor_logits, finite_difference_gradient, loss_lower_bound, max_relative_error, supremix_loss,
    supremix_loss_value, LossConfig, MixSpace,
};
use crate::mixgen::{build_contrast_sets, AnchorContrastSet, MixNegConfig, MixPosConfig, WindowMode};
use crate::rng;

/// Logit step of the numerical derivative in [`check_distance_magnifying`].
pub const LOGIT_STEP: f64 = 1e-5;
/// Slack allowed below the lower bound.
pub const BOUND_SLACK: f64 = 1e-9;
/// Step of the finite-difference gradient oracle.
pub const FD_STEP: f64 = 1e-4;
/// Tolerance of the gradient comparisons.
pub const GRAD_TOL: f64 = 1e-4;
/// Final infimum gap allowed at the smallest temperature, as a fraction of
/// `|𝓛*|` (plus [`INFIMUM_GAP_ABS`]). Calibrated on the 5 labels × 3 samples
/// construction, where the gap at τ = 0.05 is about 0.135·|𝓛*| for every seed.
pub const INFIMUM_GAP_FRACTION: f64 = 0.15;
pub const INFIMUM_GAP_ABS: f64 = 0.1;

const MAX_REDRAWS: usize = 10_000;

/// Random unit-norm batch with labels drawn from an evenly spaced grid on `[0, 1]`.
pub fn random_batch(n: usize, d: usize, grid: usize, seed: u64) -> Result<LabeledBatch> {
    if grid < 2 {
        return Err(Error::invalid("label grid needs at least 2 points"));
    }
    let mut r = rng::stream(seed);
    let raw = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
    let labels = (0..n)
        .map(|_| r.random_range(0..grid) as f64 / (grid - 1) as f64)
        .collect();
    LabeledBatch::normalized(&raw, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmCheckReport {
    pub trials: usize,
    pub positivity_failures: usize,
    pub ratio_failures: usize,
    /// Smallest `(weighted ratio)/(unweighted ratio) − 1` seen.
    pub min_ratio_margin: f64,
    /// Largest closed-form vs perturbation error, relative to the anchor's
    /// largest logit gradient.
    pub max_derivative_rel_err: f64,
    /// Negative pairs redrawn because of equal label distances.
    pub redraws: usize,
}

impl DmCheckReport {
    pub fn passed(&self) -> bool {
        self.positivity_failures == 0 && self.ratio_failures == 0 && self.max_derivative_rel_err < GRAD_TOL
    }

    fn merge(mut self, other: &DmCheckReport) -> Self {
        self.trials += other.trials;
        self.positivity_failures += other.positivity_failures;
        self.ratio_failures += other.ratio_failures;
        self.min_ratio_margin = self.min_ratio_margin.min(other.min_ratio_margin);
        self.max_derivative_rel_err = self.max_derivative_rel_err.max(other.max_derivative_rel_err);
        self.redraws += other.redraws;
        self
    }

    fn empty() -> Self {
        Self {
            trials: 0,
            positivity_failures: 0,
            ratio_failures: 0,
            min_ratio_margin: f64::INFINITY,
            max_derivative_rel_err: 0.0,
            redraws: 0,
        }
    }
}

struct Trial {
    positivity_failed: bool,
    ratio_failed: bool,
    margin: f64,
    rel_err: f64,
    redraws: usize,
}

/// Compare the gradients of two negative logits of one anchor, with and
/// without distance-magnifying weights.
pub fn check_distance_magnifying(
    batch: &LabeledBatch,
    sets: &[AnchorContrastSet],
    config: &LossConfig,
    trials: usize,
    seed: u64,
) -> Result<DmCheckReport> {
    let groups = group_by_label(batch.labels(), QuantizationRule::exact())?;
    if groups.num_groups() < 3 {
        return Err(Error::invalid(
            "distance-magnifying check needs at least 3 distinct labels",
        ));
    }
    let logits = anchor_logits(batch, sets, config)?;
    // Anchors with a positive and two negatives at different label distances.
    let eligible: Vec<usize> = logits
        .iter()
        .enumerate()
        .filter(|(_, a)| {
            let mut dist: Vec<f64> = a
                .labels
                .iter()
                .zip(&a.positive)
                .filter(|(_, &p)| !p)
                .map(|(l, _)| (l - a.anchor_label).abs())
                .collect();
            dist.sort_by(f64::total_cmp);
            dist.dedup();
            a.num_positives() > 0 && dist.len() >= 2
        })
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::invalid(
            "no anchor has a positive and two negatives at distinct label distances",
        ));
    }
    let tau = config.tau;
    let results: Vec<Trial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::substream(seed, &[t as u64]);
            let a = &logits[*eligible.choose(&mut r).expect("non-empty")];
            let negatives: Vec<usize> = (0..a.logits.len()).filter(|&e| !a.positive[e]).collect();
            let dist = |e: usize| (a.labels[e] - a.anchor_label).abs();
            let mut redraws = 0;
            let (far, near) = loop {
                let e1 = *negatives.choose(&mut r).expect("two negatives");
                let e2 = *negatives.choose(&mut r).expect("two negatives");
                if dist(e1) != dist(e2) {
                    break if dist(e1) > dist(e2) { (e1, e2) } else { (e2, e1) };
                }
                redraws += 1;
                assert!(redraws < MAX_REDRAWS, "eligible anchor without distinct distances");
            };

            let weighted = a.logit_gradients(tau);
            let uniform = a.logit_gradients_with(&vec![1.0; a.logits.len()], tau);
            let numeric = |e: usize| {
                let mut up = a.logits.clone();
                let mut down = a.logits.clone();
                up[e] += LOGIT_STEP;
                down[e] -= LOGIT_STEP;
                (a.term_with(&up, &a.weights, tau) - a.term_with(&down, &a.weights, tau)) / (2.0 * LOGIT_STEP)
            };
            let scale = weighted.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            let rel_err = [far, near]
                .iter()
                .map(|&e| (weighted[e] - numeric(e)).abs() / scale)
                .fold(0.0, f64::max);
            let (g1, g2) = (weighted[far], weighted[near]);
            let ratio_w = g1 / g2;
            let ratio_1 = uniform[far] / uniform[near];
            let margin = ratio_w / ratio_1 - 1.0;
            Trial {
                positivity_failed: !(g1 > 0.0 && g2 > 0.0),
                ratio_failed: !(ratio_w > ratio_1),
                margin,
                rel_err,
                redraws,
            }
        })
        .collect();
    let mut report = DmCheckReport::empty();
    report.trials = trials;
    for t in &results {
        report.positivity_failures += usize::from(t.positivity_failed);
        report.ratio_failures += usize::from(t.ratio_failed);
        report.min_ratio_margin = report.min_ratio_margin.min(t.margin);
        report.max_derivative_rel_err = report.max_derivative_rel_err.max(t.rel_err);
        report.redraws += t.redraws;
    }
    Ok(report)
}

/// [`check_distance_magnifying`] over several random 32×8 batches with DM
/// weights and both mixture kinds enabled.
pub fn distance_magnifying_sweep(
    batches: usize,
    trials_per_batch: usize,
    tau: f64,
    seed: u64,
) -> Result<DmCheckReport> {
    let mut total = DmCheckReport::empty();
    for b in 0..batches {
        let bseed = rng::derive_seed(seed, &[b as u64]);
        let batch = random_batch(32, 8, 9, bseed)?;
        let groups = group_by_label(batch.labels(), QuantizationRule::exact())?;
        let config = LossConfig::supremix(tau, label_range(batch.labels())?);
        let sets = build_contrast_sets(
            &batch,
            &groups,
            Some(&MixNegConfig::default()),
            Some(&MixPosConfig::default()),
            None,
            bseed,
        )?;
        let report = check_distance_magnifying(&batch, &sets, &config, trials_per_batch, bseed)?;
        total = total.merge(&report);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub trials: usize,
    pub violations: usize,
    /// Smallest `loss − bound` seen.
    pub min_gap: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Compare loss and lower bound on random instances with random toggles,
/// temperatures and batch shapes.
pub fn bound_trials(trials: usize, seed: u64) -> Result<BoundReport> {
    let gaps = (0..trials)
        .into_par_iter()
        .map(|t| {
            let tseed = rng::derive_seed(seed, &[t as u64]);
            let mut r = rng::stream(tseed);
            let n = r.random_range(4..=24);
            let d = r.random_range(2..=8);
            let grid = r.random_range(2..=6);
            let batch = random_batch(n, d, grid, r.random())?;
            let groups = group_by_label(batch.labels(), QuantizationRule::exact())?;
            let range = label_range(batch.labels()).unwrap_or_else(|_| LabelRange::unit());
            let mut config = LossConfig::supremix(*[0.05, 0.1, 0.5, 1.0].choose(&mut r).expect("non-empty"), range);
            config.use_dm = r.random();
            config.use_mix_neg = r.random();
            config.use_mix_pos = r.random();
            let sets = build_contrast_sets(
                &batch,
                &groups,
                Some(&MixNegConfig::default()),
                Some(&MixPosConfig::default()),
                None,
                tseed,
            )?;
            let loss = supremix_loss_value(&batch, &sets, &config)?;
            Ok(loss - loss_lower_bound(&sets, &groups, &config))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(BoundReport {
        trials,
        violations: gaps.iter().filter(|&&g| g < -BOUND_SLACK).count(),
        min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn line_parameters(labels: &[f64]) -> Result<Vec<f64>> {
    let range =
        label_range(labels).map_err(|_| Error::invalid("ordered construction needs at least 2 distinct labels"))?;
    Ok(labels.iter().map(|m| (m - range.min()) / range.width()).collect())
}

/// Pre-normalization points `(1, t, 0, …)` with `t` the label rescaled to `[0, 1]`.
pub fn ordered_line_points(labels: &[f64], d_e: usize) -> Result<Array2<f64>> {
    if d_e < 2 {
        return Err(Error::invalid(format!("embedding dimension {d_e} < 2")));
    }
    let t = line_parameters(labels)?;
    let mut raw = Array2::zeros((labels.len(), d_e));
    for (i, ti) in t.iter().enumerate() {
        raw[[i, 0]] = 1.0;
        raw[[i, 1]] = *ti;
    }
    Ok(raw)
}

/// Globally ordered, locally linear embedding: the normalized line points.
pub fn construct_ordered_embeddings(labels: &[f64], d_e: usize) -> Result<LabeledBatch> {
    LabeledBatch::normalized(&ordered_line_points(labels, d_e)?, labels.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfimumReport {
    pub taus: Vec<f64>,
    pub losses: Vec<f64>,
    pub lower_bound: f64,
    pub gaps: Vec<f64>,
    /// Smallest angle between embeddings of different labels.
    pub min_cross_label_angle: f64,
    /// Largest distance between an anchor and its Mix-pos when the mixture is
    /// taken between unit vectors instead of line points.
    pub max_mix_pos_deviation: f64,
}

impl InfimumReport {
    pub fn gaps_strictly_decreasing(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1] < w[0])
    }

    pub fn gaps_non_negative(&self) -> bool {
        self.gaps.iter().all(|&g| g >= -BOUND_SLACK)
    }

    pub fn final_gap(&self) -> f64 {
        *self.gaps.last().expect("at least one temperature")
    }

    pub fn final_gap_threshold(&self) -> f64 {
        INFIMUM_GAP_FRACTION * self.lower_bound.abs() + INFIMUM_GAP_ABS
    }

    pub fn passed(&self) -> bool {
        self.gaps_non_negative() && self.gaps_strictly_decreasing() && self.final_gap() < self.final_gap_threshold()
    }
}

/// Loss minus bound on the ordered construction along a descending
/// temperature schedule. Mixtures are taken between line points, so each
/// Mix-pos coincides with its anchor.
pub fn infimum_gap(
    labels: &[f64],
    d_e: usize,
    taus: &[f64],
    neg: &MixNegConfig,
    pos: &MixPosConfig,
    seed: u64,
) -> Result<InfimumReport> {
    if taus.is_empty() || taus.iter().any(|&t| !(t > 0.0)) || taus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("temperatures must be positive and strictly decreasing"));
    }
    let raw = LabeledBatch::new(ordered_line_points(labels, d_e)?, labels.to_vec())?;
    let unit = raw.to_normalized()?;
    let groups = group_by_label(labels, QuantizationRule::exact())?;
    let range = label_range(labels)?;
    let sets = build_contrast_sets(&raw, &groups, Some(neg), Some(pos), None, seed)?;

    let mut base = LossConfig::supremix(taus[0], range);
    base.mix_space = MixSpace::PreNormalization;
    let lower_bound = loss_lower_bound(&sets, &groups, &base);
    let losses = taus
        .iter()
        .map(|&tau| supremix_loss_value(&raw, &sets, &LossConfig { tau, ..base }))
        .collect::<Result<Vec<f64>>>()?;

    let z = unit.embeddings();
    let mut min_angle = f64::INFINITY;
    for i in 0..z.nrows() {
        for j in i + 1..z.nrows() {
            if groups.rank_of(i) != groups.rank_of(j) {
                min_angle = min_angle.min(z.row(i).dot(&z.row(j)).clamp(-1.0, 1.0).acos());
            }
        }
    }
    let mut deviation = 0.0f64;
    for set in &sets {
        for m in &set.positive_mix {
            let v = &z.row(m.source_a) * m.lambda + &z.row(m.source_b) * (1.0 - m.lambda);
            let v = &v / v.dot(&v).sqrt();
            let diff = &v - &z.row(set.anchor_index);
            deviation = deviation.max(diff.dot(&diff).sqrt());
        }
    }
    Ok(InfimumReport {
        taus: taus.to_vec(),
        gaps: losses.iter().map(|l| l - lower_bound).collect(),
        losses,
        lower_bound,
        min_cross_label_angle: min_angle,
        max_mix_pos_deviation: deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrderViolation {
    /// A sample is at least ε from its group representative. `distance` is
    /// NaN when the group centroid is zero.
    Cluster { sample: usize, label: f64, distance: f64 },
    /// A cross-label pair with `|z_iᵀ z_j| ≥ 1 − ε`.
    CrossLabel { i: usize, j: usize, inner: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonOrderedReport {
    pub epsilon: f64,
    pub holds: bool,
    pub violations: Vec<OrderViolation>,
}

/// ε-ordered predicate with the renormalized group centroid as representative.
pub fn check_epsilon_ordered(batch: &LabeledBatch, groups: &LabelGroups, epsilon: f64) -> Result<EpsilonOrderedReport> {
    if !batch.is_normalized() {
        return Err(Error::invalid("ε-ordered check needs a normalized batch"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be positive")));
    }
    if groups.num_samples() != batch.len() {
        return Err(Error::invalid("label groups do not match the batch"));
    }
    let z = batch.embeddings();
    let mut violations = Vec::new();
    for (rank, members) in groups.group_indices().iter().enumerate() {
        let centroid = z.select(Axis(0), members).mean_axis(Axis(0)).expect("non-empty group");
        let norm = centroid.dot(&centroid).sqrt();
        for &i in members {
            let distance = if norm > 0.0 {
                let diff = &z.row(i) - &(&centroid / norm);
                diff.dot(&diff).sqrt()
            } else {
                f64::NAN
            };
            if !(distance < epsilon) {
                violations.push(OrderViolation::Cluster {
                    sample: i,
                    label: groups.unique_labels()[rank],
                    distance,
                });
            }
        }
    }
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            if groups.rank_of(i) != groups.rank_of(j) {
                let inner = z.row(i).dot(&z.row(j));
                if !(inner.abs() < 1.0 - epsilon) {
                    violations.push(OrderViolation::CrossLabel { i, j, inner });
                }
            }
        }
    }
    Ok(EpsilonOrderedReport {
        epsilon,
        holds: violations.is_empty(),
        violations,
    })
}

/// Half the gap between 1 and the largest cross-label `|inner product|`:
/// the largest ε for which the cross-label condition holds with a margin.
pub fn cross_label_epsilon(batch: &LabeledBatch, groups: &LabelGroups) -> Option<f64> {
    let z = batch.embeddings();
    let mut max_inner: Option<f64> = None;
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            if groups.rank_of(i) != groups.rank_of(j) {
                let v = z.row(i).dot(&z.row(j)).abs();
                max_inner = Some(max_inner.map_or(v, |m: f64| m.max(v)));
            }
        }
    }
    max_inner.map(|m| 0.5 * (1.0 - m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCase {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub use_dm: bool,
    pub use_mix_neg: bool,
    pub use_mix_pos: bool,
    pub window_mode: WindowMode,
    pub mix_space: MixSpace,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSweepReport {
    pub cases: Vec<GradientCase>,
    pub max_rel_err: f64,
    pub failures: usize,
}

impl GradientSweepReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Analytic vs central-difference gradients on `batches` random instances.
/// Instance `b` uses toggle combination `b mod 8`, window mode `(b / 8) mod 2`
/// and mixing space `(b / 16) mod 2`, so 32 instances cover every combination.
pub fn gradient_check_sweep(batches: usize, seed: u64) -> Result<GradientSweepReport> {
    let cases = (0..batches)
        .into_par_iter()
        .map(|b| {
            let bseed = rng::derive_seed(seed, &[b as u64]);
            let mut r = rng::stream(bseed);
            let n = r.random_range(4..=32);
            let d = r.random_range(2..=16);
            let batch = random_batch(n, d, 6, r.random())?;
            // Raw rows with varied norms exercise the normalization chain.
            let scales: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
            let mut raw = batch.embeddings().clone();
            for (mut row, s) in raw.outer_iter_mut().zip(&scales) {
                row *= *s;
            }
            let batch = LabeledBatch::new(raw, batch.labels().to_vec())?;
            let groups = group_by_label(batch.labels(), QuantizationRule::exact())?;
            let window_mode = if (b / 8) % 2 == 0 {
                WindowMode::Rank
            } else {
                WindowMode::LabelDistance
            };
            let pos_cfg = MixPosConfig {
                gamma: if window_mode == WindowMode::Rank { 3.0 } else { 0.6 },
                window_mode,
                ..MixPosConfig::default()
            };
            let mix_space = if (b / 16) % 2 == 0 {
                MixSpace::Normalized
            } else {
                MixSpace::PreNormalization
            };
            let range = label_range(batch.labels()).unwrap_or_else(|_| LabelRange::unit());
            let mut config = LossConfig::supremix(r.random_range(0.1..1.0), range);
            config.use_dm = b & 1 != 0;
            config.use_mix_neg = b & 2 != 0;
            config.use_mix_pos = b & 4 != 0;
            config.mix_space = mix_space;
            let unit = batch.to_normalized()?;
            // Mixtures are drawn from the unit rows; the loss recomputes them
            // in the configured space from the stored weights.
            let sets = build_contrast_sets(
                &unit,
                &groups,
                Some(&MixNegConfig::default()),
                Some(&pos_cfg),
                None,
                bseed,
            )?;
            let analytic = supremix_loss(&batch, &sets, &config)?.grad;
            let numeric = finite_difference_gradient(&batch, &sets, &config, FD_STEP)?;
            Ok(GradientCase {
                seed: bseed,
                n,
                d,
                use_dm: config.use_dm,
                use_mix_neg: config.use_mix_neg,
                use_mix_pos: config.use_mix_pos,
                window_mode,
                mix_space,
                rel_err: max_relative_error(&analytic, &numeric),
            })
        })
        .collect::<Result<Vec<GradientCase>>>()?;
    Ok(GradientSweepReport {
        max_rel_err: cases.iter().map(|c| c.rel_err).fold(0.0, f64::max),
        failures: cases.iter().filter(|c| !(c.rel_err < GRAD_TOL)).count(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const GRID5: [f64; 15] = [
        0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.5, 0.5, 0.5, 0.75, 0.75, 0.75, 1.0, 1.0, 1.0,
    ];
    const TAUS: [f64; 5] = [1.0, 0.5, 0.2, 0.1, 0.05];

    #[test]
    fn ordered_construction_two_labels() {
        let b = construct_ordered_embeddings(&[0.0, 1.0], 2).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(b.row(0).to_vec(), vec![1.0, 0.0]);
        assert!((b.row(1)[0] - h).abs() < 1e-15 && (b.row(1)[1] - h).abs() < 1e-15);
        assert!(construct_ordered_embeddings(&[0.0, 1.0], 1).is_err());
        assert!(construct_ordered_embeddings(&[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn ordered_construction_is_monotone_and_tied() {
        let b = construct_ordered_embeddings(&[0.0, 0.5, 1.0, 0.5], 4).unwrap();
        let z = b.embeddings();
        assert!(z.row(0).dot(&z.row(2)) < z.row(0).dot(&z.row(1)));
        assert!(z.row(0).dot(&z.row(2)) < z.row(1).dot(&z.row(2)));
        assert_eq!(z.row(1), z.row(3));
        // Angles strictly increase with the label.
        let angles: Vec<f64> = [0, 1, 2].iter().map(|&i| z[[i, 1]].atan2(z[[i, 0]])).collect();
        assert!(angles.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn epsilon_ordered_examples() {
        let b = construct_ordered_embeddings(&[0.0, 1.0], 2).unwrap();
        let g = group_by_label(b.labels(), QuantizationRule::exact()).unwrap();
        // Cross-label inner product is 1/√2 ≈ 0.707, which is not below 1 − 0.5.
        let r = check_epsilon_ordered(&b, &g, 0.5).unwrap();
        assert!(!r.holds);
        assert!(matches!(r.violations[0], OrderViolation::CrossLabel { i: 0, j: 1, .. }));
        assert!(check_epsilon_ordered(&b, &g, 0.25).unwrap().holds);

        let same = LabeledBatch::from_unit_rows(array![[1.0, 0.0], [1.0, 0.0]], vec![0.0, 1.0]).unwrap();
        let g = group_by_label(same.labels(), QuantizationRule::exact()).unwrap();
        assert!(!check_epsilon_ordered(&same, &g, 1e-3).unwrap().holds);

        let one = LabeledBatch::from_unit_rows(array![[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]], vec![2.0; 3]).unwrap();
        let g = group_by_label(one.labels(), QuantizationRule::exact()).unwrap();
        assert!(check_epsilon_ordered(&one, &g, 1e-6).unwrap().holds);
    }

    #[test]
    fn construction_is_epsilon_ordered_at_its_cross_label_margin() {
        let b = construct_ordered_embeddings(&GRID5, 4).unwrap();
        let g = group_by_label(b.labels(), QuantizationRule::exact()).unwrap();
        let eps = cross_label_epsilon(&b, &g).unwrap();
        assert!(eps > 0.0);
        assert!(check_epsilon_ordered(&b, &g, eps).unwrap().holds);
    }

    #[test]
    fn infimum_gaps_decrease_toward_bound() {
        let r = infimum_gap(&GRID5, 4, &TAUS, &MixNegConfig::default(), &MixPosConfig::default(), 7).unwrap();
        assert!(r.gaps_non_negative(), "{r:?}");
        assert!(r.gaps_strictly_decreasing(), "{r:?}");
        assert!(r.final_gap() < r.final_gap_threshold(), "{r:?}");
        assert!(r.passed());
        assert!(r.max_mix_pos_deviation > 0.0);
    }

    #[test]
    fn infimum_rejects_bad_schedules() {
        let n = MixNegConfig::default();
        let p = MixPosConfig::default();
        assert!(infimum_gap(&GRID5, 4, &[0.5, 1.0], &n, &p, 0).is_err());
        assert!(infimum_gap(&GRID5, 4, &[1.0, 0.0], &n, &p, 0).is_err());
    }

    #[test]
    fn distance_magnifying_holds() {
        let r = distance_magnifying_sweep(4, 50, 0.2, 3).unwrap();
        assert_eq!(r.trials, 200);
        assert!(r.passed(), "{r:?}");
        assert!(r.min_ratio_margin > 0.0);
    }

    #[test]
    fn distance_magnifying_needs_three_labels() {
        let b = random_batch(8, 4, 2, 1).unwrap();
        let g = group_by_label(b.labels(), QuantizationRule::exact()).unwrap();
        let sets = build_contrast_sets(&b, &g, None, None, None, 0).unwrap();
        let cfg = LossConfig::supremix(0.5, LabelRange::unit());
        assert!(check_distance_magnifying(&b, &sets, &cfg, 10, 0).is_err());
    }

    #[test]
    fn uniform_weights_fail_the_ratio_check() {
        let b = random_batch(32, 8, 9, 11).unwrap();
        let g = group_by_label(b.labels(), QuantizationRule::exact()).unwrap();
        let sets = build_contrast_sets(&b, &g, None, None, None, 0).unwrap();
        let cfg = LossConfig::supcon(0.5);
        let r = check_distance_magnifying(&b, &sets, &cfg, 20, 0).unwrap();
        assert_eq!(r.positivity_failures, 0);
        assert_eq!(r.ratio_failures, 20);
    }

    #[test]
    fn bound_holds_on_random_instances() {
        let r = bound_trials(100, 5).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn gradient_sweep_small() {
        let r = gradient_check_sweep(6, 9).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
