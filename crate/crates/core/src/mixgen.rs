//! Per-anchor hard contrastive pairs built at the embedding level.
//!
//! Mix-neg are anchor-inclusive mixtures `λ₁·z_anchor + (1−λ₁)·z_neg` with
//! `λ₁ ~ Beta(α, β)`, one per real negative. Mix-pos are anchor-exclusive
//! mixtures of one sample below and one above the anchor's label, with the
//! mixing weight fixed so the mixed label equals the anchor's label.
//!
//! Every mixture is renormalized to unit length. Mixtures record their source
//! indices and mixing weight so the loss can rebuild them (and differentiate
//! through them) from perturbed embeddings.

use ndarray::{Array1, ArrayView1};
use rand::seq::index;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{LabelGroups, LabeledBatch};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Mixtures whose pre-normalization norm falls below this are dropped.
pub const MIN_MIX_NORM: f64 = 1e-6;

const LAMBDA_CLAMP: f64 = 1e-6;

/// Beta shape parameters for `λ₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixNegConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for MixNegConfig {
    /// Beta(2, 8): mixtures sit closer to the negative than to the anchor.
    fn default() -> Self {
        Self { alpha: 2.0, beta: 8.0 }
    }
}

impl MixNegConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self { alpha, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid(format!(
                "Beta parameters must be positive, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// How the Mix-pos window is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Group-rank distance at most `⌈γ⌉`.
    #[default]
    Rank,
    /// Label distance at most `γ`.
    LabelDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixPosConfig {
    pub gamma: f64,
    pub window_mode: WindowMode,
    pub max_pos_per_anchor: usize,
}

impl Default for MixPosConfig {
    fn default() -> Self {
        Self {
            gamma: 3.0,
            window_mode: WindowMode::Rank,
            max_pos_per_anchor: 32,
        }
    }
}

impl MixPosConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!(
                "window gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.max_pos_per_anchor == 0 {
            return Err(Error::invalid("max_pos_per_anchor must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixKind {
    MixNeg,
    MixPos,
}

/// A unit-norm mixture `normalize(λ·z_a + (1−λ)·z_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedEmbedding {
    pub vector: Array1<f64>,
    pub mixed_label: f64,
    pub kind: MixKind,
    pub source_a: usize,
    pub source_b: usize,
    pub lambda: f64,
}

/// The contrastive elements of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorContrastSet {
    pub anchor_index: usize,
    /// Same-label samples, anchor excluded.
    pub positive_real: Vec<usize>,
    pub positive_mix: Vec<MixedEmbedding>,
    pub negative_real: Vec<usize>,
    pub negative_mix: Vec<MixedEmbedding>,
    /// Mix-neg dropped after a failed resample.
    pub mix_neg_dropped: usize,
}

impl AnchorContrastSet {
    /// Labels of real positives, Mix-pos, real negatives and Mix-neg, in that order.
    pub fn element_labels(&self, batch_labels: &[f64]) -> Vec<f64> {
        self.positive_real
            .iter()
            .map(|&j| batch_labels[j])
            .chain(self.positive_mix.iter().map(|m| m.mixed_label))
            .chain(self.negative_real.iter().map(|&j| batch_labels[j]))
            .chain(self.negative_mix.iter().map(|m| m.mixed_label))
            .collect()
    }
}

/// One `λ₁ ~ Beta(α, β)`, clamped away from 0 and 1.
pub fn sample_lambda1(config: &MixNegConfig, rng: &mut Rng) -> f64 {
    let beta = Beta::new(config.alpha, config.beta).expect("validated Beta parameters");
    beta.sample(rng).clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP)
}

/// `normalize(λ·a + (1−λ)·b)`, or `None` when the mixture nearly vanishes.
pub fn mix_unit(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, lambda: f64) -> Option<Array1<f64>> {
    let v = &a * lambda + &b * (1.0 - lambda);
    let norm = v.dot(&v).sqrt();
    (norm > MIN_MIX_NORM).then(|| v / norm)
}

/// `λ₂` with `λ₂·m_lo + (1−λ₂)·m_hi = m`.
pub fn solve_lambda2(m: f64, m_lo: f64, m_hi: f64) -> Result<f64> {
    if m_lo == m_hi {
        return Err(Error::DivideByZero(format!("m_lo == m_hi == {m_lo}")));
    }
    if !(m_lo < m && m < m_hi) {
        return Err(Error::invalid(format!(
            "label {m} is not strictly inside ({m_lo}, {m_hi})"
        )));
    }
    Ok((m - m_hi) / (m_lo - m_hi))
}

fn allowed(constraint: Option<&[usize]>, anchor: usize, j: usize) -> bool {
    constraint.is_none_or(|c| c[anchor] == c[j])
}

fn check_constraint(batch: &LabeledBatch, constraint: Option<&[usize]>) -> Result<()> {
    match constraint {
        Some(c) if c.len() != batch.len() => Err(Error::invalid(format!(
            "group constraint has length {}, batch has {} samples",
            c.len(),
            batch.len()
        ))),
        _ => Ok(()),
    }
}

/// One Mix-neg per real negative of `anchor`.
pub fn make_mix_neg(
    anchor: usize,
    batch: &LabeledBatch,
    groups: &LabelGroups,
    config: &MixNegConfig,
    rng: &mut Rng,
) -> Result<Vec<MixedEmbedding>> {
    make_mix_neg_constrained(anchor, batch, groups, config, None, rng)
}

/// [`make_mix_neg`] restricted to negatives whose category matches the anchor's.
pub fn make_mix_neg_constrained(
    anchor: usize,
    batch: &LabeledBatch,
    groups: &LabelGroups,
    config: &MixNegConfig,
    constraint: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<Vec<MixedEmbedding>> {
    config.validate()?;
    check_constraint(batch, constraint)?;
    let labels = batch.labels();
    let anchor_rank = groups.rank_of(anchor);
    let anchor_label = labels[anchor];
    let rule = groups.rule();
    let z_a = batch.row(anchor);

    let mut out = Vec::new();
    for (j, &label_j) in labels.iter().enumerate() {
        if groups.rank_of(j) == anchor_rank || !allowed(constraint, anchor, j) {
            continue;
        }
        let mut accepted = None;
        for _attempt in 0..2 {
            let lambda = sample_lambda1(config, rng);
            let mixed_label = lambda * anchor_label + (1.0 - lambda) * label_j;
            if rule.same_bin(mixed_label, anchor_label) {
                continue;
            }
            if let Some(vector) = mix_unit(z_a, batch.row(j), lambda) {
                accepted = Some(MixedEmbedding {
                    vector,
                    mixed_label,
                    kind: MixKind::MixNeg,
                    source_a: anchor,
                    source_b: j,
                    lambda,
                });
                break;
            }
        }
        match accepted {
            Some(m) => out.push(m),
            None => log::warn!("anchor {anchor}: dropped Mix-neg with negative {j} after resampling"),
        }
    }
    Ok(out)
}

/// Below- and above-window sample lists for `anchor`.
fn mix_pos_windows(
    anchor: usize,
    groups: &LabelGroups,
    config: &MixPosConfig,
    constraint: Option<&[usize]>,
) -> (Vec<usize>, Vec<usize>) {
    let rank = groups.rank_of(anchor);
    let k = groups.num_groups();
    let (below_ranks, above_ranks): (Vec<usize>, Vec<usize>) = match config.window_mode {
        WindowMode::Rank => {
            let w = config.gamma.ceil() as usize;
            (
                (rank.saturating_sub(w)..rank).collect(),
                (rank + 1..k.min(rank + w + 1)).collect(),
            )
        }
        WindowMode::LabelDistance => {
            let q = groups.unique_labels()[rank];
            let near = |r: &usize| (groups.unique_labels()[*r] - q).abs() <= config.gamma;
            ((0..rank).filter(near).collect(), (rank + 1..k).filter(near).collect())
        }
    };
    let collect = |ranks: Vec<usize>| -> Vec<usize> {
        ranks
            .into_iter()
            .flat_map(|r| groups.group(r).iter().copied())
            .filter(|&j| allowed(constraint, anchor, j))
            .collect()
    };
    (collect(below_ranks), collect(above_ranks))
}

/// Number of (below, above) Mix-pos candidate pairs before the cap is applied.
pub fn mix_pos_candidate_count(anchor: usize, groups: &LabelGroups, config: &MixPosConfig) -> usize {
    let (below, above) = mix_pos_windows(anchor, groups, config, None);
    below.len() * above.len()
}

/// All Mix-pos of `anchor`, subsampled to `max_pos_per_anchor` when needed.
pub fn enumerate_mix_pos(
    anchor: usize,
    batch: &LabeledBatch,
    groups: &LabelGroups,
    config: &MixPosConfig,
    rng: &mut Rng,
) -> Result<Vec<MixedEmbedding>> {
    enumerate_mix_pos_constrained(anchor, batch, groups, config, None, rng)
}

pub fn enumerate_mix_pos_constrained(
    anchor: usize,
    batch: &LabeledBatch,
    groups: &LabelGroups,
    config: &MixPosConfig,
    constraint: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<Vec<MixedEmbedding>> {
    config.validate()?;
    check_constraint(batch, constraint)?;
    let (below, above) = mix_pos_windows(anchor, groups, config, constraint);
    let total = below.len() * above.len();
    if total == 0 {
        return Ok(Vec::new());
    }
    let picks: Vec<usize> = if total > config.max_pos_per_anchor {
        let mut v = index::sample(rng, total, config.max_pos_per_anchor).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..total).collect()
    };

    let labels = batch.labels();
    let m = labels[anchor];
    let mut out = Vec::with_capacity(picks.len());
    for p in picks {
        let (lo, hi) = (below[p / above.len()], above[p % above.len()]);
        let lambda = solve_lambda2(m, labels[lo], labels[hi])?;
        match mix_unit(batch.row(lo), batch.row(hi), lambda) {
            Some(vector) => out.push(MixedEmbedding {
                vector,
                mixed_label: m,
                kind: MixKind::MixPos,
                source_a: lo,
                source_b: hi,
                lambda,
            }),
            None => log::warn!("anchor {anchor}: dropped degenerate Mix-pos ({lo}, {hi})"),
        }
    }
    Ok(out)
}

/// Assemble every anchor's contrast set.
///
/// `None` for either mixing config skips that kind of mixture. Each anchor
/// draws from its own stream keyed by `(seed, anchor)`, so the result does not
/// depend on thread scheduling.
pub fn build_contrast_sets(
    batch: &LabeledBatch,
    groups: &LabelGroups,
    neg: Option<&MixNegConfig>,
    pos: Option<&MixPosConfig>,
    constraint: Option<&[usize]>,
    seed: u64,
) -> Result<Vec<AnchorContrastSet>> {
    if groups.num_samples() != batch.len() {
        return Err(Error::invalid("label groups do not match the batch"));
    }
    check_constraint(batch, constraint)?;
    (0..batch.len())
        .into_par_iter()
        .map(|anchor| {
            let rank = groups.rank_of(anchor);
            let positive_real: Vec<usize> = groups.group(rank).iter().copied().filter(|&j| j != anchor).collect();
            let negative_real: Vec<usize> = (0..batch.len()).filter(|&j| groups.rank_of(j) != rank).collect();

            let (negative_mix, mix_neg_dropped) = match neg {
                Some(cfg) => {
                    let mut r = rng::substream(seed, &[anchor as u64, 0]);
                    let mixes = make_mix_neg_constrained(anchor, batch, groups, cfg, constraint, &mut r)?;
                    let expected = negative_real
                        .iter()
                        .filter(|&&j| allowed(constraint, anchor, j))
                        .count();
                    let dropped = expected - mixes.len();
                    if dropped > 0 {
                        log::debug!("anchor {anchor}: Mix-neg deficit {dropped}");
                    }
                    (mixes, dropped)
                }
                None => (Vec::new(), 0),
            };
            let positive_mix = match pos {
                Some(cfg) => {
                    let mut r = rng::substream(seed, &[anchor as u64, 1]);
                    enumerate_mix_pos_constrained(anchor, batch, groups, cfg, constraint, &mut r)?
                }
                None => Vec::new(),
            };
            Ok(AnchorContrastSet {
                anchor_index: anchor,
                positive_real,
                positive_mix,
                negative_real,
                negative_mix,
                mix_neg_dropped,
            })
        })
        .collect()
}
