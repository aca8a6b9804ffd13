//! The label-wise contrastive regression loss with distance-magnifying
//! weights, its analytic gradient, the SupCon special case and the
//! closed-form lower bound.
//!
//! For an anchor `a` in label group `m` (size `k_m`) with positive set `P`
//! (real same-label samples plus Mix-pos) and contrast set `E ⊇ P` (every
//! positive and negative, real and mixed, anchor excluded):
//!
//! ```text
//! term_a = (1/k_m) Σ_{p∈P} [ log Σ_{e∈E} w_e·exp(s_e/τ) − s_p/τ ],   s_e = z_a·u_e
//! ```
//!
//! and the loss is `Σ_a term_a`. Weights are `1/(m_max − m_min)` for
//! positives and `(1 + |m − m_e|)/(m_max − m_min)` for negatives.
//!
//! Gradients are taken with respect to the raw (pre-normalization) rows of
//! the batch: they flow through the unit-norm projection of every row and
//! through every mixture back to both of its sources.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{normalize_embeddings, LabelGroups, LabelRange, LabeledBatch};
use crate::error::{Error, Result};
use crate::mixgen::{build_contrast_sets, AnchorContrastSet, MixedEmbedding, MIN_MIX_NORM};

/// Number of hardest negative logits kept in [`LossOutput::top_k_neg_logits`].
pub const TOP_K_NEG: usize = 1000;

/// Which embeddings mixtures are formed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixSpace {
    /// Mix the unit-normalized rows, then renormalize.
    #[default]
    Normalized,
    /// Mix the raw rows, then normalize.
    PreNormalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub use_dm: bool,
    pub use_mix_neg: bool,
    pub use_mix_pos: bool,
    pub range: LabelRange,
    #[serde(default)]
    pub mix_space: MixSpace,
}

impl LossConfig {
    /// Every component enabled.
    pub fn supremix(tau: f64, range: LabelRange) -> Self {
        Self {
            tau,
            use_dm: true,
            use_mix_neg: true,
            use_mix_pos: true,
            range,
            mix_space: MixSpace::Normalized,
        }
    }

    /// Uniform weights, real pairs only.
    pub fn supcon(tau: f64) -> Self {
        Self {
            tau,
            use_dm: false,
            use_mix_neg: false,
            use_mix_pos: false,
            range: LabelRange::unit(),
            mix_space: MixSpace::Normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn is_supcon(&self) -> bool {
        !(self.use_dm || self.use_mix_neg || self.use_mix_pos)
    }

    /// The label width the positive weights divide by (1 without DM).
    pub fn effective_width(&self) -> f64 {
        if self.use_dm {
            self.range.width()
        } else {
            1.0
        }
    }

    fn weight(&self, anchor_label: f64, element_label: f64, positive: bool) -> f64 {
        match (self.use_dm, positive) {
            (false, _) => 1.0,
            (true, true) => 1.0 / self.range.width(),
            (true, false) => dm_weight(anchor_label, element_label, &self.range),
        }
    }
}

/// Distance-magnifying weight `(1 + |m − m̄|)/(m_max − m_min)`.
pub fn dm_weight(m: f64, m_bar: f64, range: &LabelRange) -> f64 {
    (1.0 + (m - m_bar).abs()) / range.width()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the raw batch rows.
    pub grad: Array2<f64>,
    /// Each anchor's contribution (already divided by its `k_m`); sums to `loss`.
    pub per_anchor_terms: Vec<f64>,
    /// Mean inner product over all positive pairs, if any.
    pub avg_pos_logit: Option<f64>,
    /// Largest negative inner products, descending, at most [`TOP_K_NEG`].
    pub top_k_neg_logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Real(usize),
    Mix { a: usize, b: usize, lambda: f64 },
}

impl From<&MixedEmbedding> for Source {
    fn from(m: &MixedEmbedding) -> Self {
        Source::Mix {
            a: m.source_a,
            b: m.source_b,
            lambda: m.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Element {
    source: Source,
    label: f64,
    positive: bool,
}

fn elements(set: &AnchorContrastSet, labels: &[f64], config: &LossConfig) -> Vec<Element> {
    let real = |j: usize, positive| Element {
        source: Source::Real(j),
        label: labels[j],
        positive,
    };
    let mixed = |m: &MixedEmbedding, positive| Element {
        source: m.into(),
        label: m.mixed_label,
        positive,
    };
    let mut out: Vec<Element> = set.positive_real.iter().map(|&j| real(j, true)).collect();
    if config.use_mix_pos {
        out.extend(set.positive_mix.iter().map(|m| mixed(m, true)));
    }
    out.extend(set.negative_real.iter().map(|&j| real(j, false)));
    if config.use_mix_neg {
        out.extend(set.negative_mix.iter().map(|m| mixed(m, false)));
    }
    out
}

/// Raw rows, their norms and unit rows.
struct Rows {
    raw: Array2<f64>,
    norms: Vec<f64>,
    unit: Array2<f64>,
}

impl Rows {
    fn new(batch: &LabeledBatch) -> Result<Self> {
        let raw = batch.embeddings().clone();
        let unit = normalize_embeddings(&raw)?;
        let norms = raw.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
        Ok(Self { raw, norms, unit })
    }

    fn mix_basis(&self, space: MixSpace) -> &Array2<f64> {
        match space {
            MixSpace::Normalized => &self.unit,
            MixSpace::PreNormalization => &self.raw,
        }
    }
}

/// Unit vectors of an anchor's elements (one per row) and, for mixtures,
/// the pre-normalization norm (1 for real rows).
fn element_vectors(rows: &Rows, elems: &[Element], space: MixSpace, anchor: usize) -> Result<(Array2<f64>, Vec<f64>)> {
    let d = rows.unit.ncols();
    let mut u = Array2::<f64>::zeros((elems.len(), d));
    let mut norms = vec![1.0; elems.len()];
    let basis = rows.mix_basis(space);
    for (k, e) in elems.iter().enumerate() {
        let mut row = u.row_mut(k);
        match e.source {
            Source::Real(j) => row.assign(&rows.unit.row(j)),
            Source::Mix { a, b, lambda } => {
                row.scaled_add(lambda, &basis.row(a));
                row.scaled_add(1.0 - lambda, &basis.row(b));
                let norm = row.dot(&row).sqrt();
                if !(norm > MIN_MIX_NORM) {
                    return Err(Error::Numerical {
                        anchor,
                        what: format!("mixture of ({a}, {b}) collapsed to norm {norm:e}"),
                    });
                }
                row /= norm;
                norms[k] = norm;
            }
        }
    }
    Ok((u, norms))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Logits, weights and positive mask of one anchor's contrast set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLogits {
    pub anchor: usize,
    pub anchor_label: f64,
    /// `k_m`: the anchor's real label-group size.
    pub group_size: usize,
    pub logits: Vec<f64>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub positive: Vec<bool>,
}

impl AnchorLogits {
    pub fn num_positives(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }

    /// `log C` where `C = Σ_e w_e·exp(s_e/τ)`.
    fn log_denominator(&self, logits: &[f64], weights: &[f64], tau: f64) -> f64 {
        let a: Vec<f64> = logits.iter().zip(weights).map(|(s, w)| w.ln() + s / tau).collect();
        log_sum_exp(&a)
    }

    /// The anchor's loss contribution for the given logits.
    pub fn term_with(&self, logits: &[f64], weights: &[f64], tau: f64) -> f64 {
        let n_pos = self.num_positives();
        if n_pos == 0 {
            return 0.0;
        }
        let lse = self.log_denominator(logits, weights, tau);
        let sum: f64 = logits
            .iter()
            .zip(&self.positive)
            .filter(|(_, &p)| p)
            .map(|(s, _)| lse - s / tau)
            .sum();
        sum / self.group_size as f64
    }

    pub fn term(&self, tau: f64) -> f64 {
        self.term_with(&self.logits, &self.weights, tau)
    }

    /// `∂term/∂s_e` for every element: `(n_pos·w_e·exp(s_e/τ)/C − [e∈P]) / (τ·k_m)`.
    pub fn logit_gradients_with(&self, weights: &[f64], tau: f64) -> Vec<f64> {
        let n_pos = self.num_positives();
        if n_pos == 0 {
            return vec![0.0; self.logits.len()];
        }
        let lse = self.log_denominator(&self.logits, weights, tau);
        let scale = 1.0 / (tau * self.group_size as f64);
        self.logits
            .iter()
            .zip(weights)
            .zip(&self.positive)
            .map(|((s, w), &p)| {
                let share = (w.ln() + s / tau - lse).exp();
                (n_pos as f64 * share - if p { 1.0 } else { 0.0 }) * scale
            })
            .collect()
    }

    pub fn logit_gradients(&self, tau: f64) -> Vec<f64> {
        self.logit_gradients_with(&self.weights, tau)
    }
}

struct AnchorPass {
    logits: AnchorLogits,
    elems: Vec<Element>,
    vectors: Array2<f64>,
    norms: Vec<f64>,
}

fn anchor_pass(rows: &Rows, labels: &[f64], set: &AnchorContrastSet, config: &LossConfig) -> Result<AnchorPass> {
    let anchor = set.anchor_index;
    let anchor_label = labels[anchor];
    let elems = elements(set, labels, config);
    let (vectors, norms) = element_vectors(rows, &elems, config.mix_space, anchor)?;
    let logits = vectors.dot(&rows.unit.row(anchor)).to_vec();
    let logits = AnchorLogits {
        anchor,
        anchor_label,
        group_size: set.positive_real.len() + 1,
        weights: elems
            .iter()
            .map(|e| config.weight(anchor_label, e.label, e.positive))
            .collect(),
        labels: elems.iter().map(|e| e.label).collect(),
        positive: elems.iter().map(|e| e.positive).collect(),
        logits,
    };
    let term = logits.term(config.tau);
    if !term.is_finite() {
        return Err(Error::Numerical {
            anchor,
            what: format!("loss term is {term}"),
        });
    }
    Ok(AnchorPass {
        logits,
        elems,
        vectors,
        norms,
    })
}

/// Add one anchor's gradient to the unit-row and raw-row accumulators.
fn accumulate_gradient(
    pass: &AnchorPass,
    rows: &Rows,
    config: &LossConfig,
    g_unit: &mut Array2<f64>,
    g_raw: &mut Array2<f64>,
) {
    if pass.logits.num_positives() == 0 {
        return;
    }
    let anchor = pass.logits.anchor;
    let z_a = rows.unit.row(anchor);
    let coeffs = Array1::from(pass.logits.logit_gradients(config.tau));
    // ∂term/∂z_a = Σ_e c_e·u_e.
    let g_anchor = pass.vectors.t().dot(&coeffs);
    g_unit.row_mut(anchor).scaled_add(1.0, &g_anchor);
    let raw = config.mix_space == MixSpace::PreNormalization;
    for (k, e) in pass.elems.iter().enumerate() {
        let c = coeffs[k];
        match e.source {
            // ∂term/∂u_e = c_e·z_a.
            Source::Real(j) => g_unit.row_mut(j).scaled_add(c, &z_a),
            Source::Mix { a, b, lambda } => {
                // Through the renormalization of v: (I − u uᵀ)(c·z_a)/‖v‖.
                let u = pass.vectors.row(k);
                let s = pass.logits.logits[k];
                let mut g_v = &z_a - &(&u * s);
                g_v *= c / pass.norms[k];
                let target = if raw { &mut *g_raw } else { &mut *g_unit };
                target.row_mut(a).scaled_add(lambda, &g_v);
                target.row_mut(b).scaled_add(1.0 - lambda, &g_v);
            }
        }
    }
}

fn check_sets(batch: &LabeledBatch, sets: &[AnchorContrastSet]) -> Result<()> {
    let n = batch.len();
    for s in sets {
        let bad_index = |j: &usize| *j >= n;
        if s.anchor_index >= n
            || s.positive_real.iter().any(bad_index)
            || s.negative_real.iter().any(bad_index)
            || s.positive_mix
                .iter()
                .chain(&s.negative_mix)
                .any(|m| m.source_a >= n || m.source_b >= n)
        {
            return Err(Error::invalid(format!(
                "contrast set for anchor {} refers to samples outside the batch",
                s.anchor_index
            )));
        }
    }
    Ok(())
}

/// Anchors per parallel work unit. Gradient partial sums are formed per
/// chunk and added in chunk order, so results do not depend on the thread
/// count.
const CHUNK: usize = 32;

struct Evaluation {
    logits: Vec<AnchorLogits>,
    grad: Option<Array2<f64>>,
}

fn evaluate(
    batch: &LabeledBatch,
    sets: &[AnchorContrastSet],
    config: &LossConfig,
    with_grad: bool,
) -> Result<Evaluation> {
    config.validate()?;
    check_sets(batch, sets)?;
    let rows = Rows::new(batch)?;
    let (n, d) = rows.raw.dim();
    let chunks = sets
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut logits = Vec::with_capacity(chunk.len());
            let mut grads = with_grad.then(|| (Array2::<f64>::zeros((n, d)), Array2::<f64>::zeros((n, d))));
            for set in chunk {
                let pass = anchor_pass(&rows, batch.labels(), set, config)?;
                if let Some((g_unit, g_raw)) = grads.as_mut() {
                    accumulate_gradient(&pass, &rows, config, g_unit, g_raw);
                }
                logits.push(pass.logits);
            }
            Ok((logits, grads))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut logits = Vec::with_capacity(sets.len());
    let mut g_unit = Array2::<f64>::zeros((n, d));
    let mut g_raw = Array2::<f64>::zeros((n, d));
    for (l, g) in chunks {
        logits.extend(l);
        if let Some((gu, gr)) = g {
            g_unit += &gu;
            g_raw += &gr;
        }
    }
    let grad = with_grad.then(|| {
        // Chain through z = r/‖r‖: (I − z zᵀ)·g/‖r‖.
        let mut grad = g_raw;
        for (i, mut row) in grad.axis_iter_mut(Axis(0)).enumerate() {
            let z = rows.unit.row(i);
            let g = g_unit.row(i);
            let projected = (&g - &(&z * z.dot(&g))) / rows.norms[i];
            row += &projected;
        }
        grad
    });
    Ok(Evaluation { logits, grad })
}

/// Loss value only.
pub fn supremix_loss_value(batch: &LabeledBatch, sets: &[AnchorContrastSet], config: &LossConfig) -> Result<f64> {
    let eval = evaluate(batch, sets, config, false)?;
    Ok(eval.logits.iter().map(|l| l.term(config.tau)).sum())
}

/// Loss, gradient and logit diagnostics.
pub fn supremix_loss(batch: &LabeledBatch, sets: &[AnchorContrastSet], config: &LossConfig) -> Result<LossOutput> {
    let eval = evaluate(batch, sets, config, true)?;
    let grad = eval.grad.expect("gradient requested");
    if let Some((i, _)) = grad
        .axis_iter(Axis(0))
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numerical {
            anchor: i,
            what: "non-finite gradient".into(),
        });
    }

    let mut per_anchor_terms = Vec::with_capacity(eval.logits.len());
    let mut pos_sum = 0.0;
    let mut pos_count = 0usize;
    let mut negatives = Vec::new();
    for l in &eval.logits {
        per_anchor_terms.push(l.term(config.tau));
        for (s, &pos) in l.logits.iter().zip(&l.positive) {
            if pos {
                pos_sum += s;
                pos_count += 1;
            } else {
                negatives.push(*s);
            }
        }
    }
    let top = TOP_K_NEG.min(negatives.len());
    if top > 0 {
        negatives.select_nth_unstable_by(top - 1, |a, b| b.total_cmp(a));
        negatives.truncate(top);
        negatives.sort_unstable_by(|a, b| b.total_cmp(a));
    }
    Ok(LossOutput {
        loss: per_anchor_terms.iter().sum(),
        grad,
        per_anchor_terms,
        avg_pos_logit: (pos_count > 0).then(|| pos_sum / pos_count as f64),
        top_k_neg_logits: negatives,
    })
}

/// Per-anchor logits for inspection (theory checks, diagnostics).
pub fn anchor_logits(
    batch: &LabeledBatch,
    sets: &[AnchorContrastSet],
    config: &LossConfig,
) -> Result<Vec<AnchorLogits>> {
    Ok(evaluate(batch, sets, config, false)?.logits)
}

/// SupCon: uniform weights over real pairs only.
pub fn supcon_baseline_loss(batch: &LabeledBatch, groups: &LabelGroups, tau: f64) -> Result<LossOutput> {
    let sets = build_contrast_sets(batch, groups, None, None, None, 0)?;
    supremix_loss(batch, &sets, &LossConfig::supcon(tau))
}

/// Closed-form lower bound
/// `Σ_m (1/k_m) Σ_i (k_{(m,i),m} − 1)·log((k_{(m,i),m} − 1)/W)`,
/// where `k_{(m,i),m} − 1` counts the anchor's positives under `config`'s
/// toggles and `W` is the width positives are weighted by.
pub fn loss_lower_bound(sets: &[AnchorContrastSet], groups: &LabelGroups, config: &LossConfig) -> f64 {
    let width = config.effective_width();
    sets.iter()
        .map(|s| {
            let positives = s.positive_real.len() + if config.use_mix_pos { s.positive_mix.len() } else { 0 };
            if positives == 0 {
                return 0.0;
            }
            let k_m = groups.group_size_of(s.anchor_index) as f64;
            let p = positives as f64;
            p * (p / width).ln() / k_m
        })
        .sum()
}

/// Central differences of the loss with respect to every raw coordinate.
///
/// Mixtures are rebuilt from the perturbed rows with the stored mixing weights.
pub fn finite_difference_gradient(
    batch: &LabeledBatch,
    sets: &[AnchorContrastSet],
    config: &LossConfig,
    h: f64,
) -> Result<Array2<f64>> {
    if !(1e-6..=1e-2).contains(&h) {
        return Err(Error::invalid(format!("step {h} outside [1e-6, 1e-2]")));
    }
    let base = batch.embeddings();
    let labels = batch.labels().to_vec();
    let (n, d) = base.dim();
    let eval = |i: usize, k: usize, delta: f64| -> Result<f64> {
        let mut x = base.clone();
        x[[i, k]] += delta;
        supremix_loss_value(&LabeledBatch::new(x, labels.clone())?, sets, config)
    };
    let entries = (0..n * d)
        .into_par_iter()
        .map(|idx| {
            let (i, k) = (idx / d, idx % d);
            Ok((eval(i, k, h)? - eval(i, k, -h)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Array2::from_shape_vec((n, d), entries).expect("n*d entries"))
}

/// `max |a − b| / max(‖a‖_∞, ‖b‖_∞)`: the largest entry error relative to the
/// gradient's scale. Zero when both are zero.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
