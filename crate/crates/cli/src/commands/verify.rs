use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use supremix::group_by_label;
use supremix::theory::{
    bound_trials, check_epsilon_ordered, construct_ordered_embeddings, cross_label_epsilon, distance_magnifying_sweep,
    gradient_check_sweep, infimum_gap, BoundReport, DmCheckReport, EpsilonOrderedReport, GradientSweepReport,
    InfimumReport,
};
use supremix::{Error, QuantizationRule};

use crate::config::RunConfig;
use crate::io::{ensure_dir, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check<T> {
    pub passed: bool,
    pub detail: T,
}

impl<T> Check<T> {
    fn new(passed: bool, detail: T) -> Self {
        Self { passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub gradient: Check<GradientSweepReport>,
    pub bound: Check<BoundReport>,
    pub distance_magnifying: Check<DmCheckReport>,
    pub infimum: Check<InfimumReport>,
    pub epsilon_ordered: Check<EpsilonOrderedReport>,
    pub wall_clock_seconds: f64,
}

impl VerifyReport {
    /// Names of the checks that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            ("gradient", self.gradient.passed),
            ("bound", self.bound.passed),
            ("distance_magnifying", self.distance_magnifying.passed),
            ("infimum", self.infimum.passed),
            ("epsilon_ordered", self.epsilon_ordered.passed),
        ]
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| name)
        .collect()
    }
}

/// Runs the analytic property checks and writes `verify.json`.
pub fn verify(config: &RunConfig, out: &Path) -> anyhow::Result<VerifyReport> {
    let start = Instant::now();
    ensure_dir(out)?;
    let v = &config.verify;
    let seed = v.seed;

    let gradient = gradient_check_sweep(v.gradient_batches, seed)?;
    let bound = bound_trials(v.bound_trials, seed)?;
    let dm = distance_magnifying_sweep(v.dm_batches, v.dm_trials_per_batch, v.dm_tau, seed)?;

    // Evenly spaced labels on [0, 1].
    let step = 1.0 / (v.infimum_labels - 1) as f64;
    let labels: Vec<f64> = (0..v.infimum_labels)
        .flat_map(|l| std::iter::repeat_n(l as f64 * step, v.infimum_per_label))
        .collect();
    let infimum = infimum_gap(
        &labels,
        v.infimum_dim,
        &v.infimum_taus,
        &config.mix_neg(),
        &config.mix_pos(),
        seed,
    )?;

    let ordered = construct_ordered_embeddings(&labels, v.infimum_dim)?;
    let groups = group_by_label(&labels, QuantizationRule::exact())?;
    let epsilon = cross_label_epsilon(&ordered, &groups)
        .ok_or_else(|| Error::InvalidArgument("the ordered construction needs at least two labels".into()))?;
    let eps = check_epsilon_ordered(&ordered, &groups, epsilon)?;

    let mut report = VerifyReport {
        passed: false,
        gradient: Check::new(gradient.passed(), gradient),
        bound: Check::new(bound.passed(), bound),
        distance_magnifying: Check::new(dm.passed(), dm),
        infimum: Check::new(infimum.passed(), infimum),
        epsilon_ordered: Check::new(eps.holds, eps),
        wall_clock_seconds: 0.0,
    };
    report.passed = report.failures().is_empty();
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&out.join("verify.json"), &report)?;
    Ok(report)
}
