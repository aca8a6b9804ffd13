use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use supremix::analysis::{
    bootstrap_gap, compute_nlfd, ordinality_score, z_gap, Metrics, ModelView, NlfdResult, ZGapReport,
};
use supremix::data::{permute_labels, Dataset, Split};
use supremix::nn::{self, embed};
use supremix::{label_range, Error};

use super::train::probe_all_splits;
use crate::config::RunConfig;
use crate::io::{ensure_dir, load_dataset, write_epoch_csv, write_json};

/// One trained model on one seed, scored on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub metrics: Metrics,
    pub ordinality: f64,
    pub nlfd_mean: f64,
    pub nlfd_std: f64,
    pub nlfd_skewness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_avg_pos_logit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch_csv: Option<PathBuf>,
}

/// Ordinality after training on permuted labels, scored against those labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutedResult {
    pub supremix_ordinality: f64,
    pub supcon_ordinality: f64,
    /// Genuine minus permuted ordinality.
    pub supremix_drop: f64,
    pub supcon_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub supremix: ArmResult,
    pub supcon: ArmResult,
    pub vanilla: ArmResult,
    /// `z_gap(supremix, vanilla)`; `None` when undefined.
    pub z_gap_supremix: Option<f64>,
    pub z_gap_supcon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permuted: Option<PermutedResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<ZGapReport>,
}

/// Final-epoch mean positive logit, SupCon against SupReMix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitCheck {
    /// Seeds where SupCon's value is at least SupReMix's.
    pub seeds_supcon_higher: usize,
    pub seeds_compared: usize,
    /// Majority of compared seeds.
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub seeds: usize,
    /// Seeds where SupReMix's test MAE is at most SupCon's.
    pub supremix_mae_wins: usize,
    pub median_mae: ArmTriple,
    pub median_ordinality_supremix: f64,
    pub median_ordinality_supcon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_drop_supremix: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_drop_supcon: Option<f64>,
    /// Seeds with `z_gap(supremix, vanilla) > 0`.
    pub z_gap_positive: usize,
    pub logit_check: LogitCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmTriple {
    pub supremix: f64,
    pub supcon: f64,
    pub vanilla: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: serde_json::Value,
    pub per_seed: Vec<SeedResult>,
    pub summary: CompareSummary,
    pub wall_clock_seconds: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn with_toggles(config: &RunConfig, on: bool) -> RunConfig {
    let mut c = config.clone();
    c.loss.use_dm = on;
    c.loss.use_mix_neg = on;
    c.loss.use_mix_pos = on;
    c
}

fn defined(z: supremix::Result<f64>) -> anyhow::Result<Option<f64>> {
    match z {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(msg)) => {
            log::warn!("z-score gap undefined: {msg}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

struct Trained {
    result: ArmResult,
    nlfd: NlfdResult,
    test_embeddings: Array2<f64>,
    test_predictions: Vec<f64>,
}

fn view(t: &Trained) -> ModelView<'_> {
    ModelView {
        embeddings: &t.test_embeddings,
        predictions: &t.test_predictions,
    }
}

fn score(
    ds: &Dataset,
    features: &Array2<f64>,
    metrics: Metrics,
) -> anyhow::Result<(ArmResult, NlfdResult, Array2<f64>)> {
    let idx = ds.split_indices(Split::Test);
    let labels = ds.split_labels(Split::Test);
    let test = features.select(Axis(0), &idx);
    let nlfd = compute_nlfd(&test, &labels)?;
    let result = ArmResult {
        metrics,
        ordinality: ordinality_score(&test, &labels)?,
        nlfd_mean: nlfd.mean,
        nlfd_std: nlfd.std,
        nlfd_skewness: nlfd.skewness,
        final_avg_pos_logit: None,
        epoch_csv: None,
    };
    Ok((result, nlfd, test))
}

fn contrastive_arm(config: &RunConfig, ds: &Dataset, seed: u64, csv: &Path) -> anyhow::Result<Trained> {
    let range = label_range(&ds.split_labels(Split::Train))?;
    let encoder = config.encoder_config(ds.input_dim());
    let train = config.train_config(seed);
    let out = nn::pretrain(
        ds,
        &encoder,
        &train,
        &config.mix_settings()?,
        &config.loss_config(range),
    )?;
    write_epoch_csv(csv, &out.epochs)?;
    let features = embed(&out.params, &ds.inputs)?;
    let (probe, metrics) = probe_all_splits(&features, ds, &train)?;
    let test_metrics = *metrics
        .get(Split::Test.as_str())
        .ok_or_else(|| Error::InvalidArgument("the dataset has no test rows".into()))?;
    let test_x = features.select(Axis(0), &ds.split_indices(Split::Test));
    let predictions = probe.predict(&test_x)?;
    let (mut result, nlfd, test_embeddings) = score(ds, &features, test_metrics)?;
    result.final_avg_pos_logit = out.epochs.last().and_then(|e| e.avg_pos_logit);
    result.epoch_csv = Some(csv.to_path_buf());
    Ok(Trained {
        result,
        nlfd,
        test_embeddings,
        test_predictions: predictions,
    })
}

fn vanilla_arm(config: &RunConfig, ds: &Dataset, seed: u64) -> anyhow::Result<Trained> {
    let encoder = config.encoder_config(ds.input_dim());
    let model = nn::vanilla_train(ds, &encoder, &config.train_config(seed))?;
    let idx = ds.split_indices(Split::Test);
    let test_x = ds.inputs.select(Axis(0), &idx);
    let predictions = model.predict(&test_x)?;
    let metrics = supremix::analysis::compute_metrics(&predictions, &ds.split_labels(Split::Test))?;
    let features = model.representation(&ds.inputs)?;
    let (result, nlfd, test_embeddings) = score(ds, &features, metrics)?;
    Ok(Trained {
        result,
        nlfd,
        test_embeddings,
        test_predictions: predictions,
    })
}

fn run_seed(config: &RunConfig, seed: u64, epochs_dir: &Path) -> anyhow::Result<SeedResult> {
    let mut cfg = config.clone();
    cfg.data.seed = Some(seed);
    cfg.train.seed = Some(seed);
    let ds = load_dataset(&cfg, seed)?;
    let csv = |arm: &str| epochs_dir.join(format!("seed{seed}_{arm}.csv"));

    log::info!("seed {seed}: supremix arm");
    let supremix = contrastive_arm(&with_toggles(&cfg, true), &ds, seed, &csv("supremix"))?;
    log::info!("seed {seed}: supcon arm");
    let supcon = contrastive_arm(&with_toggles(&cfg, false), &ds, seed, &csv("supcon"))?;
    log::info!("seed {seed}: vanilla arm");
    let vanilla = vanilla_arm(&cfg, &ds, seed)?;

    let permuted = if config.compare.permuted {
        log::info!("seed {seed}: permuted-label arms");
        let shuffled = permute_labels(&ds, seed)?;
        let a = contrastive_arm(&with_toggles(&cfg, true), &shuffled, seed, &csv("supremix_permuted"))?;
        let b = contrastive_arm(&with_toggles(&cfg, false), &shuffled, seed, &csv("supcon_permuted"))?;
        Some(PermutedResult {
            supremix_ordinality: a.result.ordinality,
            supcon_ordinality: b.result.ordinality,
            supremix_drop: supremix.result.ordinality - a.result.ordinality,
            supcon_drop: supcon.result.ordinality - b.result.ordinality,
        })
    } else {
        None
    };

    let bootstrap = if config.compare.bootstrap > 0 {
        Some(bootstrap_gap(
            view(&supremix),
            view(&vanilla),
            &ds.split_labels(Split::Test),
            config.compare.bootstrap,
            seed,
        )?)
    } else {
        None
    };

    Ok(SeedResult {
        seed,
        z_gap_supremix: defined(z_gap(&supremix.nlfd, &vanilla.nlfd))?,
        z_gap_supcon: defined(z_gap(&supcon.nlfd, &vanilla.nlfd))?,
        supremix: supremix.result,
        supcon: supcon.result,
        vanilla: vanilla.result,
        permuted,
        bootstrap,
    })
}

fn summarize(per_seed: &[SeedResult]) -> CompareSummary {
    let collect = |f: &dyn Fn(&SeedResult) -> f64| per_seed.iter().map(f).collect::<Vec<f64>>();
    let drops: Vec<&PermutedResult> = per_seed.iter().filter_map(|s| s.permuted.as_ref()).collect();
    let drop_median = |f: &dyn Fn(&PermutedResult) -> f64| {
        (!drops.is_empty()).then(|| median(&drops.iter().map(|p| f(p)).collect::<Vec<f64>>()))
    };
    let logits: Vec<(f64, f64)> = per_seed
        .iter()
        .filter_map(|s| Some((s.supcon.final_avg_pos_logit?, s.supremix.final_avg_pos_logit?)))
        .collect();
    let higher = logits.iter().filter(|(c, r)| c >= r).count();
    CompareSummary {
        seeds: per_seed.len(),
        supremix_mae_wins: per_seed
            .iter()
            .filter(|s| s.supremix.metrics.mae <= s.supcon.metrics.mae)
            .count(),
        median_mae: ArmTriple {
            supremix: median(&collect(&|s| s.supremix.metrics.mae)),
            supcon: median(&collect(&|s| s.supcon.metrics.mae)),
            vanilla: median(&collect(&|s| s.vanilla.metrics.mae)),
        },
        median_ordinality_supremix: median(&collect(&|s| s.supremix.ordinality)),
        median_ordinality_supcon: median(&collect(&|s| s.supcon.ordinality)),
        median_drop_supremix: drop_median(&|p| p.supremix_drop),
        median_drop_supcon: drop_median(&|p| p.supcon_drop),
        z_gap_positive: per_seed
            .iter()
            .filter(|s| s.z_gap_supremix.is_some_and(|z| z > 0.0))
            .count(),
        logit_check: LogitCheck {
            seeds_supcon_higher: higher,
            seeds_compared: logits.len(),
            passed: !logits.is_empty() && 2 * higher > logits.len(),
        },
    }
}

/// SupReMix, SupCon and vanilla arms over the configured seeds. Writes
/// `compare.json` and one epoch CSV per contrastive arm under `epochs/`.
pub fn compare(config: &RunConfig, out: &Path) -> anyhow::Result<CompareReport> {
    let start = Instant::now();
    let epochs_dir = out.join("epochs");
    ensure_dir(&epochs_dir)?;
    let per_seed = config
        .compare
        .seeds
        .iter()
        .map(|&s| run_seed(config, s, &epochs_dir))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = CompareReport {
        config: serde_json::to_value(config)?,
        summary: summarize(&per_seed),
        per_seed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("compare.json"), &report)?;
    Ok(report)
}
