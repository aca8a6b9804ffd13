use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use ndarray::Array2;
use supremix::analysis::{compute_metrics, Metrics};
use supremix::data::{load_csv, Dataset, Split};
use supremix::nn::{self, embed, linear_probe, Checkpoint, ProbeParams, TrainConfig};
use supremix::{label_range, Error};

use super::RunReport;
use crate::config::RunConfig;
use crate::io::{ensure_dir, load_dataset, write_epoch_csv, write_json};

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

fn config_echo(config: &RunConfig) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::to_value(config)?)
}

/// Probe on the training features, then score every non-empty split.
pub(super) fn probe_all_splits(
    features: &Array2<f64>,
    ds: &Dataset,
    train: &TrainConfig,
) -> anyhow::Result<(ProbeParams, BTreeMap<String, Metrics>)> {
    let pick = |s: Split| {
        let idx = ds.split_indices(s);
        (features.select(ndarray::Axis(0), &idx), ds.split_labels(s))
    };
    let (tx, ty) = pick(Split::Train);
    let (ex, ey) = pick(Split::Test);
    let (probe, _) = linear_probe(&tx, &ty, &ex, &ey, train)?;
    let mut metrics = BTreeMap::new();
    for s in SPLITS {
        let (x, y) = pick(s);
        if !y.is_empty() {
            metrics.insert(s.as_str().to_string(), compute_metrics(&probe.predict(&x)?, &y)?);
        }
    }
    Ok((probe, metrics))
}

/// Contrastive pretraining followed by a linear probe. Writes
/// `checkpoint.json`, `epochs.csv` and `report.json`.
pub fn pretrain(config: &RunConfig, out: &Path) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    ensure_dir(out)?;
    let ds = load_dataset(config, config.data_seed())?;
    let range = label_range(&ds.split_labels(Split::Train))?;
    let encoder = config.encoder_config(ds.input_dim());
    let train = config.train_config(config.train_seed());
    let result = nn::pretrain(
        &ds,
        &encoder,
        &train,
        &config.mix_settings()?,
        &config.loss_config(range),
    )?;

    let checkpoint = out.join("checkpoint.json");
    Checkpoint::new(&result.params, &encoder, range, config_echo(config)?).save(&checkpoint)?;
    let epoch_csv = out.join("epochs.csv");
    write_epoch_csv(&epoch_csv, &result.epochs)?;
    let (_, metrics) = probe_all_splits(&embed(&result.params, &ds.inputs)?, &ds, &train)?;

    let report = RunReport {
        command: "pretrain".into(),
        method: config.method().into(),
        config: config_echo(config)?,
        metrics,
        epoch_csv: Some(epoch_csv),
        checkpoint: Some(checkpoint),
        model: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Where the probe's features come from.
#[derive(Debug, Clone)]
pub enum ProbeSource {
    /// Embed the configured dataset with a saved encoder.
    Checkpoint(PathBuf),
    /// Use the feature columns of a dataset CSV as fixed embeddings.
    Embeddings(PathBuf),
}

/// Linear probe; writes the test-split `metrics.json`.
pub fn probe(config: &RunConfig, source: &ProbeSource, out: &Path) -> anyhow::Result<Metrics> {
    ensure_dir(out)?;
    let train = config.train_config(config.train_seed());
    let (features, ds) = match source {
        ProbeSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            let ds = load_dataset(config, config.data_seed())?;
            if ck.encoder.input_dim != ds.input_dim() {
                return Err(Error::Format(format!(
                    "checkpoint (format version {}) expects {} input features, dataset has {}",
                    ck.version,
                    ck.encoder.input_dim,
                    ds.input_dim()
                ))
                .into());
            }
            (embed(&ck.params()?, &ds.inputs)?, ds)
        }
        ProbeSource::Embeddings(path) => {
            let ds = load_csv(path, &config.data.label_column, None, config.data_seed())?;
            (ds.inputs.clone(), ds)
        }
    };
    let (_, metrics) = probe_all_splits(&features, &ds, &train)?;
    let test = *metrics
        .get(Split::Test.as_str())
        .context("the dataset has no test rows")?;
    write_json(&out.join("metrics.json"), &test)?;
    Ok(test)
}

/// End-to-end L1 regression. Writes `vanilla.json` and `report.json`.
pub fn train_vanilla(config: &RunConfig, out: &Path) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    ensure_dir(out)?;
    let ds = load_dataset(config, config.data_seed())?;
    let encoder = config.encoder_config(ds.input_dim());
    let model = nn::vanilla_train(&ds, &encoder, &config.train_config(config.train_seed()))?;
    let model_path = out.join("vanilla.json");
    write_json(&model_path, &model)?;

    let predictions = model.predict(&ds.inputs)?;
    let mut metrics = BTreeMap::new();
    for s in SPLITS {
        let idx = ds.split_indices(s);
        if !idx.is_empty() {
            let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
            metrics.insert(s.as_str().to_string(), compute_metrics(&p, &ds.split_labels(s))?);
        }
    }
    let report = RunReport {
        command: "train-vanilla".into(),
        method: "vanilla".into(),
        config: config_echo(config)?,
        metrics,
        epoch_csv: None,
        checkpoint: None,
        model: Some(model_path),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
