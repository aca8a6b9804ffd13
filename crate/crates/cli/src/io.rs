//! File plumbing shared by the commands.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use ndarray::Array2;
use serde::Serialize;
use supremix::data::{gen_synthetic, load_csv, Dataset};
use supremix::nn::EpochLog;

use crate::config::RunConfig;

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `epoch,loss,lr,avg_pos_logit,mean_top1k_neg_logit`; missing values are empty.
pub fn write_epoch_csv(path: &Path, epochs: &[EpochLog]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["epoch", "loss", "lr", "avg_pos_logit", "mean_top1k_neg_logit"])?;
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            format!("{:?}", e.loss),
            format!("{:?}", e.lr),
            cell(e.avg_pos_logit),
            cell(e.mean_top1k_neg_logit),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The configured dataset: the CSV file if one is named, otherwise synthetic data.
pub fn load_dataset(config: &RunConfig, seed: u64) -> anyhow::Result<Dataset> {
    match &config.data.csv_path {
        Some(path) => Ok(load_csv(
            path,
            &config.data.label_column,
            config.data.group_column.as_deref(),
            seed,
        )?),
        None => Ok(gen_synthetic(&config.synthetic_spec(seed))?),
    }
}

/// A numeric CSV with a header row: column names and the values.
pub fn read_matrix(path: &Path) -> anyhow::Result<(Vec<String>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            bail!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                i + 1,
                rec.len(),
                header.len()
            );
        }
        for (j, c) in rec.iter().enumerate() {
            let v: f64 = c.trim().parse().with_context(|| {
                format!(
                    "{}: row {} column `{}`: {c:?} is not a number",
                    path.display(),
                    i + 1,
                    header[j]
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((header.clone(), Array2::from_shape_vec((rows, header.len()), values)?))
}

/// One column of a numeric CSV: `column`, or the only column when `None`.
pub fn read_column(path: &Path, column: Option<&str>) -> anyhow::Result<Vec<f64>> {
    let (header, m) = read_matrix(path)?;
    let j = match column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: no column `{name}`", path.display()))?,
        None if header.len() == 1 => 0,
        None => bail!(
            "{}: has {} columns; name the target column",
            path.display(),
            header.len()
        ),
    };
    Ok(m.column(j).to_vec())
}
