use std::path::{Path, PathBuf};

use supremix::data::{filter_label_range, load_csv, permute_labels, subsample as subsample_train, Dataset};

use crate::config::RunConfig;
use crate::io::{ensure_dir, load_dataset};

/// A dataset CSV given on the command line.
#[derive(Debug, Clone)]
pub struct DatasetInput {
    pub path: PathBuf,
    pub label_column: String,
    pub group_column: Option<String>,
    /// Seeds the split assignment when the file has no `split` column.
    pub seed: u64,
}

impl DatasetInput {
    fn load(&self) -> anyhow::Result<Dataset> {
        Ok(load_csv(
            &self.path,
            &self.label_column,
            self.group_column.as_deref(),
            self.seed,
        )?)
    }
}

fn write(ds: &Dataset, out: &Path, label_column: &str) -> anyhow::Result<PathBuf> {
    ensure_dir(out)?;
    let path = out.join("data.csv");
    ds.write_csv(&path, label_column)?;
    Ok(path)
}

/// Writes `data.csv`.
pub fn gen_data(config: &RunConfig, out: &Path) -> anyhow::Result<PathBuf> {
    let ds = load_dataset(config, config.data_seed())?;
    write(&ds, out, &config.data.label_column)
}

pub fn permute(input: &DatasetInput, seed: u64, out: &Path) -> anyhow::Result<PathBuf> {
    let ds = permute_labels(&input.load()?, seed)?;
    write(&ds, out, &input.label_column)
}

pub fn subsample(input: &DatasetInput, n_train: usize, seed: u64, out: &Path) -> anyhow::Result<PathBuf> {
    let ds = subsample_train(&input.load()?, n_train, seed)?;
    write(&ds, out, &input.label_column)
}

/// Drops training rows whose label falls in any closed interval of `excluded`.
pub fn filter_range(input: &DatasetInput, excluded: &[(f64, f64)], out: &Path) -> anyhow::Result<PathBuf> {
    let ds = filter_label_range(&input.load()?, excluded)?;
    write(&ds, out, &input.label_column)
}
