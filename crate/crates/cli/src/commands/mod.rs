//! One function per subcommand. Each writes its artifacts into an output
//! directory and returns the report it wrote.

mod compare;
mod datasets;
mod nlfd;
mod train;
mod verify;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use supremix::analysis::Metrics;

pub use compare::{compare, ArmResult, CompareReport, CompareSummary, LogitCheck, PermutedResult, SeedResult};
pub use datasets::{filter_range, gen_data, permute, subsample, DatasetInput};
pub use nlfd::nlfd;
pub use train::{pretrain, probe, train_vanilla, ProbeSource};
pub use verify::{verify, Check, VerifyReport};

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub method: String,
    pub config: serde_json::Value,
    /// Metrics per split name.
    pub metrics: BTreeMap<String, Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub wall_clock_seconds: f64,
}
