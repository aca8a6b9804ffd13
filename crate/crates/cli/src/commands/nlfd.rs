use std::path::Path;

use supremix::analysis::{compute_nlfd, NlfdResult};

use crate::io::{ensure_dir, read_column, read_matrix, write_json};

/// NLFD of externally produced embeddings. Every column of `embeddings` is a
/// coordinate; `targets` holds one value per row. Writes `nlfd.json` and
/// `factors.csv`.
pub fn nlfd(embeddings: &Path, targets: &Path, target_column: Option<&str>, out: &Path) -> anyhow::Result<NlfdResult> {
    ensure_dir(out)?;
    let (_, z) = read_matrix(embeddings)?;
    let y = read_column(targets, target_column)?;
    let result = compute_nlfd(&z, &y)?;
    write_json(&out.join("nlfd.json"), &result)?;
    result.write_factors_csv(&out.join("factors.csv"))?;
    Ok(result)
}
