//! Command-line front end for the `supremix` crate: dataset generation,
//! contrastive pretraining, probing, property verification and the
//! three-arm comparison.

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::commands::{DatasetInput, ProbeSource};
use crate::config::{RunConfig, SEED_ENV};

/// A property or acceptance check failed; maps to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

/// Exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<CheckFailed>() {
        1
    } else {
        2
    }
}

#[derive(Debug, Parser)]
#[command(name = "supremix", version, about = "Contrastive regression with mixup hard pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Directory for every artifact a command writes.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Overrides the config's seeds (and SUPREMIX_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long)]
    pub group_column: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic dataset to data.csv.
    GenData(ConfigArg),
    /// Contrastive pretraining plus a linear probe.
    Pretrain(ConfigArg),
    /// Linear probe on a checkpoint's embeddings or on fixed embeddings.
    #[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "embeddings"])))]
    Probe {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset CSV whose feature columns are used as the embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// End-to-end L1 regression baseline.
    TrainVanilla(ConfigArg),
    /// Check the loss's analytic properties; exits 1 on any failure.
    Verify(ConfigArg),
    /// SupReMix, SupCon and vanilla arms over the configured seeds.
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        /// Also train on permuted labels.
        #[arg(long)]
        permuted: bool,
    },
    /// NLFD of an embedding CSV against a target CSV.
    Nlfd {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Needed when the target file has more than one column.
        #[arg(long)]
        target_column: Option<String>,
    },
    /// Replace labels through a seeded bijection of the distinct values.
    Permute(InputArgs),
    /// Keep `n_train` random training rows.
    Subsample {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        n_train: usize,
    },
    /// Drop training rows whose label lies in any `LO:HI` interval.
    FilterRange {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long = "exclude", value_name = "LO:HI", value_parser = parse_interval, required = true)]
        exclude: Vec<(f64, f64)>,
    },
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("{s:?} is not LO:HI"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if !(lo <= hi) {
        return Err(format!("empty interval {s:?}"));
    }
    Ok((lo, hi))
}

fn load_config(arg: &ConfigArg, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(&arg.config)?;
    config.resolve_seeds(seed)?;
    Ok(config)
}

/// Seed for commands without a config file.
fn plain_seed(flag: Option<u64>) -> anyhow::Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not a seed")),
            Err(_) => Ok(0),
        },
    }
}

fn dataset_input(args: InputArgs, seed: u64) -> DatasetInput {
    DatasetInput {
        path: args.input,
        label_column: args.label_column,
        group_column: args.group_column,
        seed,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData(c) => {
            let path = commands::gen_data(&load_config(&c, cli.seed)?, out)?;
            println!("wrote {}", path.display());
        }
        Command::Pretrain(c) => {
            let report = commands::pretrain(&load_config(&c, cli.seed)?, out)?;
            for (split, m) in &report.metrics {
                println!(
                    "{} {split}: mae {:.5} mse {:.5} gm {:.5}",
                    report.method, m.mae, m.mse, m.gm
                );
            }
        }
        Command::Probe {
            config,
            checkpoint,
            embeddings,
        } => {
            let source = match (checkpoint, embeddings) {
                (Some(p), _) => ProbeSource::Checkpoint(p),
                (None, Some(p)) => ProbeSource::Embeddings(p),
                (None, None) => bail!("give --checkpoint or --embeddings"),
            };
            let m = commands::probe(&load_config(&config, cli.seed)?, &source, out)?;
            println!(
                "test: mae {:.5} mse {:.5} gm {:.5} pearson {:?}",
                m.mae, m.mse, m.gm, m.pearson
            );
        }
        Command::TrainVanilla(c) => {
            let report = commands::train_vanilla(&load_config(&c, cli.seed)?, out)?;
            for (split, m) in &report.metrics {
                println!("vanilla {split}: mae {:.5} mse {:.5} gm {:.5}", m.mae, m.mse, m.gm);
            }
        }
        Command::Verify(c) => {
            let report = commands::verify(&load_config(&c, cli.seed)?, out)?;
            let failures = report.failures();
            for name in ["gradient", "bound", "distance_magnifying", "infimum", "epsilon_ordered"] {
                let status = if failures.contains(&name) { "FAIL" } else { "ok" };
                println!("{name}: {status}");
            }
            if !failures.is_empty() {
                return Err(CheckFailed(format!("property checks failed: {}", failures.join(", "))).into());
            }
        }
        Command::Compare { config, permuted } => {
            let mut config = load_config(&config, cli.seed)?;
            config.compare.permuted |= permuted;
            let report = commands::compare(&config, out)?;
            let s = &report.summary;
            println!(
                "median test MAE: supremix {:.5} supcon {:.5} vanilla {:.5}",
                s.median_mae.supremix, s.median_mae.supcon, s.median_mae.vanilla
            );
            println!(
                "supremix MAE wins {}/{}, median ordinality {:.3}, z-gap positive {}/{}",
                s.supremix_mae_wins, s.seeds, s.median_ordinality_supremix, s.z_gap_positive, s.seeds
            );
        }
        Command::Nlfd {
            embeddings,
            targets,
            target_column,
        } => {
            let r = commands::nlfd(&embeddings, &targets, target_column.as_deref(), out)?;
            println!(
                "{} factors, mean {:.5}, std {:.5}, skewness {:?}, excluded {}",
                r.factors.len(),
                r.mean,
                r.std,
                r.skewness,
                r.excluded_pairs
            );
        }
        Command::Permute(args) => {
            let seed = plain_seed(cli.seed)?;
            let path = commands::permute(&dataset_input(args, seed), seed, out)?;
            println!("wrote {}", path.display());
        }
        Command::Subsample { input, n_train } => {
            let seed = plain_seed(cli.seed)?;
            let path = commands::subsample(&dataset_input(input, seed), n_train, seed, out)?;
            println!("wrote {}", path.display());
        }
        Command::FilterRange { input, exclude } => {
            let seed = plain_seed(cli.seed)?;
            let path = commands::filter_range(&dataset_input(input, seed), &exclude, out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
