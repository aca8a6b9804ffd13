//! Sectioned TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use supremix::batch::QuantizationRule;
use supremix::data::{SyntheticKind, SyntheticSpec};
use supremix::nn::{EncoderConfig, MixSettings, TrainConfig};
use supremix::{LabelRange, LossConfig, MixNegConfig, MixPosConfig, MixSpace, WindowMode};

/// Environment variable consulted when neither the flag nor the file sets a seed.
pub const SEED_ENV: &str = "SUPREMIX_SEED";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub mix: MixSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub encoder: EncoderSection,
    pub verify: VerifySection,
    pub compare: CompareSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: SyntheticKind,
    pub n: usize,
    pub dim: usize,
    pub noise: f64,
    pub label_grid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Load this CSV instead of generating data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    pub label_column: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_column: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            kind: s.kind,
            n: s.n,
            dim: s.input_dim,
            noise: s.noise_sigma,
            label_grid: s.label_grid,
            seed: None,
            csv_path: None,
            label_column: "label".into(),
            group_column: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub window_mode: WindowMode,
    pub max_pos_per_anchor: usize,
    pub use_group_constraint: bool,
}

impl Default for MixSection {
    fn default() -> Self {
        let (n, p) = (MixNegConfig::default(), MixPosConfig::default());
        Self {
            alpha: n.alpha,
            beta: n.beta,
            gamma: p.gamma,
            window_mode: p.window_mode,
            max_pos_per_anchor: p.max_pos_per_anchor,
            use_group_constraint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub tau: f64,
    pub use_dm: bool,
    pub use_mix_neg: bool,
    pub use_mix_pos: bool,
    /// Labels are grouped into bins of this width; exact matching when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quant_bin_width: Option<f64>,
    pub mix_space: MixSpace,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            tau: 0.1,
            use_dm: true,
            use_mix_neg: true,
            use_mix_pos: true,
            quant_bin_width: None,
            mix_space: MixSpace::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub pretrain_epochs: usize,
    pub probe_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            pretrain_epochs: t.pretrain_epochs,
            probe_epochs: t.probe_epochs,
            batch_size: t.batch_size,
            lr: t.base_lr,
            min_lr: t.min_lr,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            warmup_epochs: t.warmup_epochs,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            hidden_dims: e.hidden_dims,
            embed_dim: e.embed_dim,
        }
    }
}

/// Sizes of the property checks run by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub gradient_batches: usize,
    pub bound_trials: usize,
    pub dm_batches: usize,
    pub dm_trials_per_batch: usize,
    pub dm_tau: f64,
    /// Distinct labels and samples per label of the ordered construction.
    pub infimum_labels: usize,
    pub infimum_per_label: usize,
    pub infimum_dim: usize,
    pub infimum_taus: Vec<f64>,
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            gradient_batches: 50,
            bound_trials: 1000,
            dm_batches: 40,
            dm_trials_per_batch: 25,
            dm_tau: 0.2,
            infimum_labels: 5,
            infimum_per_label: 3,
            infimum_dim: 4,
            infimum_taus: vec![1.0, 0.5, 0.2, 0.1, 0.05],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub seeds: Vec<u64>,
    /// Also train both contrastive arms on permuted labels.
    pub permuted: bool,
    /// NLFD bootstrap resamples per seed; 0 skips the bootstrap.
    pub bootstrap: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            permuted: false,
            bootstrap: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Seeds precedence: explicit override, then the file, then `SUPREMIX_SEED`.
    pub fn resolve_seeds(&mut self, flag: Option<u64>) -> anyhow::Result<()> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .with_context(|| format!("{SEED_ENV}={v:?} is not a seed"))?,
            ),
            Err(_) => None,
        };
        for slot in [&mut self.data.seed, &mut self.train.seed] {
            *slot = flag.or(*slot).or(env).or(Some(0));
        }
        if let Some(s) = flag {
            self.verify.seed = s;
        }
        Ok(())
    }

    /// Every invalid field, reported together.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut check = |ok: bool, field: &str, msg: String| {
            if !ok {
                bad.push(format!("{field}: {msg}"));
            }
        };
        let d = &self.data;
        if d.csv_path.is_none() {
            if let Err(e) = self.synthetic_spec(0).validate() {
                check(false, "data", e.to_string());
            }
        }
        check(
            !d.label_column.is_empty(),
            "data.label_column",
            "must not be empty".into(),
        );

        if let Err(e) = self.mix_neg().validate() {
            check(false, "mix.alpha/mix.beta", e.to_string());
        }
        if let Err(e) = self.mix_pos().validate() {
            check(false, "mix.gamma/mix.max_pos_per_anchor", e.to_string());
        }

        let l = &self.loss;
        check(
            l.tau > 0.0 && l.tau.is_finite(),
            "loss.tau",
            format!("must be positive, got {}", l.tau),
        );
        if let Some(w) = l.quant_bin_width {
            check(
                w > 0.0 && w.is_finite(),
                "loss.quant_bin_width",
                format!("must be positive, got {w}"),
            );
        }

        let t = &self.train;
        check(
            t.pretrain_epochs > 0,
            "train.pretrain_epochs",
            "must be positive".into(),
        );
        check(t.probe_epochs > 0, "train.probe_epochs", "must be positive".into());
        check(
            t.batch_size >= 2,
            "train.batch_size",
            format!("must be at least 2, got {}", t.batch_size),
        );
        check(
            t.lr > 0.0 && t.lr.is_finite(),
            "train.lr",
            format!("must be positive, got {}", t.lr),
        );
        check(
            t.min_lr >= 0.0 && t.min_lr <= t.lr,
            "train.min_lr",
            format!("must lie in [0, lr], got {}", t.min_lr),
        );
        check(
            t.weight_decay >= 0.0,
            "train.weight_decay",
            "must be non-negative".into(),
        );
        check(t.clip_norm > 0.0, "train.clip_norm", "must be positive".into());
        check(
            t.warmup_epochs < t.pretrain_epochs,
            "train.warmup_epochs",
            format!("must be below pretrain_epochs ({})", t.pretrain_epochs),
        );

        let e = &self.encoder;
        check(
            !e.hidden_dims.contains(&0),
            "encoder.hidden_dims",
            "widths must be at least 1".into(),
        );
        check(
            e.embed_dim >= 2,
            "encoder.embed_dim",
            format!("must be at least 2, got {}", e.embed_dim),
        );

        let v = &self.verify;
        for (name, n) in [
            ("verify.gradient_batches", v.gradient_batches),
            ("verify.bound_trials", v.bound_trials),
            ("verify.dm_batches", v.dm_batches),
            ("verify.dm_trials_per_batch", v.dm_trials_per_batch),
        ] {
            check(n > 0, name, "must be positive".into());
        }
        check(v.dm_tau > 0.0, "verify.dm_tau", "must be positive".into());
        check(
            v.infimum_labels >= 2,
            "verify.infimum_labels",
            "need at least 2 labels".into(),
        );
        check(
            v.infimum_per_label >= 1,
            "verify.infimum_per_label",
            "must be positive".into(),
        );
        check(v.infimum_dim >= 2, "verify.infimum_dim", "must be at least 2".into());
        check(
            !v.infimum_taus.is_empty()
                && v.infimum_taus.iter().all(|&t| t > 0.0)
                && v.infimum_taus.windows(2).all(|w| w[1] < w[0]),
            "verify.infimum_taus",
            "must be positive and strictly decreasing".into(),
        );
        check(
            !self.compare.seeds.is_empty(),
            "compare.seeds",
            "must not be empty".into(),
        );

        if bad.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  {}", bad.join("\n  "))
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(0)
    }

    pub fn train_seed(&self) -> u64 {
        self.train.seed.unwrap_or(0)
    }

    pub fn synthetic_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            kind: self.data.kind,
            n: self.data.n,
            input_dim: self.data.dim,
            noise_sigma: self.data.noise,
            label_grid: self.data.label_grid,
            seed,
        }
    }

    pub fn mix_neg(&self) -> MixNegConfig {
        MixNegConfig {
            alpha: self.mix.alpha,
            beta: self.mix.beta,
        }
    }

    pub fn mix_pos(&self) -> MixPosConfig {
        MixPosConfig {
            gamma: self.mix.gamma,
            window_mode: self.mix.window_mode,
            max_pos_per_anchor: self.mix.max_pos_per_anchor,
        }
    }

    pub fn mix_settings(&self) -> anyhow::Result<MixSettings> {
        let quantization = match self.loss.quant_bin_width {
            Some(w) => QuantizationRule::new(w)?,
            None => QuantizationRule::exact(),
        };
        Ok(MixSettings {
            neg: self.mix_neg(),
            pos: self.mix_pos(),
            quantization,
            group_constrained: self.mix.use_group_constraint,
        })
    }

    pub fn loss_config(&self, range: LabelRange) -> LossConfig {
        LossConfig {
            tau: self.loss.tau,
            use_dm: self.loss.use_dm,
            use_mix_neg: self.loss.use_mix_neg,
            use_mix_pos: self.loss.use_mix_pos,
            range,
            mix_space: self.loss.mix_space,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            pretrain_epochs: t.pretrain_epochs,
            probe_epochs: t.probe_epochs,
            batch_size: t.batch_size,
            base_lr: t.lr,
            min_lr: t.min_lr,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            warmup_epochs: t.warmup_epochs,
            seed,
        }
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_dims: self.encoder.hidden_dims.clone(),
            embed_dim: self.encoder.embed_dim,
        }
    }

    /// `supcon` with every toggle off, `supremix` with every toggle on.
    pub fn method(&self) -> &'static str {
        match (self.loss.use_dm, self.loss.use_mix_neg, self.loss.use_mix_pos) {
            (false, false, false) => "supcon",
            (true, true, true) => "supremix",
            _ => "ablation",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn errors_list_every_bad_field() {
        let err = RunConfig::from_toml("[loss]\ntau = -1.0\n[train]\nbatch_size = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("loss.tau") && err.contains("train.batch_size"), "{err}");
        assert!(RunConfig::from_toml("[loss]\ntemperature = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[verify]\ninfimum_taus = [0.1, 0.5]\n").is_err());
        assert!(RunConfig::from_toml("[verify]\nbound_trials = 0\n").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut cfg = RunConfig::from_toml("[train]\nseed = 4\n").unwrap();
        cfg.resolve_seeds(None).unwrap();
        assert_eq!(cfg.train_seed(), 4);
        cfg.resolve_seeds(Some(9)).unwrap();
        assert_eq!((cfg.train_seed(), cfg.data_seed()), (9, 9));
    }

    #[test]
    fn method_labels() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.method(), "supremix");
        cfg.loss.use_dm = false;
        assert_eq!(cfg.method(), "ablation");
        cfg.loss.use_mix_neg = false;
        cfg.loss.use_mix_pos = false;
        assert_eq!(cfg.method(), "supcon");
    }
}
