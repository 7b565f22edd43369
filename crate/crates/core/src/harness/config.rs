use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cdrn::{CdrnArch, TrainConfig};
use crate::channel::{ChannelModel, SystemConfig};
use crate::error::{Error, Result};
use crate::estimators::EstimatorId;
use crate::nn::AdamConfig;

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "IRS_CDRN_OUT";
const FALLBACK_OUTPUT: &str = "irs-cdrn-out";

pub const DESK_PROFILE: &str = include_str!("../../configs/desk.cfg");
pub const FULL_PROFILE: &str = include_str!("../../configs/paper.cfg");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub c: usize,
    pub l: usize,
    #[serde(default = "unit")]
    pub pilot_power: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub list: Vec<EstimatorId>,
}

/// How training SNRs map to networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SnrMode {
    /// One network per sweep SNR, trained at that SNR.
    #[default]
    PerSnr,
    /// One network for every SNR, trained on SNRs drawn uniformly in dB.
    Blind { low_db: f64, high_db: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Training pairs per network.
    pub samples: usize,
    /// Held-out pairs kept for evaluation and activation dumps.
    #[serde(default = "default_heldout")]
    pub heldout_samples: usize,
    pub blocks: usize,
    pub layers: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
    pub batch_size: usize,
    /// Passes over the training split.
    pub epochs: usize,
    #[serde(default)]
    pub validation_fraction: f64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub snr_mode: SnrMode,
    /// Train a separate network for each user instead of one shared network.
    #[serde(default)]
    pub per_user: bool,
}

fn default_heldout() -> usize {
    100
}

fn default_filters() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    /// Trials per parallel work item.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn default_chunk() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    /// Root of every random stream in the run.
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub channel: ChannelModel,
    pub estimators: EstimatorSection,
    pub training: TrainingSection,
    pub sweep: SweepSection,
    pub seeds: SeedSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn desk() -> Self {
        Self::from_toml(DESK_PROFILE).expect("bundled desk profile is valid")
    }

    pub fn full() -> Self {
        Self::from_toml(FULL_PROFILE).expect("bundled full-scale profile is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.system_at(1.0)?.validate()?;
        self.channel.links.validate()?;
        if self.sweep.snr_db.is_empty() {
            return Err(Error::Config("the SNR grid is empty".into()));
        }
        if self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR grid entries must be finite".into()));
        }
        if self.sweep.trials == 0 || self.sweep.chunk == 0 {
            return Err(Error::Config("trials and chunk must be at least 1".into()));
        }
        if self.estimators.list.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if self.training.samples == 0 {
            return Err(Error::Config("training.samples must be at least 1".into()));
        }
        if let SnrMode::Blind { low_db, high_db } = self.training.snr_mode {
            if !(low_db.is_finite() && high_db.is_finite() && low_db <= high_db) {
                return Err(Error::Config("blind SNR range must satisfy low_db <= high_db".into()));
            }
        }
        self.arch().validate()?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            optimizer: self.training.optimizer,
            validation_fraction: self.training.validation_fraction,
        }
    }

    /// System parameters at a linear transmit SNR `P / sigma_z^2`.
    pub fn system_at(&self, snr_linear: f64) -> Result<SystemConfig> {
        if !(snr_linear > 0.0) || !snr_linear.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "SNR must be positive and finite, got {snr_linear}"
            )));
        }
        let s = &self.system;
        let noise_var_z = s.pilot_power / snr_linear;
        Ok(SystemConfig {
            m: s.m,
            n: s.n,
            k: s.k,
            c: s.c,
            l: s.l,
            pilot_power: s.pilot_power,
            noise_var_v: noise_var_z * s.pilot_power * s.l as f64,
            seed: self.seeds.master,
        })
    }

    pub fn arch(&self) -> CdrnArch {
        CdrnArch {
            m: self.system.m,
            n: self.system.n,
            blocks: self.training.blocks,
            layers: self.training.layers,
            filters: self.training.filters,
        }
    }

    pub fn uses(&self, id: EstimatorId) -> bool {
        self.estimators.list.contains(&id)
    }

    /// `flag`, then the config file, then `IRS_CDRN_OUT`, then a fixed fallback.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output.dir {
            return p.clone();
        }
        std::env::var_os(OUTPUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT))
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
