use std::path::{Path, PathBuf};

use affconv::loss::LossWeights;
use affconv::networks::NetworkConfig;
use affconv::optim::AdamConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Everything a training or ablation run reads from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub resolution: usize,
    /// Epochs for stages 1, 2 and 3.
    pub epochs: [usize; 3],
    pub batch_size: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub network: NetworkConfig,
    pub dataset: DatasetSpec,
    /// Fraction of training samples whose ground-truth diffuse map is used
    /// for the auxiliary loss.
    pub aux_fraction: f64,
    /// Which image the skin-tone term is measured on.
    pub std_target: StdTarget,
    /// Steps per epoch cap; `0` means one pass over the training split.
    pub steps_per_epoch: usize,
    pub ablation: AblationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub train: usize,
    pub held_out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdTarget {
    Diffuse,
    Rendered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_width: usize,
    pub lr: f64,
    /// Cosine decay floor as a fraction of `lr`; `1.0` keeps it constant.
    pub final_lr_fraction: f64,
    /// Evaluate held-out L1 every this many steps (0: only at the end).
    pub eval_every: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 4,
            base_width: 8,
            lr: 1e-3,
            final_lr_fraction: 0.05,
            eval_every: 0,
        }
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            path: PathBuf::from("toyset"),
            train: 200,
            held_out: 50,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            resolution: 64,
            epochs: [8, 8, 2],
            batch_size: 4,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            network: NetworkConfig {
                base_width: 8,
                ..NetworkConfig::default()
            },
            dataset: DatasetSpec::default(),
            aux_fraction: 0.1,
            std_target: StdTarget::Diffuse,
            steps_per_epoch: 0,
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.network.resolution != self.resolution {
            bail!(
                "network resolution {} differs from run resolution {}",
                self.network.resolution,
                self.resolution
            );
        }
        self.network.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            bail!("batch size must be positive");
        }
        if !(0.0..=1.0).contains(&self.aux_fraction) {
            bail!("aux_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}
