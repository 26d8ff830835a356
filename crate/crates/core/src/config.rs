//! Model configuration file (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::InitConfig;
use crate::neurons::NeuronConfig;
use crate::profiler::CostModel;
use crate::spectral::StftConfig;
use crate::subband::PartitionScheme;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FullBandConfig {
    pub layer_sizes: Vec<usize>,
}

impl Default for FullBandConfig {
    fn default() -> Self {
        Self { layer_sizes: vec![384, 384] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubbandConfig {
    /// Hidden widths, one list per partition.
    pub layer_sizes: Vec<Vec<usize>>,
}

impl Default for SubbandConfig {
    fn default() -> Self {
        Self { layer_sizes: vec![vec![256]; 3] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Causal running mean; identical offline and streaming.
    #[default]
    Ema,
    /// Mean over the whole utterance; offline only.
    UtteranceMean,
}

/// Network inputs are magnitudes divided by a running mean magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    pub mode: NormMode,
    /// Per-frame smoothing of the running mean.
    pub ema_decay: f64,
    /// Added to the mean before dividing.
    pub floor: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { mode: NormMode::Ema, ema_decay: 0.99, floor: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    /// Encoder/decoder overhead added to the window length.
    pub enc_dec_ms: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self { enc_dec_ms: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub partition: PartitionScheme,
    pub fullband: FullBandConfig,
    pub subband: SubbandConfig,
    pub neuron: NeuronConfig,
    pub normalization: NormConfig,
    pub init: InitConfig,
    /// Start the filter readouts at the pass-through filter.
    pub identity_filter_init: bool,
    pub loss: LossWeights,
    pub cost: CostModel,
    pub latency: LatencyConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            partition: PartitionScheme::default(),
            fullband: FullBandConfig::default(),
            subband: SubbandConfig::default(),
            neuron: NeuronConfig::default(),
            normalization: NormConfig::default(),
            init: InitConfig::default(),
            identity_filter_init: true,
            loss: LossWeights::default(),
            cost: CostModel::default(),
            latency: LatencyConfig::default(),
        }
    }
}

/// Settings that change what a checkpoint computes; hashed into checkpoints.
#[derive(Serialize)]
struct Architecture<'a> {
    stft: &'a StftConfig,
    partition: &'a PartitionScheme,
    fullband: &'a FullBandConfig,
    subband: &'a SubbandConfig,
    neuron: &'a NeuronConfig,
    normalization: &'a NormConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.partition.validate()?;
        self.neuron.validate()?;
        self.init.validate()?;
        self.loss.validate()?;
        self.cost.validate()?;
        if self.partition.num_bins != self.stft.num_bins() {
            return Err(Error::config(format!(
                "partition covers {} bins but the transform yields {}",
                self.partition.num_bins,
                self.stft.num_bins()
            )));
        }
        if self.fullband.layer_sizes.is_empty() || self.fullband.layer_sizes.contains(&0) {
            return Err(Error::config("fullband needs at least one layer of non-zero width"));
        }
        let k = self.partition.groupings.len();
        if self.subband.layer_sizes.len() != k {
            return Err(Error::config(format!(
                "{} subband width lists for {k} partitions",
                self.subband.layer_sizes.len()
            )));
        }
        if self.subband.layer_sizes.iter().any(|w| w.is_empty() || w.contains(&0)) {
            return Err(Error::config("each subband net needs at least one layer of non-zero width"));
        }
        let n = &self.normalization;
        if !(0.0..1.0).contains(&n.ema_decay) || !(n.floor > 0.0) {
            return Err(Error::config("normalization needs ema_decay in [0, 1) and a positive floor"));
        }
        if !(self.latency.enc_dec_ms >= 0.0) {
            return Err(Error::config("enc_dec_ms must be non-negative"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_toml_string()?)?;
        Ok(())
    }

    /// SHA-256 of the architecture-relevant settings.
    pub fn architecture_hash(&self) -> String {
        let arch = Architecture {
            stft: &self.stft,
            partition: &self.partition,
            fullband: &self.fullband,
            subband: &self.subband,
            neuron: &self.neuron,
            normalization: &self.normalization,
        };
        let text = toml::to_string(&arch).expect("architecture serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Algorithmic latency in seconds: analysis window plus encode/decode.
    pub fn latency_s(&self) -> f64 {
        self.stft.window_latency_s() + self.latency.enc_dec_ms * 1e-3
    }

    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            fullband: FullBandConfig { layer_sizes: vec![64, 64] },
            subband: SubbandConfig { layer_sizes: vec![vec![32]; 3] },
            ..Self::default()
        }
    }
}
