use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dancegen_core::eval::AeTraining;
use dancegen_core::inpainter::{InpainterConfig, InpainterMode, InpainterTraining};
use dancegen_core::music::SynthConfig;
use dancegen_core::predictor::PredictorTraining;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    /// Root holding `cau/`, `inpainter/` and `autoencoder/` checkpoints.
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "data".into(),
            checkpoints: "checkpoints".into(),
            outputs: "out".into(),
        }
    }
}

/// Architecture of the inpainter; joint widths come from the catalog skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpainterModel {
    pub clip_len: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub codec_layers: usize,
    pub codec_kernel: usize,
    pub unet_levels: usize,
    pub unet_channels: usize,
    pub mode: InpainterMode,
}

impl Default for InpainterModel {
    fn default() -> Self {
        let c = InpainterConfig::new(1);
        Self {
            clip_len: c.clip_len,
            window: c.window,
            embed_dim: c.embed_dim,
            codec_layers: c.codec_layers,
            codec_kernel: c.codec_kernel,
            unet_levels: c.unet_levels,
            unet_channels: c.unet_channels,
            mode: c.mode,
        }
    }
}

impl InpainterModel {
    pub fn build(&self, joints: usize) -> InpainterConfig {
        InpainterConfig {
            clip_len: self.clip_len,
            window: self.window,
            embed_dim: self.embed_dim,
            codec_layers: self.codec_layers,
            codec_kernel: self.codec_kernel,
            unet_levels: self.unet_levels,
            unet_channels: self.unet_channels,
            mode: self.mode,
            ..InpainterConfig::new(joints)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSection {
    pub window: usize,
    pub stride: usize,
    pub training: AeTraining,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        Self {
            window: 32,
            stride: 16,
            training: AeTraining::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub windows: Vec<usize>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            windows: vec![16, 32, 64, 128],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Predictor checkpoints are rewritten every this many epochs.
    pub checkpoint_every: usize,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub predictor: PredictorTraining,
    pub inpainter: InpainterTraining,
    pub inpainter_model: InpainterModel,
    pub autoencoder: AutoencoderSection,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            checkpoint_every: 50,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            predictor: PredictorTraining::default(),
            inpainter: InpainterTraining::default(),
            inpainter_model: InpainterModel::default(),
            autoencoder: AutoencoderSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("paths.corpus", &self.paths.corpus),
            ("paths.checkpoints", &self.paths.checkpoints),
            ("paths.outputs", &self.paths.outputs),
        ] {
            if p.as_os_str().is_empty() {
                bail!("`{name}` is empty");
            }
        }
        if self.checkpoint_every == 0 {
            bail!("`checkpoint_every` must be positive");
        }
        if self.evaluation.windows.is_empty() {
            bail!("`evaluation.windows` is empty");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
