//! Run configuration for `train`, stored as TOML. Paths inside a config file
//! are relative to the file; the resolved copy written next to the outputs
//! holds absolute paths and the effective seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::Split;
use crate::fusion::{FusionArch, FusionHyper, OutputLoss};
use crate::lstm::LstmTrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Required: every run names its seed explicitly.
    pub seed: u64,
    /// Splits that get a score table after training.
    #[serde(default = "default_score_splits")]
    pub score_splits: Vec<Split>,
    #[serde(default)]
    pub lstm: LstmSection,
    #[serde(default)]
    pub fusion: FusionSection,
}

fn default_score_splits() -> Vec<Split> {
    vec![Split::Val, Split::Test]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub clip: f64,
}

impl Default for LstmSection {
    fn default() -> Self {
        let d = LstmTrainConfig::default();
        LstmSection {
            hidden: d.hidden,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            batch_size: d.batch_size,
            max_iterations: d.max_iterations,
            epochs: d.epochs,
            clip: d.clip,
        }
    }
}

impl LstmSection {
    pub fn train_config(&self, seed: u64) -> LstmTrainConfig {
        LstmTrainConfig {
            hidden: self.hidden.clone(),
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            max_iterations: self.max_iterations,
            epochs: self.epochs,
            clip: self.clip,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub spatial_width: usize,
    pub motion_width: usize,
    pub fusion_width: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: OutputLoss,
}

impl Default for FusionSection {
    fn default() -> Self {
        let d = FusionHyper::default();
        FusionSection {
            spatial_width: 200,
            motion_width: 200,
            fusion_width: 200,
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            lambda3: d.lambda3,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            epochs: d.epochs,
            batch_size: d.batch_size,
            loss: d.loss,
        }
    }
}

impl FusionSection {
    pub fn hyper(&self, seed: u64) -> FusionHyper {
        FusionHyper {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            loss: self.loss,
            seed,
        }
    }

    pub fn arch(&self, spatial_in: usize, motion_in: usize, classes: usize) -> FusionArch {
        FusionArch {
            spatial_in,
            motion_in,
            spatial_width: self.spatial_width,
            motion_width: self.motion_width,
            fusion_width: self.fusion_width,
            classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.spatial_width == 0 || self.motion_width == 0 || self.fusion_width == 0 {
            return Err(Error::Argument("fusion layer widths must be positive".into()));
        }
        self.hyper(0).validate()
    }
}

impl RunConfig {
    /// Reads a config and anchors its relative paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.out = cfg.out.map(|o| base.join(o));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.lstm.train_config(self.seed).validate()?;
        self.fusion.validate()
    }

    /// The config as written next to a run's outputs.
    pub fn resolved(&self, out: &Path) -> Result<Self> {
        let absolute = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
        Ok(RunConfig {
            manifest: absolute(&self.manifest)?,
            out: Some(absolute(out)?),
            ..self.clone()
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
