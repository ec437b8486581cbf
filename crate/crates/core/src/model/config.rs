//! Model configuration and its TOML file format.
//!
//! ```toml
//! version = 1
//! input_size = 640
//! stage_channels = [16, 32, 64, 128, 256]
//! osa_depths = [1, 1, 2, 2]
//! num_classes = 1
//! head_strides = [16, 32]
//! bn_eps = 1e-5
//! anchors = [[87.0, 90.0], [127.0, 139.0], [154.0, 171.0], [191.0, 240.0]]
//! ```
//!
//! `head_strides`, `bn_eps` and `anchors` are optional and default to the
//! values above.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::anchors::{Anchor, AnchorSet};
use crate::error::{Error, Result};
use crate::tensor::BN_EPS;

pub const CONFIG_VERSION: u32 = 1;
/// Total downsampling between the input and the coarsest feature map.
pub const MAX_STRIDE: usize = 32;
pub const HEAD_STRIDES: [usize; 2] = [16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    /// Widths of the stem and the four backbone stages.
    pub stage_channels: Vec<usize>,
    /// Stacked RCS units in each stage's RCS-OSA module. Entries 2 and 3
    /// also size the neck's top-down and bottom-up modules.
    pub osa_depths: Vec<usize>,
    pub num_classes: usize,
    pub anchors: AnchorSet,
    pub head_strides: [usize; 2],
    pub bn_eps: f32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    version: u32,
    input_size: usize,
    stage_channels: Vec<usize>,
    osa_depths: Vec<usize>,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_strides: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bn_eps: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchors: Option<Vec<[f32; 2]>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::nano()
    }
}

impl ModelConfig {
    /// Reference desk-scale configuration.
    pub fn nano() -> Self {
        ModelConfig {
            input_size: 640,
            stage_channels: vec![16, 32, 64, 128, 256],
            osa_depths: vec![1, 1, 2, 2],
            num_classes: 1,
            anchors: AnchorSet::default(),
            head_strides: HEAD_STRIDES,
            bn_eps: BN_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % MAX_STRIDE != 0 {
            return Err(Error::config(
                "input_size",
                format!("must be a positive multiple of {MAX_STRIDE}, got {}", self.input_size),
            ));
        }
        if self.stage_channels.len() != 5 {
            return Err(Error::config(
                "stage_channels",
                format!("expected 5 widths (stem + 4 stages), got {}", self.stage_channels.len()),
            ));
        }
        if let Some(c) = self.stage_channels.iter().find(|&&c| c < 2 || c % 2 != 0) {
            return Err(Error::config("stage_channels", format!("widths must be even and >= 2, got {c}")));
        }
        if self.osa_depths.len() != 4 {
            return Err(Error::config(
                "osa_depths",
                format!("expected 4 depths, got {}", self.osa_depths.len()),
            ));
        }
        if self.osa_depths.contains(&0) {
            return Err(Error::config("osa_depths", "every RCS-OSA needs at least one unit"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be >= 1"));
        }
        if self.head_strides != HEAD_STRIDES {
            return Err(Error::config(
                "head_strides",
                format!("must be {HEAD_STRIDES:?}, got {:?}", self.head_strides),
            ));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::config("bn_eps", "must be positive"));
        }
        Ok(())
    }

    /// Channels per head output: `anchors_per_head * (5 + num_classes)`.
    pub fn head_channels(&self) -> usize {
        crate::analysis::anchors::ANCHORS_PER_HEAD * (5 + self.num_classes)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::config("<document>", e.message().to_string()))?;
        if file.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported config version {} (expected {CONFIG_VERSION})", file.version),
            ));
        }
        let head_strides = match file.head_strides {
            None => HEAD_STRIDES,
            Some(v) if v.len() == 2 => [v[0], v[1]],
            Some(v) => {
                return Err(Error::config("head_strides", format!("expected 2 strides, got {}", v.len())));
            }
        };
        let anchors = match file.anchors {
            None => AnchorSet::default(),
            Some(pairs) => AnchorSet::new(&pairs.iter().map(|p| Anchor::new(p[0], p[1])).collect::<Vec<_>>())?,
        };
        let cfg = ModelConfig {
            input_size: file.input_size,
            stage_channels: file.stage_channels,
            osa_depths: file.osa_depths,
            num_classes: file.num_classes,
            anchors,
            head_strides,
            bn_eps: file.bn_eps.unwrap_or(BN_EPS),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ConfigFile {
            version: CONFIG_VERSION,
            input_size: self.input_size,
            stage_channels: self.stage_channels.clone(),
            osa_depths: self.osa_depths.clone(),
            num_classes: self.num_classes,
            head_strides: Some(self.head_strides.to_vec()),
            bn_eps: Some(self.bn_eps),
            anchors: Some(self.anchors.as_slice().iter().map(|a| [a.w, a.h]).collect()),
        };
        toml::to_string(&file).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Short hex digest of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
