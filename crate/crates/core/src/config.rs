//! Named presets and the plain-text (TOML) configuration format.
//!
//! Top-level keys: `stages`, `mix_epochs`, `mix_learning_rate`, `lambda`,
//! `v_init`, `skip_mix`; `[preprocess]` holds `size`, `mean`, `std`;
//! `[dm]` holds `benchmark_sizes`, `scale_factors`, `tau`, `eta`,
//! `eta_levels`, `epochs`, `learning_rate`, `gamma_percentile`,
//! `projection`, `stack_mode`, `score`.

use std::path::Path;

use crate::dynamic_mask::DmConfig;
use crate::error::{Error, Result};
use crate::hierarchy::HdmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Natural,
    Medical,
    Desk,
}

impl Preset {
    pub fn config(self) -> HdmConfig {
        match self {
            Preset::Natural => HdmConfig::natural(),
            Preset::Medical => HdmConfig::medical(),
            Preset::Desk => HdmConfig::desk(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Natural => "natural",
            Preset::Medical => "medical",
            Preset::Desk => "desk",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Preset::Natural),
            "medical" => Ok(Preset::Medical),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::config(format!(
                "unknown preset '{other}' (expected natural, medical or desk)"
            ))),
        }
    }
}

impl HdmConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: HdmConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

impl DmConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: DmConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
