//! Config, model and output-directory resolution.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hdm_core::testbed::{fit_linear, generate_dataset, LinearClassifier};
use hdm_core::{Classifier, Error, HdmConfig, Preset};

use crate::{ConfigArgs, ModelArgs};

pub fn load_config(args: &ConfigArgs) -> Result<HdmConfig> {
    let mut cfg = match &args.config {
        Some(path) => HdmConfig::load(path)?,
        None => Preset::from(args.preset).config(),
    };
    if let Some(stages) = args.stages {
        cfg.stages = stages;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_model(args: &ModelArgs) -> Result<LinearClassifier> {
    match &args.model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let model = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.clone(),
                message: e.to_string(),
            })?;
            Ok(model)
        }
        None => {
            let data = generate_dataset(args.seed, args.classes, args.patches.into())?;
            Ok(fit_linear(&data).context("fitting the testbed model")?)
        }
    }
}

/// The model must accept exactly what the preprocessing produces.
pub fn check_compatible(model: &impl Classifier, cfg: &HdmConfig) -> Result<()> {
    let (h, w) = cfg.preprocess.size;
    let expected = (h, w, cfg.preprocess.channels());
    if model.input_shape() != expected {
        let (mh, mw, mc) = model.input_shape();
        return Err(Error::Config(format!(
            "model takes {mh}x{mw}x{mc} inputs but the config prepares {h}x{w}x{}",
            expected.2
        ))
        .into());
    }
    Ok(())
}

pub fn output_dir(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(out.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// File stem used to name outputs derived from `path`.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}
