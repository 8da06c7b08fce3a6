use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hdm_core::io::{load_image, save_png, save_saliency};
use hdm_core::render::{render_heatmap, render_overlay, DEFAULT_ALPHA};
use hdm_core::{explain, predict, Error, HdmConfig, MaskGrid, RawImage, SaliencyRecord};
use serde::Serialize;

use crate::setup::{check_compatible, load_config, load_model, output_dir, stem, write_text};
use crate::{ConfigArgs, ModelArgs};

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Image to explain (PNG, JPEG or BMP).
    pub image: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Heatmap weight in the overlays.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Serialize)]
struct GridLog {
    benchmark: usize,
    scale: usize,
    level: usize,
    shape: (usize, usize),
    trace: Vec<f64>,
}

#[derive(Serialize)]
struct StageLog {
    stage: usize,
    gamma: f64,
    saliency: String,
    grids: Vec<GridLog>,
}

#[derive(Serialize)]
struct MixLog<'a> {
    v: &'a [f64],
    weights: &'a [f64],
    trace: &'a [f64],
}

#[derive(Serialize)]
struct RunLog<'a> {
    image: String,
    class: usize,
    scores: Vec<f64>,
    saliency: String,
    stages: Vec<StageLog>,
    mix: MixLog<'a>,
    outputs: Vec<String>,
    config: &'a HdmConfig,
}

/// The preprocessed image mapped back to `[0, 1]` for rendering.
fn display_image(raw: &RawImage, cfg: &HdmConfig) -> Result<RawImage> {
    let c = raw.channels();
    let plain = hdm_core::preprocess(raw, cfg.preprocess.size, &vec![0.0; c], &vec![1.0; c])?;
    let (h, w, c) = plain.shape();
    Ok(RawImage::new(
        h,
        w,
        c,
        plain.pixels().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )?)
}

pub fn run(args: &ExplainArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Error::Input(format!("--alpha {} outside [0, 1]", args.alpha)).into());
    }
    let cfg = load_config(&args.config)?;
    let model = load_model(&args.model)?;
    check_compatible(&model, &cfg)?;
    let raw = load_image(&args.image)?;
    if raw.channels() != cfg.preprocess.channels() {
        return Err(Error::Input(format!(
            "{} has {} channels, the config expects {}",
            args.image.display(),
            raw.channels(),
            cfg.preprocess.channels()
        ))
        .into());
    }

    let result = explain(&model, &raw, &cfg)?;
    let scores = predict(&model, &result.input)?.scores;
    let out = output_dir(&args.out)?;
    let name = stem(&args.image);
    let source = args.image.display().to_string();
    let shown = display_image(&raw, &cfg)?;
    let mut outputs = Vec::new();

    let mut write_maps = |tag: &str, map: &MaskGrid, method: &str| -> Result<String> {
        let sal = format!("{name}{tag}.sal");
        save_saliency(
            &SaliencyRecord::new(map, source.as_str(), method, result.class),
            out.join(&sal),
        )?;
        let heat = format!("{name}{tag}.heatmap.png");
        save_png(&render_heatmap(map), out.join(&heat))?;
        let overlay = format!("{name}{tag}.overlay.png");
        save_png(
            &render_overlay(&shown, map, args.alpha)?,
            out.join(&overlay),
        )?;
        outputs.extend([sal.clone(), heat, overlay]);
        Ok(sal)
    };

    let saliency = write_maps("", result.mixed(), "hdm")?;
    let mut stages = Vec::with_capacity(result.stages.len());
    for (i, stage) in result.stages.iter().enumerate() {
        let tag = format!(".stage{}", i + 1);
        let sal = write_maps(&tag, &stage.dm.overlay, &format!("dm-stage{}", i + 1))?;
        stages.push(StageLog {
            stage: i + 1,
            gamma: stage.dm.gamma,
            saliency: sal,
            grids: stage
                .dm
                .cascade
                .iter()
                .map(|e| GridLog {
                    benchmark: e.benchmark,
                    scale: cfg.dm.scale_factors[e.scale],
                    level: e.level,
                    shape: e.grid.shape(),
                    trace: e.trace.clone(),
                })
                .collect(),
        });
    }

    let log_name = format!("{name}.log.json");
    outputs.push(log_name.clone());
    let log = RunLog {
        image: source.clone(),
        class: result.class,
        scores,
        saliency: saliency.clone(),
        stages,
        mix: MixLog {
            v: &result.mix.v,
            weights: &result.mix.weights,
            trace: &result.mix.trace,
        },
        outputs,
        config: &cfg,
    };
    write_text(&out.join(&log_name), &serde_json::to_string(&log)?)?;
    println!(
        "{}: class {}, {} stages -> {}",
        source,
        result.class,
        result.stages.len(),
        out.join(&saliency).display()
    );
    Ok(())
}
