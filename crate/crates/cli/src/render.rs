use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use hdm_core::io::{load_image, load_saliency, save_png};
use hdm_core::render::{render, RenderMode, DEFAULT_ALPHA};
use hdm_core::Error;

use crate::setup::{output_dir, stem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Heatmap,
    Overlay,
    Mask,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Saliency file.
    pub saliency: PathBuf,
    /// Image the map was computed for; must have the map's size.
    pub image: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Overlay)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &RenderArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Error::Input(format!("--alpha {} outside [0, 1]", args.alpha)).into());
    }
    let (mode, tag) = match args.mode {
        ModeArg::Heatmap => (RenderMode::Heatmap, "heatmap"),
        ModeArg::Overlay => (RenderMode::Overlay, "overlay"),
        ModeArg::Mask => (RenderMode::Mask, "mask"),
    };
    let s = load_saliency(&args.saliency)?;
    let x = load_image(&args.image)?;
    let img = render(&x, &s.map, mode, args.alpha)?;
    let out = output_dir(&args.out)?;
    let path = out.join(format!("{}.{tag}.png", stem(&args.saliency)));
    save_png(&img, &path)?;
    println!("{}", path.display());
    Ok(())
}
