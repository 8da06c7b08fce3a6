use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hdm_core::io::{save_foreground, save_png, write_manifest, ManifestEntry};
use hdm_core::testbed::{accuracy, fit_linear, generate_dataset};

use crate::setup::{output_dir, write_text};
use crate::PatchArg;

#[derive(Debug, Args)]
pub struct TestbedArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = PatchArg::Single)]
    pub patches: PatchArg,
    /// Export only the first N images.
    #[arg(long)]
    pub limit: Option<usize>,
}

pub fn run(args: &TestbedArgs) -> Result<()> {
    let data = generate_dataset(args.seed, args.classes, args.patches.into())?;
    let model = fit_linear(&data)?;
    let out = output_dir(&args.out)?;
    let images = output_dir(&out.join("images"))?;
    let masks = output_dir(&out.join("foreground"))?;
    let (h, w) = data.config.size;
    let count = args
        .limit
        .unwrap_or(data.images.len())
        .min(data.images.len());
    let mut entries = Vec::with_capacity(count);
    for (i, (img, &label)) in data.images.iter().zip(&data.labels).take(count).enumerate() {
        let name = format!("img{i:03}.png");
        save_png(img, images.join(&name))?;
        save_foreground(&data.foreground(label), h, w, masks.join(&name))?;
        entries.push(ManifestEntry {
            image: images.join(&name),
            label: Some(label),
            foreground: Some(masks.join(&name)),
            saliency: None,
        });
    }
    write_manifest(out.join("manifest.tsv"), &entries)?;
    write_text(&out.join("model.json"), &serde_json::to_string(&model)?)?;
    println!(
        "{count} images, model training accuracy {:.3} -> {}",
        accuracy(&model, &data)?,
        out.display()
    );
    Ok(())
}
