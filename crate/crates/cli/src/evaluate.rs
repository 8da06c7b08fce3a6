use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, ValueEnum};
use hdm_core::io::{load_foreground, load_image, load_saliency, read_manifest, ManifestEntry};
use hdm_core::metrics::{aggregate, drop_percent, evaluate_image, ImageMetrics, Metric};
use hdm_core::{Error, HdmConfig, SaliencyRecord, ScoreKind};
use rayon::prelude::*;
use serde::Serialize;

use crate::setup::{check_compatible, load_config, load_model, output_dir, write_text};
use crate::{ConfigArgs, ModelArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Drop,
    Increase,
    Deletion,
    Insertion,
    Proportion,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Drop => Metric::Drop,
            MetricArg::Increase => Metric::Increase,
            MetricArg::Deletion => Metric::Deletion,
            MetricArg::Insertion => Metric::Insertion,
            MetricArg::Proportion => Metric::Proportion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Probability,
    Logit,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Tab-separated manifest: image, label, foreground, saliency.
    pub manifest: PathBuf,
    /// Directory holding `<image stem>.sal` files for entries without an
    /// explicit saliency column.
    #[arg(long)]
    pub saliency: Option<PathBuf>,
    /// Output directory for `report.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics to compute.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [
        MetricArg::Drop, MetricArg::Increase, MetricArg::Deletion, MetricArg::Insertion, MetricArg::Proportion,
    ])]
    pub metrics: Vec<MetricArg>,
    /// Score compared by average drop and increase.
    #[arg(long, value_enum, default_value_t = ScoreArg::Probability)]
    pub score: ScoreArg,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Serialize)]
struct MutedLog {
    keep_fraction: f64,
    full: f64,
    muted: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    drop_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    increase: Option<bool>,
}

#[derive(Serialize)]
struct ImageRecord {
    record: &'static str,
    index: usize,
    image: String,
    saliency: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    class: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    muted: Vec<MutedLog>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deletion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    insertion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proportion: Option<f64>,
}

#[derive(Serialize)]
struct SettingValue {
    keep_fraction: f64,
    value: f64,
}

#[derive(Serialize)]
struct AggregateRecord {
    record: &'static str,
    images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    average_drop: Option<Vec<SettingValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    average_increase: Option<Vec<SettingValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deletion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    insertion_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proportion: Option<f64>,
}

fn saliency_path(entry: &ManifestEntry, dir: Option<&Path>) -> Option<PathBuf> {
    entry
        .saliency
        .clone()
        .or_else(|| dir.map(|d| d.join(format!("{}.sal", entry.stem()))))
}

fn evaluate_entry(
    model: &hdm_core::testbed::LinearClassifier,
    cfg: &HdmConfig,
    entry: &ManifestEntry,
    sal_path: &Path,
    metrics: &[Metric],
    score: ScoreKind,
) -> Result<(SaliencyRecord, ImageMetrics)> {
    let raw = load_image(&entry.image)?;
    if raw.channels() != cfg.preprocess.channels() {
        return Err(Error::Input(format!(
            "{} has {} channels, the config expects {}",
            entry.image.display(),
            raw.channels(),
            cfg.preprocess.channels()
        ))
        .into());
    }
    let x = cfg.preprocess.apply(&raw)?;
    let mut s = load_saliency(sal_path)?;
    if s.map.min() < 0.0 || s.map.max() > 1.0 {
        s = SaliencyRecord::normalized(&s.map, s.source, s.method, s.class);
    }
    let fg = match &entry.foreground {
        Some(path) if metrics.contains(&Metric::Proportion) => {
            let (h, w, fg) = load_foreground(path)?;
            if (h, w) != s.map.shape() {
                return Err(Error::Input(format!(
                    "foreground {} is {h}x{w}, saliency {} is {}x{}",
                    path.display(),
                    sal_path.display(),
                    s.map.height(),
                    s.map.width()
                ))
                .into());
            }
            Some(fg)
        }
        _ => None,
    };
    let m = evaluate_image(model, &x, &s, fg.as_deref(), metrics, score)?;
    Ok((s, m))
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let model = load_model(&args.model)?;
    check_compatible(&model, &cfg)?;
    let entries = read_manifest(&args.manifest)?;
    if entries.is_empty() {
        return Err(Error::Input(format!("{} lists no images", args.manifest.display())).into());
    }
    let mut metrics: Vec<Metric> = args.metrics.iter().map(|&m| m.into()).collect();
    metrics.dedup();
    let score = match args.score {
        ScoreArg::Probability => ScoreKind::Probability,
        ScoreArg::Logit => ScoreKind::Logit,
    };

    let paths: Vec<Option<PathBuf>> = entries
        .iter()
        .map(|e| saliency_path(e, args.saliency.as_deref()))
        .collect();
    let missing: Vec<String> = entries
        .iter()
        .zip(&paths)
        .filter(|(_, p)| !p.as_ref().is_some_and(|p| p.is_file()))
        .map(|(e, p)| match p {
            Some(p) => format!("{} (expected {})", e.image.display(), p.display()),
            None => format!(
                "{} (no saliency column and no --saliency dir)",
                e.image.display()
            ),
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "{} image(s) have no saliency file:\n  {}",
            missing.len(),
            missing.join("\n  ")
        ))
        .into());
    }

    let evaluated: Vec<(SaliencyRecord, ImageMetrics)> = entries
        .par_iter()
        .zip(&paths)
        .map(|(e, p)| {
            evaluate_entry(
                &model,
                &cfg,
                e,
                p.as_deref().expect("checked above"),
                &metrics,
                score,
            )
        })
        .collect::<Result<_>>()?;

    let wants = |m| metrics.contains(&m);
    let mut lines = Vec::with_capacity(entries.len() + 1);
    for (index, ((entry, path), (s, m))) in entries.iter().zip(&paths).zip(&evaluated).enumerate() {
        let muted = m
            .muted
            .iter()
            .map(|ms| MutedLog {
                keep_fraction: ms.keep_fraction,
                full: ms.full,
                muted: ms.muted,
                drop_percent: wants(Metric::Drop)
                    .then(|| drop_percent(ms.full, ms.muted).ok())
                    .flatten(),
                increase: wants(Metric::Increase).then_some(ms.full < ms.muted),
            })
            .collect();
        lines.push(serde_json::to_string(&ImageRecord {
            record: "image",
            index,
            image: entry.image.display().to_string(),
            saliency: path.as_ref().expect("checked above").display().to_string(),
            label: entry.label,
            class: s.class,
            muted,
            deletion_auc: m.deletion_auc,
            insertion_auc: m.insertion_auc,
            proportion: m.proportion,
        })?);
    }

    let per_image: Vec<ImageMetrics> = evaluated.into_iter().map(|(_, m)| m).collect();
    let agg = aggregate(&per_image)?;
    let settings = |values: &[(f64, f64)]| {
        values
            .iter()
            .map(|&(keep_fraction, value)| SettingValue {
                keep_fraction,
                value,
            })
            .collect::<Vec<_>>()
    };
    let record = AggregateRecord {
        record: "aggregate",
        images: agg.images,
        average_drop: wants(Metric::Drop).then(|| settings(&agg.average_drop)),
        average_increase: wants(Metric::Increase).then(|| settings(&agg.average_increase)),
        deletion_auc: agg.deletion_auc,
        insertion_auc: agg.insertion_auc,
        proportion: agg.proportion,
    };
    let summary = serde_json::to_string(&record)?;
    lines.push(summary.clone());

    let out = output_dir(&args.out)?;
    let report = out.join("report.jsonl");
    write_text(&report, &(lines.join("\n") + "\n"))?;
    println!("{summary}");
    println!("{} images -> {}", agg.images, report.display());
    Ok(())
}
