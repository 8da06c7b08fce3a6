//! Faithfulness and localization metrics for saliency maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{class_score, Classifier, PreparedImage, ScoreKind};
use crate::mask_math::{normalize, top_fraction_threshold, MaskGrid};

/// A saliency map with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyRecord {
    /// Map values, stored at 32-bit precision so that persisting the record
    /// is lossless.
    pub map: MaskGrid,
    pub source: String,
    pub method: String,
    pub class: usize,
}

impl SaliencyRecord {
    /// Wraps a map as-is (values rounded to `f32`).
    pub fn new(
        map: &MaskGrid,
        source: impl Into<String>,
        method: impl Into<String>,
        class: usize,
    ) -> Self {
        Self {
            map: map.map(|v| v as f32 as f64),
            source: source.into(),
            method: method.into(),
            class,
        }
    }

    /// Min-max normalizes the map into `[0, 1]` first.
    pub fn normalized(
        map: &MaskGrid,
        source: impl Into<String>,
        method: impl Into<String>,
        class: usize,
    ) -> Self {
        Self::new(&normalize(map), source, method, class)
    }
}

/// Replaces every pixel whose saliency falls below the nearest-rank
/// threshold for `keep_fraction` with 0 in all channels.
pub fn mute_below_percentile(
    x: &PreparedImage,
    s: &SaliencyRecord,
    keep_fraction: f64,
) -> Result<PreparedImage> {
    s.map.expect_shape(x.spatial_shape())?;
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::input("keep_fraction must lie in (0, 1]"));
    }
    let threshold = top_fraction_threshold(s.map.values(), keep_fraction);
    let sal = s.map.values();
    let zeros = vec![0.0; x.pixels().len()];
    Ok(x.fill_where(|p| sal[p] < threshold, &zeros))
}

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::input("no score pairs"));
    }
    if pairs.iter().any(|(y, o)| !y.is_finite() || !o.is_finite()) {
        return Err(Error::input("non-finite score"));
    }
    Ok(())
}

/// Per-image drop `max(0, Y - O) / Y × 100`.
pub fn drop_percent(y: f64, o: f64) -> Result<f64> {
    if y <= 0.0 || y.is_nan() {
        return Err(Error::input(format!(
            "full-image score {y} must be positive"
        )));
    }
    Ok((y - o).max(0.0) / y * 100.0)
}

/// Mean of [`drop_percent`] over `(Y_i, O_i)` pairs.
pub fn average_drop(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    let mut total = 0.0;
    for &(y, o) in pairs {
        total += drop_percent(y, o)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Fraction of pairs with `Y_i < O_i`.
pub fn average_increase(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    let hits = pairs.iter().filter(|(y, o)| y < o).count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMode {
    Deletion,
    Insertion,
}

/// Probability of the target class at each 1% step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub fractions: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub const CURVE_STEPS: usize = 100;

/// Pixel indices by descending saliency; ties keep row-major order.
fn saliency_order(map: &MaskGrid) -> Vec<usize> {
    let mut order: Vec<usize> = (0..map.len()).collect();
    let v = map.values();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    order
}

/// Deletion (to 0) or insertion (from an all-ones canvas) curve and its
/// trapezoidal area.
pub fn deletion_insertion<M: Classifier + ?Sized>(
    model: &M,
    x: &PreparedImage,
    s: &SaliencyRecord,
    mode: CurveMode,
) -> Result<(CurvePoints, f64)> {
    s.map.expect_shape(x.spatial_shape())?;
    let order = saliency_order(&s.map);
    let n = order.len();
    let c = x.channels();
    let mut canvas = match mode {
        CurveMode::Deletion => x.pixels().to_vec(),
        CurveMode::Insertion => vec![1.0; x.pixels().len()],
    };
    let mut fractions = Vec::with_capacity(CURVE_STEPS + 1);
    let mut probabilities = Vec::with_capacity(CURVE_STEPS + 1);
    let mut done = 0;
    for step in 0..=CURVE_STEPS {
        let target = (step * n).div_ceil(CURVE_STEPS);
        for &p in &order[done..target] {
            let px = &mut canvas[p * c..(p + 1) * c];
            match mode {
                CurveMode::Deletion => px.fill(0.0),
                CurveMode::Insertion => px.copy_from_slice(&x.pixels()[p * c..(p + 1) * c]),
            }
        }
        done = target;
        let img = x.with_pixels(canvas.clone());
        fractions.push(step as f64 / CURVE_STEPS as f64);
        probabilities.push(class_score(model, &img, s.class, ScoreKind::Probability)?);
    }
    let auc = trapezoid(&fractions, &probabilities);
    Ok((
        CurvePoints {
            fractions,
            probabilities,
        },
        auc,
    ))
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Share of saliency mass inside `foreground`; 0 when the map is all zero.
pub fn energy_proportion(map: &MaskGrid, foreground: &[bool]) -> Result<f64> {
    if foreground.len() != map.len() {
        return Err(Error::input(format!(
            "foreground has {} pixels, saliency map {}",
            foreground.len(),
            map.len()
        )));
    }
    if map.values().iter().any(|&v| v < 0.0) {
        return Err(Error::input("saliency must be non-negative"));
    }
    let total = map.sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = map
        .values()
        .iter()
        .zip(foreground)
        .filter(|(_, &f)| f)
        .map(|(v, _)| v)
        .sum();
    Ok(inside / total)
}

/// Which metrics a corpus evaluation computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Drop,
    Increase,
    Deletion,
    Insertion,
    Proportion,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Drop,
        Metric::Increase,
        Metric::Deletion,
        Metric::Insertion,
        Metric::Proportion,
    ];

    pub fn parse(name: &str) -> Result<Metric> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "drop" => Metric::Drop,
            "increase" => Metric::Increase,
            "deletion" => Metric::Deletion,
            "insertion" => Metric::Insertion,
            "proportion" => Metric::Proportion,
            other => return Err(Error::input(format!("unknown metric '{other}'"))),
        })
    }
}

/// Fraction of pixels kept for the two drop/increase settings
/// (80% and 70% of pixels muted).
pub const KEEP_FRACTIONS: [f64; 2] = [0.2, 0.3];

/// Scores of one image with and without muting at a keep fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutedScore {
    pub keep_fraction: f64,
    pub full: f64,
    pub muted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub muted: Vec<MutedScore>,
    pub deletion_auc: Option<f64>,
    pub insertion_auc: Option<f64>,
    pub proportion: Option<f64>,
}

impl ImageMetrics {
    pub fn drop_percent(&self) -> Result<Vec<f64>> {
        self.muted
            .iter()
            .map(|m| drop_percent(m.full, m.muted))
            .collect()
    }

    pub fn increase(&self) -> Vec<f64> {
        self.muted
            .iter()
            .map(|m| if m.full < m.muted { 1.0 } else { 0.0 })
            .collect()
    }
}

/// All selected metrics for one image.
pub fn evaluate_image<M: Classifier + ?Sized>(
    model: &M,
    x: &PreparedImage,
    s: &SaliencyRecord,
    foreground: Option<&[bool]>,
    metrics: &[Metric],
    score: ScoreKind,
) -> Result<ImageMetrics> {
    let wants = |m| metrics.contains(&m);
    let mut muted = Vec::new();
    if wants(Metric::Drop) || wants(Metric::Increase) {
        let full = class_score(model, x, s.class, score)?;
        for keep in KEEP_FRACTIONS {
            let img = mute_below_percentile(x, s, keep)?;
            muted.push(MutedScore {
                keep_fraction: keep,
                full,
                muted: class_score(model, &img, s.class, score)?,
            });
        }
    }
    let curve = |mode| -> Result<f64> { Ok(deletion_insertion(model, x, s, mode)?.1) };
    Ok(ImageMetrics {
        muted,
        deletion_auc: wants(Metric::Deletion)
            .then(|| curve(CurveMode::Deletion))
            .transpose()?,
        insertion_auc: wants(Metric::Insertion)
            .then(|| curve(CurveMode::Insertion))
            .transpose()?,
        proportion: match (wants(Metric::Proportion), foreground) {
            (true, Some(fg)) => Some(energy_proportion(&s.map, fg)?),
            _ => None,
        },
    })
}

/// Corpus-level means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    /// `(keep_fraction, average drop %)`.
    pub average_drop: Vec<(f64, f64)>,
    /// `(keep_fraction, average increase)`.
    pub average_increase: Vec<(f64, f64)>,
    pub deletion_auc: Option<f64>,
    pub insertion_auc: Option<f64>,
    pub proportion: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

pub fn aggregate(per_image: &[ImageMetrics]) -> Result<Aggregate> {
    if per_image.is_empty() {
        return Err(Error::input("no images to aggregate"));
    }
    let settings = per_image[0].muted.len();
    let mut average_drop = Vec::with_capacity(settings);
    let mut increase = Vec::with_capacity(settings);
    for k in 0..settings {
        let pairs: Vec<(f64, f64)> = per_image
            .iter()
            .map(|m| m.muted.get(k).map(|s| (s.full, s.muted)))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::input("images disagree on muting settings"))?;
        let keep = per_image[0].muted[k].keep_fraction;
        average_drop.push((keep, average_drop_or_nan(&pairs)));
        increase.push((keep, average_increase(&pairs)?));
    }
    Ok(Aggregate {
        images: per_image.len(),
        average_drop,
        average_increase: increase,
        deletion_auc: mean_of(per_image.iter().map(|m| m.deletion_auc)),
        insertion_auc: mean_of(per_image.iter().map(|m| m.insertion_auc)),
        proportion: mean_of(per_image.iter().map(|m| m.proportion)),
    })
}

// Non-positive logits make the drop undefined; report NaN rather than
// failing the whole corpus.
fn average_drop_or_nan(pairs: &[(f64, f64)]) -> f64 {
    average_drop(pairs).unwrap_or(f64::NAN)
}
