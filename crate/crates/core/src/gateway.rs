//! Classifier contract, input images and preprocessing.
//!
//! Any differentiable classifier plugs in through [`Classifier`]: one
//! function returning class scores and one returning a single score with its
//! input gradient, both over row-major `H × W × C` float buffers.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_math::{resample, MaskGrid};

/// ImageNet channel means used for natural-image preprocessing.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// ImageNet channel standard deviations.
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Pixels in `[0, 1]` before resizing and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("image must have positive height and width"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::input(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::input(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite pixel at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Builds an image from 8-bit samples, mapping `0..=255` onto `[0, 1]`.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(height, width, channels, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }
}

/// Where a [`PreparedImage`] came from and how it was normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessMeta {
    pub original_size: (usize, usize),
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Resized, channel-normalized classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    meta: PreprocessMeta,
}

impl PreparedImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn meta(&self) -> &PreprocessMeta {
        &self.meta
    }

    /// Same image geometry and metadata, new pixel values.
    pub(crate) fn with_pixels(&self, pixels: Vec<f64>) -> PreparedImage {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        PreparedImage {
            pixels,
            ..self.clone()
        }
    }

    /// `m ⊙ x`: one spatial mask applied to every channel.
    pub fn masked(&self, mask: &MaskGrid) -> Result<PreparedImage> {
        mask.expect_shape(self.spatial_shape())?;
        let c = self.channels;
        let pixels = self
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &v)| v * mask.values()[i / c])
            .collect();
        Ok(self.with_pixels(pixels))
    }

    /// Replaces the channels of every pixel where `select` is true with `fill`.
    pub(crate) fn fill_where(&self, select: impl Fn(usize) -> bool, fill: &[f64]) -> PreparedImage {
        let c = self.channels;
        let mut pixels = self.pixels.clone();
        for (p, chunk) in pixels.chunks_mut(c).enumerate() {
            if select(p) {
                chunk.copy_from_slice(&fill[p * c..(p + 1) * c]);
            }
        }
        self.with_pixels(pixels)
    }
}

/// Target geometry and channel statistics for [`preprocess`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub size: (usize, usize),
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PreprocessConfig {
    pub fn imagenet() -> Self {
        Self {
            size: (224, 224),
            mean: IMAGENET_MEAN.to_vec(),
            std: IMAGENET_STD.to_vec(),
        }
    }

    /// Resize only; pixel values pass through unchanged.
    pub fn identity(size: (usize, usize), channels: usize) -> Self {
        Self {
            size,
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, img: &RawImage) -> Result<PreparedImage> {
        preprocess(img, self.size, &self.mean, &self.std)
    }
}

/// Bilinear resize (half-pixel centers) followed by `(v - mean[c]) / std[c]`.
pub fn preprocess(
    img: &RawImage,
    target_size: (usize, usize),
    mean: &[f64],
    std: &[f64],
) -> Result<PreparedImage> {
    let c = img.channels();
    if target_size.0 == 0 || target_size.1 == 0 {
        return Err(Error::config("target size must be positive"));
    }
    if mean.len() != c || std.len() != c {
        return Err(Error::config(format!(
            "mean/std need {c} components, got {}/{}",
            mean.len(),
            std.len()
        )));
    }
    if std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::config("std components must be positive"));
    }
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::config("mean components must be finite"));
    }
    if img.pixels.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("image contains non-finite pixels"));
    }

    let resized = if (img.height, img.width) == target_size {
        img.pixels.clone()
    } else {
        resample::resize_hwc(&img.pixels, (img.height, img.width), c, target_size)
    };
    let pixels = resized
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - mean[i % c]) / std[i % c])
        .collect();
    Ok(PreparedImage {
        height: target_size.0,
        width: target_size.1,
        channels: c,
        pixels,
        meta: PreprocessMeta {
            original_size: (img.height, img.width),
            mean: mean.to_vec(),
            std: std.to_vec(),
        },
    })
}

/// A differentiable image classifier.
///
/// Implementations must be deterministic: identical inputs give identical
/// scores. Inputs are row-major `H × W × C` buffers matching
/// [`Classifier::input_shape`]; callers validate the length.
pub trait Classifier {
    fn num_classes(&self) -> usize;

    /// Expected `(H, W, C)` of the input buffer.
    fn input_shape(&self) -> (usize, usize, usize);

    /// Pre-softmax scores for every class.
    fn scores(&self, pixels: &[f64]) -> Result<Vec<f64>>;

    /// Pre-softmax score of `class` and its gradient with respect to the
    /// input. The score must equal `scores(pixels)[class]` exactly.
    fn score_and_gradient(&self, _pixels: &[f64], _class: usize) -> Result<(f64, Vec<f64>)> {
        Err(Error::Capability(
            "classifier does not provide input gradients".into(),
        ))
    }
}

impl<M: Classifier + ?Sized> Classifier for &M {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (**self).input_shape()
    }

    fn scores(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        (**self).scores(pixels)
    }

    fn score_and_gradient(&self, pixels: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        (**self).score_and_gradient(pixels, class)
    }
}

/// Wraps a classifier that is not safe for concurrent use so that every
/// call is serialized behind a lock.
#[derive(Debug)]
pub struct Serialized<M> {
    inner: Mutex<M>,
    num_classes: usize,
    input_shape: (usize, usize, usize),
}

impl<M: Classifier> Serialized<M> {
    pub fn new(model: M) -> Self {
        Self {
            num_classes: model.num_classes(),
            input_shape: model.input_shape(),
            inner: Mutex::new(model),
        }
    }
}

impl<M: Classifier> Classifier for Serialized<M> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    fn scores(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        self.inner
            .lock()
            .expect("classifier lock poisoned")
            .scores(pixels)
    }

    fn score_and_gradient(&self, pixels: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        self.inner
            .lock()
            .expect("classifier lock poisoned")
            .score_and_gradient(pixels, class)
    }
}

/// Which quantity stands in for "the node at the predicted class".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Pre-softmax score.
    #[default]
    Logit,
    /// Softmax probability.
    Probability,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub class: usize,
}

impl Prediction {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.scores)
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn check_input<M: Classifier + ?Sized>(model: &M, x: &PreparedImage) -> Result<()> {
    let expected = model.input_shape();
    if x.shape() != expected {
        return Err(Error::input(format!(
            "classifier expects {}x{}x{}, got {}x{}x{}",
            expected.0, expected.1, expected.2, x.height, x.width, x.channels
        )));
    }
    Ok(())
}

fn check_class<M: Classifier + ?Sized>(model: &M, class: usize) -> Result<()> {
    if class >= model.num_classes() {
        return Err(Error::input(format!(
            "class {class} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

pub fn predict<M: Classifier + ?Sized>(model: &M, x: &PreparedImage) -> Result<Prediction> {
    check_input(model, x)?;
    let scores = model.scores(&x.pixels)?;
    if scores.len() != model.num_classes() {
        return Err(Error::Capability(format!(
            "classifier returned {} scores for {} classes",
            scores.len(),
            model.num_classes()
        )));
    }
    let class = argmax(&scores);
    Ok(Prediction { scores, class })
}

/// Pre-softmax score of class `p` and its gradient with respect to `x`.
pub fn target_score_and_gradient<M: Classifier + ?Sized>(
    model: &M,
    x: &PreparedImage,
    p: usize,
) -> Result<(f64, Vec<f64>)> {
    check_input(model, x)?;
    check_class(model, p)?;
    score_and_gradient_raw(model, &x.pixels, p, ScoreKind::Logit)
}

/// Score of class `p` under `kind`.
pub fn class_score<M: Classifier + ?Sized>(
    model: &M,
    x: &PreparedImage,
    p: usize,
    kind: ScoreKind,
) -> Result<f64> {
    check_input(model, x)?;
    check_class(model, p)?;
    score_raw(model, &x.pixels, p, kind)
}

pub(crate) fn score_raw<M: Classifier + ?Sized>(
    model: &M,
    pixels: &[f64],
    p: usize,
    kind: ScoreKind,
) -> Result<f64> {
    let scores = model.scores(pixels)?;
    Ok(match kind {
        ScoreKind::Logit => scores[p],
        ScoreKind::Probability => softmax(&scores)[p],
    })
}

pub(crate) fn score_and_gradient_raw<M: Classifier + ?Sized>(
    model: &M,
    pixels: &[f64],
    p: usize,
    kind: ScoreKind,
) -> Result<(f64, Vec<f64>)> {
    match kind {
        ScoreKind::Logit => {
            let (score, grad) = model.score_and_gradient(pixels, p)?;
            if grad.len() != pixels.len() {
                return Err(Error::Capability(format!(
                    "gradient has {} entries for an input of {}",
                    grad.len(),
                    pixels.len()
                )));
            }
            Ok((score, grad))
        }
        ScoreKind::Probability => {
            // d softmax_p = softmax_p * (d f_p - sum_k softmax_k d f_k)
            let scores = model.scores(pixels)?;
            let probs = softmax(&scores);
            let mut mixed = vec![0.0; pixels.len()];
            let mut own = Vec::new();
            for (k, &pk) in probs.iter().enumerate() {
                let (_, g) = model.score_and_gradient(pixels, k)?;
                for (m, gi) in mixed.iter_mut().zip(&g) {
                    *m += pk * gi;
                }
                if k == p {
                    own = g;
                }
            }
            let pp = probs[p];
            let grad = own.iter().zip(&mixed).map(|(a, b)| pp * (a - b)).collect();
            Ok((pp, grad))
        }
    }
}
