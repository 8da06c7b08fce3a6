//! Synthetic planted-patch data and a closed-form linear classifier.
//!
//! Each class owns one (or two) rectangular patches. An image of class `c`
//! is low-amplitude uniform noise with bright pixels inside class `c`'s
//! patches, so the class evidence is known exactly and a softmax-regression
//! model learns weights concentrated on those patches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{softmax, Classifier, PreparedImage, PreprocessConfig, RawImage};
use crate::mask_math::MaskGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMode {
    Single,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top
            && row < self.top + self.height
            && col >= self.left
            && col < self.left + self.width
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.top < other.top + other.height
            && other.top < self.top + self.height
            && self.left < other.left + other.width
            && other.left < self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Geometry and noise model of a planted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    pub size: (usize, usize),
    pub num_classes: usize,
    pub patch_size: usize,
    /// Top-left corners available to patches, handed out in order.
    pub slots: Vec<(usize, usize)>,
    /// Background pixels are uniform in `[0, noise]`.
    pub noise: f64,
    pub intensity: f64,
    /// Relative per-image jitter of the patch intensity.
    pub intensity_jitter: f64,
    pub images_per_class: usize,
    pub mode: PatchMode,
    pub seed: u64,
}

impl TestbedConfig {
    /// 32×32 single-channel images with 8×8 patches (6.25% of the area).
    pub fn desk(seed: u64, num_classes: usize, mode: PatchMode) -> Self {
        Self {
            size: (32, 32),
            num_classes,
            patch_size: 8,
            // consecutive pairs sit on opposite sides for dual mode
            slots: vec![
                (2, 2),
                (22, 22),
                (2, 22),
                (22, 2),
                (2, 12),
                (22, 12),
                (12, 2),
                (12, 22),
                (12, 12),
            ],
            noise: 0.1,
            intensity: 0.9,
            intensity_jitter: 0.1,
            images_per_class: 20,
            mode,
            seed,
        }
    }

    fn patches_per_class(&self) -> usize {
        match self.mode {
            PatchMode::Single => 1,
            PatchMode::Dual => 2,
        }
    }

    /// Patch rectangles for every class.
    pub fn layout(&self) -> Result<Vec<Vec<Rect>>> {
        if self.num_classes < 2 {
            return Err(Error::config("testbed needs at least two classes"));
        }
        let per = self.patches_per_class();
        let needed = self.num_classes * per;
        if needed > self.slots.len() {
            return Err(Error::config(format!(
                "{} classes need {needed} patch slots, only {} configured",
                self.num_classes,
                self.slots.len()
            )));
        }
        let rects: Vec<Rect> = self.slots[..needed]
            .iter()
            .map(|&(top, left)| Rect {
                top,
                left,
                height: self.patch_size,
                width: self.patch_size,
            })
            .collect();
        for r in &rects {
            if r.top + r.height > self.size.0 || r.left + r.width > self.size.1 {
                return Err(Error::config(format!("patch {r:?} exceeds image bounds")));
            }
        }
        for (i, a) in rects.iter().enumerate() {
            if rects[i + 1..].iter().any(|b| a.intersects(b)) {
                return Err(Error::config(format!("patch {a:?} overlaps another patch")));
            }
        }
        // class c takes slots [c * per, (c + 1) * per)
        Ok(rects.chunks(per).map(|c| c.to_vec()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub config: TestbedConfig,
    pub images: Vec<RawImage>,
    pub labels: Vec<usize>,
    /// Patch rectangles owned by each class.
    pub patches: Vec<Vec<Rect>>,
}

impl PlantedDataset {
    /// Binary foreground map of `class`'s patches.
    pub fn foreground(&self, class: usize) -> Vec<bool> {
        let (h, w) = self.config.size;
        let rects = &self.patches[class];
        (0..h * w)
            .map(|i| rects.iter().any(|r| r.contains(i / w, i % w)))
            .collect()
    }

    /// The images with resize-free, identity normalization.
    pub fn prepared(&self) -> Result<Vec<PreparedImage>> {
        let pre = PreprocessConfig::identity(self.config.size, 1);
        self.images.iter().map(|img| pre.apply(img)).collect()
    }

    /// Indicator saliency of the planted patches of `class`.
    pub fn oracle_saliency(&self, class: usize) -> MaskGrid {
        let (h, w) = self.config.size;
        let values = self
            .foreground(class)
            .into_iter()
            .map(|f| if f { 1.0 } else { 0.0 })
            .collect();
        MaskGrid::new(h, w, values).expect("foreground matches image size")
    }
}

pub fn generate_dataset(seed: u64, num_classes: usize, mode: PatchMode) -> Result<PlantedDataset> {
    generate(&TestbedConfig::desk(seed, num_classes, mode))
}

pub fn generate(config: &TestbedConfig) -> Result<PlantedDataset> {
    let patches = config.layout()?;
    if config.noise < 0.0 || config.intensity_jitter < 0.0 {
        return Err(Error::config("noise and jitter must be non-negative"));
    }
    let (h, w) = config.size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut images = Vec::with_capacity(config.num_classes * config.images_per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for _ in 0..config.images_per_class {
        for (class, rects) in patches.iter().enumerate() {
            let level =
                config.intensity * (1.0 + config.intensity_jitter * rng.random_range(-1.0..=1.0));
            let pixels = (0..h * w)
                .map(|i| {
                    let bg = config.noise * rng.random::<f64>();
                    if rects.iter().any(|r| r.contains(i / w, i % w)) {
                        (level + bg).clamp(0.0, 1.0)
                    } else {
                        bg
                    }
                })
                .collect();
            images.push(RawImage::new(h, w, 1, pixels)?);
            labels.push(class);
        }
    }
    Ok(PlantedDataset {
        config: config.clone(),
        images,
        labels,
        patches,
    })
}

/// `f(x) = W vec(x) + b`, pre-softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    shape: (usize, usize, usize),
    num_classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn new(
        shape: (usize, usize, usize),
        num_classes: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let dim = shape.0 * shape.1 * shape.2;
        if weights.len() != num_classes * dim || bias.len() != num_classes {
            return Err(Error::input(format!(
                "linear model {num_classes}x{dim} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            shape,
            num_classes,
            weights,
            bias,
        })
    }

    fn dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim()..(class + 1) * self.dim()]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn score(&self, pixels: &[f64], class: usize) -> f64 {
        self.weight_row(class)
            .iter()
            .zip(pixels)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias[class]
    }

    fn check_len(&self, pixels: &[f64]) -> Result<()> {
        if pixels.len() != self.dim() {
            return Err(Error::input(format!(
                "linear model expects {} inputs, got {}",
                self.dim(),
                pixels.len()
            )));
        }
        Ok(())
    }
}

impl Classifier for LinearClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn scores(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        self.check_len(pixels)?;
        Ok((0..self.num_classes)
            .map(|c| self.score(pixels, c))
            .collect())
    }

    fn score_and_gradient(&self, pixels: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        self.check_len(pixels)?;
        Ok((self.score(pixels, class), self.weight_row(class).to_vec()))
    }
}

/// Returns the same scores for every input; its input gradient is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantClassifier {
    pub shape: (usize, usize, usize),
    pub scores: Vec<f64>,
}

impl Classifier for ConstantClassifier {
    fn num_classes(&self) -> usize {
        self.scores.len()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn scores(&self, _pixels: &[f64]) -> Result<Vec<f64>> {
        Ok(self.scores.clone())
    }

    fn score_and_gradient(&self, pixels: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        Ok((self.scores[class], vec![0.0; pixels.len()]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub min_accuracy: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.05,
            l2: 1e-3,
            min_accuracy: 0.95,
        }
    }
}

pub fn fit_linear(dataset: &PlantedDataset) -> Result<LinearClassifier> {
    fit_linear_with(dataset, &FitConfig::default())
}

/// Full-batch gradient descent on mean softmax cross-entropy plus L2,
/// starting from zero weights.
pub fn fit_linear_with(dataset: &PlantedDataset, cfg: &FitConfig) -> Result<LinearClassifier> {
    let k = dataset.config.num_classes;
    if k < 2 {
        return Err(Error::config("need at least two classes"));
    }
    if dataset.images.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    let first = &dataset.images[0];
    let shape = first.shape();
    let dim = first.pixels().len();
    let n = dataset.images.len() as f64;
    let mut model = LinearClassifier::new(shape, k, vec![0.0; k * dim], vec![0.0; k])?;

    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; k * dim];
        let mut gb = vec![0.0; k];
        for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
            let x = img.pixels();
            let probs = softmax(&model.scores(x)?);
            for c in 0..k {
                let err = probs[c] - if c == label { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, xi) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        let lr = cfg.learning_rate;
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= lr * (g / n + cfg.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= lr * g / n;
        }
    }

    let acc = accuracy(&model, dataset)?;
    if acc < cfg.min_accuracy {
        return Err(Error::Training(format!(
            "training accuracy {acc:.3} below {:.3} after {} epochs",
            cfg.min_accuracy, cfg.epochs
        )));
    }
    Ok(model)
}

pub fn accuracy<M: Classifier + ?Sized>(model: &M, dataset: &PlantedDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        let scores = model.scores(img.pixels())?;
        if crate::gateway::argmax(&scores) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.images.len() as f64)
}
