//! One DM block: benchmark mask vectors, guided auxiliary cascades, stacking
//! and thresholding into the overlay mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Classifier, PreparedImage, ScoreKind};
use crate::mask_math::{
    descending, keep_count, loss_and_gradient, normalize, optimize, upsample, MaskChain, MaskGrid,
    Objective, Optimized, OptimizerConfig, Projection,
};

/// How trained cascade grids are combined into the stacked mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackMode {
    /// Sum of each raw trained grid upsampled to the image size.
    #[default]
    Raw,
    /// Sum of cumulative products `c^k ⊙ up(c^{k-1}) ⊙ ...` along each cascade.
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmConfig {
    /// Benchmark grid sizes `(a_i, b_i)`; pairwise distinct.
    pub benchmark_sizes: Vec<(usize, usize)>,
    /// Cascade growth factors `t_j >= 2`.
    pub scale_factors: Vec<usize>,
    /// Initial value of every trainable grid.
    pub tau: f64,
    /// Regularization factor shared by all grids.
    pub eta: f64,
    /// Optional per-level overrides: `eta_levels[k]` replaces `eta` at cascade level `k`.
    #[serde(default)]
    pub eta_levels: Vec<f64>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction `q` of pixels kept by the overlay threshold.
    pub gamma_percentile: f64,
    #[serde(default)]
    pub projection: Projection,
    #[serde(default)]
    pub stack_mode: StackMode,
    #[serde(default)]
    pub score: ScoreKind,
}

impl DmConfig {
    /// Natural-image profile: sizes 6..=11, t in {2, 3, 5}, top 25%.
    pub fn natural() -> Self {
        Self {
            benchmark_sizes: (1..=6).map(|i| (i + 5, i + 5)).collect(),
            scale_factors: vec![2, 3, 5],
            tau: 0.5,
            eta: 100.0,
            eta_levels: Vec::new(),
            epochs: 800,
            learning_rate: 1e-2,
            gamma_percentile: 0.25,
            projection: Projection::Clamp,
            stack_mode: StackMode::Raw,
            score: ScoreKind::Logit,
        }
    }

    /// Medical profile: sizes 6..=9, t in {2, 3}, top 30%.
    pub fn medical() -> Self {
        Self {
            benchmark_sizes: (1..=4).map(|i| (i + 5, i + 5)).collect(),
            scale_factors: vec![2, 3],
            gamma_percentile: 0.30,
            ..Self::natural()
        }
    }

    /// Testbed scale: sizes {4, 5, 6}, t = 2, 200 epochs.
    ///
    /// `eta` and the learning rate were tuned on the planted-patch testbed;
    /// much weaker regularization leaves the masks saturated at 1.
    pub fn desk() -> Self {
        Self {
            benchmark_sizes: vec![(4, 4), (5, 5), (6, 6)],
            scale_factors: vec![2],
            tau: 0.5,
            eta: 30.0,
            eta_levels: Vec::new(),
            epochs: 200,
            learning_rate: 4e-2,
            gamma_percentile: 0.25,
            projection: Projection::Clamp,
            stack_mode: StackMode::Raw,
            score: ScoreKind::Logit,
        }
    }

    pub fn eta_for_level(&self, level: usize) -> f64 {
        self.eta_levels.get(level).copied().unwrap_or(self.eta)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            projection: self.projection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.benchmark_sizes.is_empty() {
            return Err(Error::config("at least one benchmark size is required"));
        }
        for (i, a) in self.benchmark_sizes.iter().enumerate() {
            if a.0 == 0 || a.1 == 0 {
                return Err(Error::config("benchmark sizes must be positive"));
            }
            if self.benchmark_sizes[i + 1..].contains(a) {
                return Err(Error::config(format!(
                    "benchmark size {}x{} listed twice",
                    a.0, a.1
                )));
            }
        }
        if self.scale_factors.is_empty() {
            return Err(Error::config("at least one scale factor is required"));
        }
        if let Some(t) = self.scale_factors.iter().find(|&&t| t < 2) {
            return Err(Error::config(format!("scale factor {t} must be >= 2")));
        }
        if !(self.gamma_percentile > 0.0 && self.gamma_percentile < 1.0) {
            return Err(Error::config("gamma_percentile must lie in (0, 1)"));
        }
        if !self.tau.is_finite() {
            return Err(Error::config("tau must be finite"));
        }
        if std::iter::once(&self.eta)
            .chain(&self.eta_levels)
            .any(|e| *e < 0.0 || !e.is_finite())
        {
            return Err(Error::config(
                "regularization factors must be finite and >= 0",
            ));
        }
        self.optimizer().validate()
    }
}

/// `K = min(floor(ln(H/a) / ln t), floor(ln(W/b) / ln t))`, evaluated in
/// integers as the largest `k` with `t^k a <= H` and `t^k b <= W`.
pub fn cascade_depth(height: usize, width: usize, a: usize, b: usize, t: usize) -> Result<usize> {
    if a == 0 || b == 0 || a > height || b > width {
        return Err(Error::config(format!(
            "benchmark {a}x{b} does not fit a {height}x{width} image"
        )));
    }
    if t < 2 {
        return Err(Error::config(format!("scale factor {t} must be >= 2")));
    }
    let mut k = 0;
    let (mut ha, mut wb) = (a, b);
    while ha * t <= height && wb * t <= width {
        ha *= t;
        wb *= t;
        k += 1;
    }
    Ok(k)
}

/// Shape of cascade level `k`: `(t^k a, t^k b)`.
pub fn cascade_shape(a: usize, b: usize, t: usize, level: usize) -> (usize, usize) {
    let f = t.pow(level as u32);
    (f * a, f * b)
}

/// One trained grid `c^k_j(i)` with its indices and loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeEntry {
    pub benchmark: usize,
    pub scale: usize,
    pub level: usize,
    pub grid: MaskGrid,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub class: usize,
    /// `M_b`.
    pub overlay: MaskGrid,
    /// `M_c`.
    pub stacked: MaskGrid,
    pub gamma: f64,
    /// Every trained grid, ordered by benchmark, then scale, then level.
    pub cascade: Vec<CascadeEntry>,
}

/// Trains benchmark grid `d_i` of shape `size` from `tau`.
pub fn train_benchmark<M: Classifier + ?Sized>(
    objective: &Objective<'_, M>,
    size: (usize, usize),
    cfg: &DmConfig,
) -> Result<Optimized> {
    let (h, w) = objective.image().spatial_shape();
    cascade_depth(h, w, size.0, size.1, 2)?;
    let factor = cfg.eta_for_level(0);
    optimize(
        MaskGrid::filled(size.0, size.1, cfg.tau),
        |g| loss_and_gradient(objective, g, MaskChain::Direct, factor),
        &cfg.optimizer(),
    )
}

/// Grows the guided cascade on a trained benchmark grid for factor `t`.
///
/// Level 0 is the benchmark itself. Each later level starts from `tau` and
/// is trained with its predecessor frozen as multiplicative guidance.
pub fn train_cascade<M: Classifier + ?Sized>(
    objective: &Objective<'_, M>,
    benchmark: &Optimized,
    t: usize,
    cfg: &DmConfig,
) -> Result<Vec<Optimized>> {
    let (h, w) = objective.image().spatial_shape();
    let (a, b) = benchmark.grid.shape();
    let depth = cascade_depth(h, w, a, b, t)?;
    let mut levels = Vec::with_capacity(depth + 1);
    levels.push(benchmark.clone());
    for k in 1..=depth {
        let (th, tw) = cascade_shape(a, b, t, k);
        let factor = cfg.eta_for_level(k);
        let predecessor = &levels[k - 1].grid;
        let trained = optimize(
            MaskGrid::filled(th, tw, cfg.tau),
            |g| loss_and_gradient(objective, g, MaskChain::Guided { predecessor }, factor),
            &cfg.optimizer(),
        )?;
        levels.push(trained);
    }
    Ok(levels)
}

/// `M_c`: sum over every cascade entry, each upsampled to `height × width`.
///
/// In [`StackMode::Product`] entries must arrive grouped per cascade in
/// level order.
pub fn stack_masks(
    entries: &[CascadeEntry],
    height: usize,
    width: usize,
    mode: StackMode,
) -> Result<MaskGrid> {
    if entries.is_empty() {
        return Err(Error::input("nothing to stack"));
    }
    let mut acc = MaskGrid::zeros(height, width);
    let mut chain: Option<(usize, usize, usize, MaskGrid)> = None;
    for e in entries {
        let term = match mode {
            StackMode::Raw => e.grid.clone(),
            StackMode::Product => {
                let cumulative = match (&chain, e.level) {
                    (_, 0) => e.grid.clone(),
                    (Some((bi, sj, lk, prev)), k)
                        if *bi == e.benchmark && *sj == e.scale && *lk + 1 == k =>
                    {
                        let guide = upsample(prev, e.grid.height(), e.grid.width())?;
                        e.grid.zip_map(&guide, |a, b| a * b)?
                    }
                    _ => {
                        return Err(Error::input(format!(
                            "cascade entry ({}, {}, {}) is out of order",
                            e.benchmark, e.scale, e.level
                        )))
                    }
                };
                chain = Some((e.benchmark, e.scale, e.level, cumulative.clone()));
                cumulative
            }
        };
        let up = upsample(&term, height, width)?;
        for (a, v) in acc.values_mut().iter_mut().zip(up.values()) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Threshold `γ` for the overlay: the value just below the top
/// `ceil(q·N)` entries, so that exactly those entries end up positive
/// (ties aside). With every entry kept, `γ` is the minimum.
pub fn overlay_gamma(stacked: &MaskGrid, q: f64) -> f64 {
    let sorted = descending(stacked.values());
    let keep = keep_count(sorted.len(), q);
    if keep >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[keep]
    }
}

/// `M_b = N((M_c - γ) · [M_c >= γ])`.
pub fn threshold_overlay(stacked: &MaskGrid, q: f64) -> MaskGrid {
    let gamma = overlay_gamma(stacked, q);
    normalize(&stacked.map(|v| if v >= gamma { v - gamma } else { 0.0 }))
}

/// Runs one DM block on `x` for target `class`.
pub fn run_dm<M: Classifier + Sync + ?Sized>(
    model: &M,
    x: &PreparedImage,
    class: usize,
    cfg: &DmConfig,
) -> Result<DmResult> {
    cfg.validate()?;
    let (h, w) = x.spatial_shape();
    for &(a, b) in &cfg.benchmark_sizes {
        cascade_depth(h, w, a, b, 2)?;
    }
    let objective = Objective::new(model, x, class, cfg.score)?;

    let per_benchmark: Vec<Vec<CascadeEntry>> = cfg
        .benchmark_sizes
        .par_iter()
        .enumerate()
        .map(|(i, &size)| -> Result<Vec<CascadeEntry>> {
            let benchmark = train_benchmark(&objective, size, cfg)?;
            let mut entries = Vec::new();
            for (j, &t) in cfg.scale_factors.iter().enumerate() {
                let levels = train_cascade(&objective, &benchmark, t, cfg)?;
                entries.extend(levels.into_iter().enumerate().map(|(k, o)| CascadeEntry {
                    benchmark: i,
                    scale: j,
                    level: k,
                    grid: o.grid,
                    trace: o.trace,
                }));
            }
            Ok(entries)
        })
        .collect::<Result<_>>()?;
    let cascade: Vec<CascadeEntry> = per_benchmark.into_iter().flatten().collect();

    let stacked = stack_masks(&cascade, h, w, cfg.stack_mode)?;
    let gamma = overlay_gamma(&stacked, cfg.gamma_percentile);
    let overlay = threshold_overlay(&stacked, cfg.gamma_percentile);
    Ok(DmResult {
        class,
        overlay,
        stacked,
        gamma,
        cascade,
    })
}

/// Convenience for [`run_dm`] targeting the predicted class of `x`.
pub fn run_dm_predicted<M: Classifier + Sync + ?Sized>(
    model: &M,
    x: &PreparedImage,
    cfg: &DmConfig,
) -> Result<DmResult> {
    let class = crate::gateway::predict(model, x)?.class;
    run_dm(model, x, class, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_table() {
        assert_eq!(cascade_depth(224, 224, 6, 6, 2).unwrap(), 5);
        assert_eq!(cascade_depth(224, 224, 6, 6, 3).unwrap(), 3);
        assert_eq!(cascade_depth(224, 224, 224, 224, 5).unwrap(), 0);
        assert_eq!(cascade_depth(32, 32, 4, 4, 2).unwrap(), 3);
        assert_eq!(cascade_depth(32, 16, 4, 4, 2).unwrap(), 2);
        assert!(cascade_depth(8, 8, 9, 1, 2).is_err());
    }

    #[test]
    fn depth_matches_log_formula() {
        for h in [7usize, 16, 31, 32, 100, 224] {
            for a in 1..=h.min(12) {
                for t in [2usize, 3, 5] {
                    let float = ((h as f64).ln() - (a as f64).ln()) / (t as f64).ln();
                    // skip exact powers where the float floor sits on a rounding edge
                    if (float - float.round()).abs() < 1e-9 {
                        continue;
                    }
                    assert_eq!(
                        cascade_depth(h, h, a, a, t).unwrap(),
                        float.floor() as usize
                    );
                }
            }
        }
    }

    #[test]
    fn threshold_golden() {
        let mc = MaskGrid::new(1, 4, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(overlay_gamma(&mc, 0.25), 2.0);
        assert_eq!(threshold_overlay(&mc, 0.25).values(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(threshold_overlay(&mc, 0.5).values(), &[0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn threshold_keep_all_is_normalize() {
        let mc = MaskGrid::new(2, 2, vec![0.3, 1.2, -0.4, 2.0]).unwrap();
        assert_eq!(threshold_overlay(&mc, 1.0), normalize(&mc));
    }

    #[test]
    fn threshold_constant_is_zero() {
        let mc = MaskGrid::filled(3, 3, 4.0);
        assert!(threshold_overlay(&mc, 0.25)
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn stack_linearity() {
        let e = |v: f64, b: usize| CascadeEntry {
            benchmark: b,
            scale: 0,
            level: 0,
            grid: MaskGrid::filled(2, 2, v),
            trace: vec![],
        };
        let s = stack_masks(&[e(0.2, 0), e(0.3, 1)], 4, 4, StackMode::Raw).unwrap();
        assert!(s.values().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn stack_single_full_resolution() {
        let grid = MaskGrid::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let e = CascadeEntry {
            benchmark: 0,
            scale: 0,
            level: 0,
            grid: grid.clone(),
            trace: vec![],
        };
        assert_eq!(stack_masks(&[e], 2, 2, StackMode::Raw).unwrap(), grid);
    }

    #[test]
    fn product_stack_requires_order() {
        let e = |level| CascadeEntry {
            benchmark: 0,
            scale: 0,
            level,
            grid: MaskGrid::filled(2, 2, 0.5),
            trace: vec![],
        };
        assert!(stack_masks(&[e(0), e(2)], 4, 4, StackMode::Product).is_err());
        let s = stack_masks(&[e(0), e(1)], 2, 2, StackMode::Product).unwrap();
        assert!(s.values().iter().all(|v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn config_validation() {
        let mut cfg = DmConfig::desk();
        assert!(cfg.validate().is_ok());
        cfg.benchmark_sizes.push((4, 4));
        assert!(cfg.validate().is_err());
        let mut cfg = DmConfig::desk();
        cfg.scale_factors = vec![1];
        assert!(cfg.validate().is_err());
        let mut cfg = DmConfig::desk();
        cfg.gamma_percentile = 1.0;
        assert!(cfg.validate().is_err());
        assert!(DmConfig::natural().validate().is_ok());
        assert!(DmConfig::medical().validate().is_ok());
    }
}
