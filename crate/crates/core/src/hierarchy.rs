//! Hierarchical composition of DM blocks: cumulative region suppression
//! between stages and a learned timing combination of the stage masks.

use serde::{Deserialize, Serialize};

use crate::dynamic_mask::{run_dm, DmConfig, DmResult};
use crate::error::{Error, Result};
use crate::gateway::{predict, Classifier, PreparedImage, PreprocessConfig, RawImage};
use crate::mask_math::{
    loss_and_gradient, mix_weights, normalize, optimize, weighted_mix, MaskChain, MaskGrid,
    Objective, OptimizerConfig, Projection,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdmConfig {
    /// Number of DM stages `S`.
    pub stages: usize,
    pub mix_epochs: usize,
    pub mix_learning_rate: f64,
    /// Regularization factor of the mix loss.
    pub lambda: f64,
    /// Initial value of every mix weight parameter.
    pub v_init: f64,
    /// Skip weight learning and mix with `v = v_init`.
    #[serde(default)]
    pub skip_mix: bool,
    pub preprocess: PreprocessConfig,
    pub dm: DmConfig,
}

impl HdmConfig {
    pub fn natural() -> Self {
        Self {
            stages: 3,
            mix_epochs: 400,
            mix_learning_rate: 1e-1,
            lambda: 1e-4,
            v_init: 1.0,
            skip_mix: false,
            preprocess: PreprocessConfig::imagenet(),
            dm: DmConfig::natural(),
        }
    }

    pub fn medical() -> Self {
        Self {
            stages: 1,
            dm: DmConfig::medical(),
            ..Self::natural()
        }
    }

    /// 32×32 single-channel testbed geometry with identity normalization.
    pub fn desk() -> Self {
        Self {
            stages: 3,
            preprocess: PreprocessConfig::identity((32, 32), 1),
            dm: DmConfig::desk(),
            ..Self::natural()
        }
    }

    pub fn mix_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            epochs: self.mix_epochs,
            learning_rate: self.mix_learning_rate,
            projection: Projection::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::config("at least one stage is required"));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config("lambda must be finite and >= 0"));
        }
        if self.v_init == 0.0 || !self.v_init.is_finite() {
            return Err(Error::config("v_init must be finite and nonzero"));
        }
        self.dm.validate()?;
        if !self.skip_mix {
            self.mix_optimizer().validate()?;
        }
        Ok(())
    }
}

/// One DM stage: its result and the suppressed image handed to the next stage.
#[derive(Debug, Clone)]
pub struct Stage {
    pub dm: DmResult,
    /// `X_i = (1 - N(sum_{j<=i} M_j)) ⊙ X_0`.
    pub suppressed: PreparedImage,
}

impl Stage {
    pub fn mask(&self) -> &MaskGrid {
        &self.dm.overlay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixResult {
    pub v: Vec<f64>,
    pub weights: Vec<f64>,
    pub mixed: MaskGrid,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HdmResult {
    pub class: usize,
    pub input: PreparedImage,
    pub stages: Vec<Stage>,
    pub mix: MixResult,
}

impl HdmResult {
    /// `M_h`.
    pub fn mixed(&self) -> &MaskGrid {
        &self.mix.mixed
    }

    pub fn stage_masks(&self) -> Vec<MaskGrid> {
        self.stages.iter().map(|s| s.dm.overlay.clone()).collect()
    }
}

/// `(1 - N(cumulative)) ⊙ x0`, broadcast over channels.
pub fn suppress(x0: &PreparedImage, cumulative: &MaskGrid) -> Result<PreparedImage> {
    let keep = normalize(cumulative).map(|v| 1.0 - v);
    x0.masked(&keep)
}

/// Runs `cfg.stages` DM blocks, each on the image suppressed by all
/// previous stage masks. Every stage explains `class`.
pub fn iterate_stages<M: Classifier + Sync + ?Sized>(
    model: &M,
    x0: &PreparedImage,
    class: usize,
    cfg: &HdmConfig,
) -> Result<Vec<Stage>> {
    cfg.validate()?;
    let (h, w) = x0.spatial_shape();
    let mut cumulative = MaskGrid::zeros(h, w);
    let mut stages = Vec::with_capacity(cfg.stages);
    let mut current = x0.clone();
    for _ in 0..cfg.stages {
        let dm = run_dm(model, &current, class, &cfg.dm)?;
        for (c, m) in cumulative.values_mut().iter_mut().zip(dm.overlay.values()) {
            *c += m;
        }
        let suppressed = suppress(x0, &cumulative)?;
        current = suppressed.clone();
        stages.push(Stage { dm, suppressed });
    }
    Ok(stages)
}

/// Timing combination `M_h = sum_j w_j M_j / sum_j w_j` with
/// `w_j = sum_{k>=j} v_k^2`.
pub fn mix_mask(masks: &[MaskGrid], v: &[f64]) -> Result<MaskGrid> {
    if masks.len() != v.len() {
        return Err(Error::input(format!(
            "{} masks but {} weight parameters",
            masks.len(),
            v.len()
        )));
    }
    weighted_mix(masks, &mix_weights(v))
}

/// Learns the mix parameters `v` against the original image `x0`.
pub fn optimize_mix<M: Classifier + ?Sized>(
    model: &M,
    x0: &PreparedImage,
    class: usize,
    masks: &[MaskGrid],
    cfg: &HdmConfig,
) -> Result<MixResult> {
    let s = masks.len();
    if s == 0 {
        return Err(Error::input("no stage masks to mix"));
    }
    let start = MaskGrid::filled(1, s, cfg.v_init);
    if cfg.skip_mix {
        let mixed = mix_mask(masks, start.values())?;
        return Ok(MixResult {
            weights: mix_weights(start.values()),
            v: start.into_values(),
            mixed,
            trace: Vec::new(),
        });
    }
    let objective = Objective::new(model, x0, class, cfg.dm.score)?;
    let trained = optimize(
        start,
        |v| loss_and_gradient(&objective, v, MaskChain::Mix { masks }, cfg.lambda),
        &cfg.mix_optimizer(),
    )?;
    let v = trained.grid.into_values();
    let mixed = mix_mask(masks, &v)?;
    Ok(MixResult {
        weights: mix_weights(&v),
        v,
        mixed,
        trace: trained.trace,
    })
}

/// Full pipeline on an already prepared image: predicted class, stages, mix.
pub fn explain_prepared<M: Classifier + Sync + ?Sized>(
    model: &M,
    x0: &PreparedImage,
    cfg: &HdmConfig,
) -> Result<HdmResult> {
    cfg.validate()?;
    let class = predict(model, x0)?.class;
    let stages = iterate_stages(model, x0, class, cfg)?;
    let masks: Vec<MaskGrid> = stages.iter().map(|s| s.dm.overlay.clone()).collect();
    let mix = optimize_mix(model, x0, class, &masks, cfg)?;
    Ok(HdmResult {
        class,
        input: x0.clone(),
        stages,
        mix,
    })
}

/// Preprocesses `raw` with `cfg.preprocess` and explains it.
pub fn explain<M: Classifier + Sync + ?Sized>(
    model: &M,
    raw: &RawImage,
    cfg: &HdmConfig,
) -> Result<HdmResult> {
    let x0 = cfg.preprocess.apply(raw)?;
    explain_prepared(model, &x0, cfg)
}
