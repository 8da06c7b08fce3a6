use serde::{Deserialize, Serialize};

use super::{upsample, upsample_adjoint, MaskGrid};
use crate::error::{Error, Result};
use crate::gateway::{self, Classifier, PreparedImage, ScoreKind};

/// Terms of `L = J + factor * L_R` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub consistency: f64,
    pub regularizer: f64,
    pub factor: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(consistency: f64, regularizer: f64, factor: f64) -> Self {
        Self {
            consistency,
            regularizer,
            factor,
            total: consistency + factor * regularizer,
        }
    }
}

/// A classifier, the image being explained and the class whose score must
/// stay consistent under masking. The unmasked reference score is cached.
pub struct Objective<'a, M: ?Sized> {
    model: &'a M,
    image: &'a PreparedImage,
    class: usize,
    kind: ScoreKind,
    reference: f64,
}

impl<'a, M: Classifier + ?Sized> Objective<'a, M> {
    pub fn new(
        model: &'a M,
        image: &'a PreparedImage,
        class: usize,
        kind: ScoreKind,
    ) -> Result<Self> {
        let reference = gateway::class_score(model, image, class, kind)?;
        Ok(Self {
            model,
            image,
            class,
            kind,
            reference,
        })
    }

    pub fn image(&self) -> &PreparedImage {
        self.image
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    /// `f_p(x)` for the unmasked image.
    pub fn reference_score(&self) -> f64 {
        self.reference
    }

    /// `J(m, x) = (f_p(m ⊙ x) - f_p(x))^2` for a full-resolution mask.
    pub fn consistency(&self, mask: &MaskGrid) -> Result<f64> {
        let masked = self.image.masked(mask)?;
        let score = gateway::score_raw(self.model, masked.pixels(), self.class, self.kind)?;
        let diff = score - self.reference;
        Ok(diff * diff)
    }

    /// `J` together with `dJ/dm` for a full-resolution mask.
    fn consistency_with_grad(&self, mask: &MaskGrid) -> Result<(f64, MaskGrid)> {
        let masked = self.image.masked(mask)?;
        let (score, grad) =
            gateway::score_and_gradient_raw(self.model, masked.pixels(), self.class, self.kind)?;
        let diff = score - self.reference;
        let c = self.image.channels();
        // product rule through m ⊙ x, summed over the channels the mask spans
        let values = grad
            .chunks(c)
            .zip(self.image.pixels().chunks(c))
            .map(|(g, x)| 2.0 * diff * g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let (h, w) = self.image.spatial_shape();
        Ok((diff * diff, MaskGrid::from_parts_unchecked(h, w, values)))
    }
}

/// `J(m, x)` with the mask broadcast over all channels of `x`.
pub fn consistency_loss<M: Classifier + ?Sized>(
    model: &M,
    x: &PreparedImage,
    m: &MaskGrid,
    p: usize,
    kind: ScoreKind,
) -> Result<f64> {
    Objective::new(model, x, p, kind)?.consistency(m)
}

/// `L_R(m)`: mean absolute mask value.
pub fn mask_regularizer(m: &MaskGrid) -> f64 {
    m.values().iter().map(|v| v.abs()).sum::<f64>() / m.len() as f64
}

fn regularizer_grad(m: &MaskGrid) -> MaskGrid {
    let n = m.len() as f64;
    m.map(|v| {
        if v > 0.0 {
            1.0 / n
        } else if v < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    })
}

/// How the trainable grid reaches the full-resolution mask.
#[derive(Debug, Clone, Copy)]
pub enum MaskChain<'a> {
    /// `up(trainable, H, W)`; regularized at full resolution.
    Direct,
    /// `up(trainable ⊙ up(predecessor, h, w), H, W)` with `(h, w)` the
    /// trainable shape and the predecessor frozen. The regularizer applies
    /// to `up(trainable, H, W)`.
    Guided { predecessor: &'a MaskGrid },
    /// Trainable is a `1 × S` weight vector `v`; the mask is the timing mix
    /// of the frozen `masks` with `w_j = sum_{k >= j} v_k^2`.
    Mix { masks: &'a [MaskGrid] },
}

/// Timing-combination weights `w_j = sum_{k=j}^{S} v_k^2`.
pub fn mix_weights(v: &[f64]) -> Vec<f64> {
    let mut weights = vec![0.0; v.len()];
    let mut acc = 0.0;
    for (j, vk) in v.iter().enumerate().rev() {
        acc += vk * vk;
        weights[j] = acc;
    }
    weights
}

/// `sum_j w_j M_j / sum_j w_j`. A single mask is returned unchanged.
pub(crate) fn weighted_mix(masks: &[MaskGrid], weights: &[f64]) -> Result<MaskGrid> {
    let first = masks
        .first()
        .ok_or_else(|| Error::config("mix needs at least one mask"))?;
    for m in masks {
        m.expect_shape(first.shape())?;
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::input("mix weights are all zero"));
    }
    if masks.len() == 1 {
        return Ok(first.clone());
    }
    let mut acc = vec![0.0; first.len()];
    for (m, &w) in masks.iter().zip(weights) {
        for (a, &v) in acc.iter_mut().zip(m.values()) {
            *a += w * v;
        }
    }
    let (h, w) = first.shape();
    Ok(MaskGrid::from_parts_unchecked(
        h,
        w,
        acc.into_iter().map(|a| a / total).collect(),
    ))
}

/// Loss and its gradient with respect to `trainable` for one of the three
/// mask compositions.
pub fn loss_and_gradient<M: Classifier + ?Sized>(
    objective: &Objective<'_, M>,
    trainable: &MaskGrid,
    chain: MaskChain<'_>,
    factor: f64,
) -> Result<(LossBreakdown, MaskGrid)> {
    let (h, w) = objective.image().spatial_shape();
    match chain {
        MaskChain::Direct => {
            if trainable.height() > h || trainable.width() > w {
                return Err(Error::config("trainable grid larger than the image"));
            }
            let effective = upsample(trainable, h, w)?;
            let (j, dj) = objective.consistency_with_grad(&effective)?;
            let reg = mask_regularizer(&effective);
            let dreg = regularizer_grad(&effective);
            let full = dj.zip_map(&dreg, |a, b| a + factor * b)?;
            let grad = upsample_adjoint(&full, trainable.shape())?;
            Ok((LossBreakdown::new(j, reg, factor), grad))
        }
        MaskChain::Guided { predecessor } => {
            let (th, tw) = trainable.shape();
            if th > h || tw > w || predecessor.height() > th || predecessor.width() > tw {
                return Err(Error::config(format!(
                    "guided chain needs predecessor <= trainable <= image, got {}x{} / {th}x{tw} / {h}x{w}",
                    predecessor.height(),
                    predecessor.width()
                )));
            }
            let guide = upsample(predecessor, th, tw)?;
            let product = trainable.zip_map(&guide, |a, b| a * b)?;
            let effective = upsample(&product, h, w)?;
            let (j, dj) = objective.consistency_with_grad(&effective)?;
            let reg_mask = upsample(trainable, h, w)?;
            let reg = mask_regularizer(&reg_mask);

            let dj_product = upsample_adjoint(&dj, (th, tw))?;
            let dj_trainable = dj_product.zip_map(&guide, |a, b| a * b)?;
            let dreg = upsample_adjoint(&regularizer_grad(&reg_mask), (th, tw))?;
            let grad = dj_trainable.zip_map(&dreg, |a, b| a + factor * b)?;
            Ok((LossBreakdown::new(j, reg, factor), grad))
        }
        MaskChain::Mix { masks } => {
            let s = masks.len();
            if s == 0 || trainable.shape() != (1, s) {
                return Err(Error::config(format!(
                    "mix chain needs a 1x{s} weight vector, got {}x{}",
                    trainable.height(),
                    trainable.width()
                )));
            }
            for m in masks {
                m.expect_shape((h, w))?;
            }
            let v = trainable.values();
            let weights = mix_weights(v);
            let mixed = weighted_mix(masks, &weights)?;
            let (j, dj) = objective.consistency_with_grad(&mixed)?;
            let reg = mask_regularizer(&mixed);
            let upstream = dj.zip_map(&regularizer_grad(&mixed), |a, b| a + factor * b)?;

            // dM/dw_j = sum_i w_i (M_j - M_i) / W^2, exactly zero for identical masks
            let total: f64 = weights.iter().sum();
            let dweights: Vec<f64> = (0..s)
                .map(|jx| {
                    let mut acc = 0.0;
                    for (i, (mi, &wi)) in masks.iter().zip(&weights).enumerate() {
                        if i == jx || wi == 0.0 {
                            continue;
                        }
                        let diff: f64 = upstream
                            .values()
                            .iter()
                            .zip(masks[jx].values().iter().zip(mi.values()))
                            .map(|(g, (a, b))| g * (a - b))
                            .sum();
                        acc += wi * diff;
                    }
                    acc / (total * total)
                })
                .collect();
            // dw_j/dv_k = 2 v_k for k >= j
            let mut prefix = 0.0;
            let grad = v
                .iter()
                .zip(&dweights)
                .map(|(vk, dw)| {
                    prefix += dw;
                    2.0 * vk * prefix
                })
                .collect();
            Ok((
                LossBreakdown::new(j, reg, factor),
                MaskGrid::from_parts_unchecked(1, s, grad),
            ))
        }
    }
}

/// Loss only, evaluated through the same composition as
/// [`loss_and_gradient`] without the backward pass.
pub fn loss_value<M: Classifier + ?Sized>(
    objective: &Objective<'_, M>,
    trainable: &MaskGrid,
    chain: MaskChain<'_>,
    factor: f64,
) -> Result<LossBreakdown> {
    let (h, w) = objective.image().spatial_shape();
    let (effective, reg_mask) = match chain {
        MaskChain::Direct => {
            let e = upsample(trainable, h, w)?;
            (e.clone(), e)
        }
        MaskChain::Guided { predecessor } => {
            let guide = upsample(predecessor, trainable.height(), trainable.width())?;
            let product = trainable.zip_map(&guide, |a, b| a * b)?;
            (upsample(&product, h, w)?, upsample(trainable, h, w)?)
        }
        MaskChain::Mix { masks } => {
            let e = weighted_mix(masks, &mix_weights(trainable.values()))?;
            (e.clone(), e)
        }
    };
    let j = objective.consistency(&effective)?;
    Ok(LossBreakdown::new(j, mask_regularizer(&reg_mask), factor))
}
