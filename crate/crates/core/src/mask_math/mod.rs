//! Numerical core: resampling, normalization, losses, chained gradients
//! and projected gradient descent over mask grids.

mod grid;
mod loss;
mod optim;
pub(crate) mod resample;

pub use grid::MaskGrid;
pub(crate) use loss::weighted_mix;
pub use loss::{
    consistency_loss, loss_and_gradient, loss_value, mask_regularizer, mix_weights, LossBreakdown,
    MaskChain, Objective,
};
pub use optim::{optimize, Optimized, OptimizerConfig, Projection};
pub use resample::{upsample, upsample_adjoint};

/// Min-max rescaling to `[0, 1]`. A constant grid maps to all zeros.
pub fn normalize(m: &MaskGrid) -> MaskGrid {
    let (lo, hi) = (m.min(), m.max());
    if hi <= lo {
        return MaskGrid::zeros(m.height(), m.width());
    }
    let span = hi - lo;
    m.map(|v| (v - lo) / span)
}

/// `ceil(fraction * n)` clamped to `1..=n`.
pub(crate) fn keep_count(n: usize, fraction: f64) -> usize {
    // absorb representation error such as 0.3 * 10 = 3.0000000000000004
    let raw = (fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Values sorted from largest to smallest.
pub(crate) fn descending(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
}

/// Nearest-rank threshold: the `ceil(fraction * n)`-th largest value, so at
/// least that many entries are `>=` the result.
pub fn top_fraction_threshold(values: &[f64], fraction: f64) -> f64 {
    let sorted = descending(values);
    sorted[keep_count(sorted.len(), fraction) - 1]
}
