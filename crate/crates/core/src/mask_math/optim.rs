use serde::{Deserialize, Serialize};

use super::{LossBreakdown, MaskGrid};
use crate::error::{Error, Result};

/// What happens to parameters after each gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// Clamp every value into `[0, 1]`.
    #[default]
    Clamp,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub projection: Projection,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be positive and finite"));
        }
        Ok(())
    }
}

/// Final parameters plus the total loss before every step and after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimized {
    pub grid: MaskGrid,
    pub trace: Vec<f64>,
}

impl Optimized {
    pub fn initial_loss(&self) -> f64 {
        self.trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Plain gradient descent: `v <- project(v - lr * grad)` for `cfg.epochs` steps.
pub fn optimize<F>(initial: MaskGrid, mut objective: F, cfg: &OptimizerConfig) -> Result<Optimized>
where
    F: FnMut(&MaskGrid) -> Result<(LossBreakdown, MaskGrid)>,
{
    cfg.validate()?;
    let mut grid = initial;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (loss, grad) = objective(&grid)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric {
                epoch,
                message: format!("loss became {}", loss.total),
            });
        }
        trace.push(loss.total);
        if epoch == cfg.epochs {
            break;
        }
        if let Some(i) = grad.values().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                epoch,
                message: format!("non-finite gradient at index {i}"),
            });
        }
        let lr = cfg.learning_rate;
        for (v, g) in grid.values_mut().iter_mut().zip(grad.values()) {
            let next = *v - lr * g;
            *v = match cfg.projection {
                Projection::Clamp => next.clamp(0.0, 1.0),
                Projection::None => next,
            };
        }
    }
    Ok(Optimized { grid, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(target: f64) -> impl FnMut(&MaskGrid) -> Result<(LossBreakdown, MaskGrid)> {
        move |g: &MaskGrid| {
            let v = g.values()[0];
            Ok((
                LossBreakdown::new((v - target).powi(2), 0.0, 0.0),
                MaskGrid::filled(1, 1, 2.0 * (v - target)),
            ))
        }
    }

    #[test]
    fn converges_on_convex_surrogate() {
        let cfg = OptimizerConfig {
            epochs: 100,
            learning_rate: 0.1,
            projection: Projection::Clamp,
        };
        let out = optimize(MaskGrid::filled(1, 1, 1.0), quadratic(0.3), &cfg).unwrap();
        assert!((out.grid.values()[0] - 0.3).abs() < 1e-3);
        assert_eq!(out.trace.len(), 101);
        assert!(out.final_loss() <= out.initial_loss());
    }

    #[test]
    fn zero_gradient_leaves_grid() {
        let cfg = OptimizerConfig {
            epochs: 10,
            learning_rate: 0.5,
            projection: Projection::Clamp,
        };
        let start = MaskGrid::new(1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        let out = optimize(
            start.clone(),
            |g| {
                Ok((
                    LossBreakdown::new(0.0, 0.0, 0.0),
                    MaskGrid::zeros(g.height(), g.width()),
                ))
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(out.grid, start);
    }

    #[test]
    fn clamp_keeps_unit_interval() {
        let cfg = OptimizerConfig {
            epochs: 5,
            learning_rate: 10.0,
            projection: Projection::Clamp,
        };
        let out = optimize(MaskGrid::filled(1, 1, 0.5), quadratic(3.0), &cfg).unwrap();
        assert_eq!(out.grid.values()[0], 1.0);
        let out = optimize(MaskGrid::filled(1, 1, 0.5), quadratic(-3.0), &cfg).unwrap();
        assert_eq!(out.grid.values()[0], 0.0);
    }

    #[test]
    fn unclamped_leaves_unit_interval() {
        let cfg = OptimizerConfig {
            epochs: 200,
            learning_rate: 0.1,
            projection: Projection::None,
        };
        let out = optimize(MaskGrid::filled(1, 1, 0.5), quadratic(3.0), &cfg).unwrap();
        assert!((out.grid.values()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_loss_reports_epoch() {
        let cfg = OptimizerConfig {
            epochs: 10,
            learning_rate: 0.1,
            projection: Projection::None,
        };
        let mut calls = 0;
        let err = optimize(
            MaskGrid::filled(1, 1, 0.5),
            |g| {
                calls += 1;
                let loss = if calls > 3 { f64::NAN } else { 1.0 };
                Ok((
                    LossBreakdown::new(loss, 0.0, 0.0),
                    MaskGrid::zeros(g.height(), g.width()),
                ))
            },
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { epoch: 3, .. }));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OptimizerConfig {
            epochs: 0,
            learning_rate: 0.1,
            projection: Projection::Clamp,
        };
        assert!(optimize(MaskGrid::zeros(1, 1), quadratic(0.0), &cfg).is_err());
    }
}
