#![allow(dead_code)]

use hdm_core::testbed::{
    fit_linear, generate, LinearClassifier, PatchMode, PlantedDataset, TestbedConfig,
};
use hdm_core::{MaskGrid, PreparedImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Bed {
    pub data: PlantedDataset,
    pub model: LinearClassifier,
    pub images: Vec<PreparedImage>,
}

impl Bed {
    pub fn fit(cfg: TestbedConfig) -> Bed {
        let data = generate(&cfg).expect("testbed generates");
        let model = fit_linear(&data).expect("testbed model fits");
        let images = data.prepared().expect("testbed images prepare");
        Bed {
            data,
            model,
            images,
        }
    }

    /// 32×32 planted testbed with four classes.
    pub fn desk(mode: PatchMode) -> Bed {
        Bed::fit(TestbedConfig::desk(5, 4, mode))
    }

    /// 16×16 variant with 4×4 patches, for cheap gradient checks.
    pub fn small() -> Bed {
        let mut cfg = TestbedConfig::desk(11, 3, PatchMode::Single);
        cfg.size = (16, 16);
        cfg.patch_size = 4;
        cfg.slots = vec![(1, 1), (11, 11), (1, 11)];
        cfg.images_per_class = 10;
        Bed::fit(cfg)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> MaskGrid {
    MaskGrid::new(h, w, (0..h * w).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central finite differences of `f` at `at`.
pub fn numeric_gradient(at: &MaskGrid, step: f64, f: impl Fn(&MaskGrid) -> f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut plus = at.clone();
            plus.values_mut()[i] += step;
            let mut minus = at.clone();
            minus.values_mut()[i] -= step;
            (f(&plus) - f(&minus)) / (2.0 * step)
        })
        .collect()
}

/// `max |a - n| / max |n|`, the error measure used by every gradient check.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale
}

/// Intersection over union of the supports (`> 0`) of two maps.
pub fn support_iou(a: &MaskGrid, b: &MaskGrid) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (p, q) = (*x > 0.0, *y > 0.0);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Half-pixel-center bilinear resize coded directly from the four-tap formula.
pub fn oracle_upsample(m: &MaskGrid, h: usize, w: usize) -> MaskGrid {
    let (sh, sw) = m.shape();
    let coord = |i: usize, src: usize, dst: usize| {
        ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = coord(r, sh, h);
        let (y0, dy) = (y.floor() as usize, y - y.floor());
        let y1 = (y0 + 1).min(sh - 1);
        for c in 0..w {
            let x = coord(c, sw, w);
            let (x0, dx) = (x.floor() as usize, x - x.floor());
            let x1 = (x0 + 1).min(sw - 1);
            out.push(
                m.get(y0, x0) * (1.0 - dy) * (1.0 - dx)
                    + m.get(y0, x1) * (1.0 - dy) * dx
                    + m.get(y1, x0) * dy * (1.0 - dx)
                    + m.get(y1, x1) * dy * dx,
            );
        }
    }
    MaskGrid::new(h, w, out).unwrap()
}
