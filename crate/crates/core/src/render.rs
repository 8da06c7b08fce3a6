//! JET heatmaps, heatmap overlays and mask images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::RawImage;
use crate::mask_math::MaskGrid;

/// Default heatmap weight when blending onto the original image.
pub const DEFAULT_ALPHA: f64 = 0.5;

const JET_ANCHORS: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.125, [0.0, 0.0, 1.0]),
    (0.375, [0.0, 1.0, 1.0]),
    (0.625, [1.0, 1.0, 0.0]),
    (0.875, [1.0, 0.0, 0.0]),
    (1.0, [0.5, 0.0, 0.0]),
];

/// Piecewise-linear JET colormap; inputs are clamped to `[0, 1]`.
pub fn jet_colormap(v: f64) -> [f64; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    for pair in JET_ANCHORS.windows(2) {
        let (x0, c0) = pair[0];
        let (x1, c1) = pair[1];
        if v <= x1 {
            if v == x0 {
                return c0;
            }
            if v == x1 {
                return c1;
            }
            let t = (v - x0) / (x1 - x0);
            return [
                c0[0] + t * (c1[0] - c0[0]),
                c0[1] + t * (c1[1] - c0[1]),
                c0[2] + t * (c1[2] - c0[2]),
            ];
        }
    }
    JET_ANCHORS[JET_ANCHORS.len() - 1].1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Heatmap,
    Overlay,
    Mask,
}

impl std::str::FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "heatmap" => Ok(RenderMode::Heatmap),
            "overlay" => Ok(RenderMode::Overlay),
            "mask" => Ok(RenderMode::Mask),
            other => Err(Error::input(format!("unknown render mode '{other}'"))),
        }
    }
}

/// JET-colored RGB image of a saliency map.
pub fn render_heatmap(map: &MaskGrid) -> RawImage {
    let pixels = map.values().iter().flat_map(|&v| jet_colormap(v)).collect();
    RawImage::new(map.height(), map.width(), 3, pixels).expect("heatmap is well formed")
}

fn check_shape(x: &RawImage, map: &MaskGrid) -> Result<()> {
    if (x.height(), x.width()) != map.shape() {
        return Err(Error::input(format!(
            "saliency {}x{} does not match image {}x{}",
            map.height(),
            map.width(),
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// `clamp(alpha · jet(s) + (1 - alpha) · x, 0, 1)`; gray images are
/// expanded to RGB.
pub fn render_overlay(x: &RawImage, map: &MaskGrid, alpha: f64) -> Result<RawImage> {
    check_shape(x, map)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha {alpha} outside [0, 1]")));
    }
    let c = x.channels();
    let mut pixels = Vec::with_capacity(map.len() * 3);
    for (p, &s) in map.values().iter().enumerate() {
        let heat = jet_colormap(s);
        for (ch, h) in heat.iter().enumerate() {
            let orig = x.pixels()[p * c + if c == 1 { 0 } else { ch }];
            let v = if alpha == 0.0 {
                orig
            } else if alpha == 1.0 {
                *h
            } else {
                alpha * h + (1.0 - alpha) * orig
            };
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    RawImage::new(x.height(), x.width(), 3, pixels)
}

/// `s ⊙ x` with the map broadcast over channels.
pub fn render_mask_image(x: &RawImage, map: &MaskGrid) -> Result<RawImage> {
    check_shape(x, map)?;
    let c = x.channels();
    let pixels = x
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v * map.values()[i / c]).clamp(0.0, 1.0))
        .collect();
    RawImage::new(x.height(), x.width(), c, pixels)
}

pub fn render(x: &RawImage, map: &MaskGrid, mode: RenderMode, alpha: f64) -> Result<RawImage> {
    match mode {
        RenderMode::Heatmap => {
            check_shape(x, map)?;
            Ok(render_heatmap(map))
        }
        RenderMode::Overlay => render_overlay(x, map, alpha),
        RenderMode::Mask => render_mask_image(x, map),
    }
}
