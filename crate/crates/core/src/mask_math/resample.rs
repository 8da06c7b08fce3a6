//! Half-pixel-center bilinear resampling and its exact transpose.
//!
//! Output pixel `i` of an axis resized from `src` to `dst` samples source
//! coordinate `(i + 0.5) * src / dst - 0.5`, clamped to `[0, src - 1]`.
//! The same taps drive the forward map and the adjoint, so the two are
//! transposes of one another up to rounding.

use super::MaskGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Resizes an interleaved `h0 × w0 × channels` buffer to `h × w × channels`.
pub(crate) fn resize_hwc(
    src: &[f64],
    (h0, w0): (usize, usize),
    channels: usize,
    (h, w): (usize, usize),
) -> Vec<f64> {
    debug_assert_eq!(src.len(), h0 * w0 * channels);
    let cols = axis_taps(w0, w);
    let rows = axis_taps(h0, h);

    let mut tmp = vec![0.0; h0 * w * channels];
    for y in 0..h0 {
        let src_row = &src[y * w0 * channels..(y + 1) * w0 * channels];
        let dst_row = &mut tmp[y * w * channels..(y + 1) * w * channels];
        for (x, tap) in cols.iter().enumerate() {
            for c in 0..channels {
                let a = src_row[tap.lo * channels + c];
                let b = src_row[tap.hi * channels + c];
                dst_row[x * channels + c] = a + tap.frac * (b - a);
            }
        }
    }

    let stride = w * channels;
    let mut out = vec![0.0; h * stride];
    for (y, tap) in rows.iter().enumerate() {
        let a_row = &tmp[tap.lo * stride..(tap.lo + 1) * stride];
        let b_row = &tmp[tap.hi * stride..(tap.hi + 1) * stride];
        let dst_row = &mut out[y * stride..(y + 1) * stride];
        for ((d, &a), &b) in dst_row.iter_mut().zip(a_row).zip(b_row) {
            *d = a + tap.frac * (b - a);
        }
    }
    out
}

/// Transpose of [`resize_hwc`] for the same shapes.
pub(crate) fn resize_hwc_adjoint(
    grad: &[f64],
    (h0, w0): (usize, usize),
    channels: usize,
    (h, w): (usize, usize),
) -> Vec<f64> {
    debug_assert_eq!(grad.len(), h * w * channels);
    let cols = axis_taps(w0, w);
    let rows = axis_taps(h0, h);

    let stride = w * channels;
    let mut tmp = vec![0.0; h0 * stride];
    for (y, tap) in rows.iter().enumerate() {
        let g_row = &grad[y * stride..(y + 1) * stride];
        for (i, &g) in g_row.iter().enumerate() {
            tmp[tap.lo * stride + i] += (1.0 - tap.frac) * g;
            tmp[tap.hi * stride + i] += tap.frac * g;
        }
    }

    let mut out = vec![0.0; h0 * w0 * channels];
    for y in 0..h0 {
        let t_row = &tmp[y * stride..(y + 1) * stride];
        let o_row = &mut out[y * w0 * channels..(y + 1) * w0 * channels];
        for (x, tap) in cols.iter().enumerate() {
            for c in 0..channels {
                let g = t_row[x * channels + c];
                o_row[tap.lo * channels + c] += (1.0 - tap.frac) * g;
                o_row[tap.hi * channels + c] += tap.frac * g;
            }
        }
    }
    out
}

/// Bilinear upsampling `g(m, h, w)`. Downsampling is rejected.
pub fn upsample(m: &MaskGrid, height: usize, width: usize) -> Result<MaskGrid> {
    if height < m.height() || width < m.width() {
        return Err(Error::input(format!(
            "cannot upsample {}x{} to smaller {height}x{width}",
            m.height(),
            m.width()
        )));
    }
    if m.shape() == (height, width) {
        return Ok(m.clone());
    }
    let values = resize_hwc(m.values(), m.shape(), 1, (height, width));
    Ok(MaskGrid::from_parts_unchecked(height, width, values))
}

/// Adjoint of [`upsample`]: maps a gradient on the `h × w` output back onto
/// the `h0 × w0` source grid.
pub fn upsample_adjoint(grad_out: &MaskGrid, src_shape: (usize, usize)) -> Result<MaskGrid> {
    let (h0, w0) = src_shape;
    if h0 == 0 || w0 == 0 || h0 > grad_out.height() || w0 > grad_out.width() {
        return Err(Error::input(format!(
            "source {h0}x{w0} is not a valid upsample origin for {}x{}",
            grad_out.height(),
            grad_out.width()
        )));
    }
    if grad_out.shape() == src_shape {
        return Ok(grad_out.clone());
    }
    let values = resize_hwc_adjoint(grad_out.values(), src_shape, 1, grad_out.shape());
    Ok(MaskGrid::from_parts_unchecked(h0, w0, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct four-tap evaluation, written independently of the separable path.
    fn oracle(src: &MaskGrid, h: usize, w: usize) -> Vec<f64> {
        let (h0, w0) = src.shape();
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let sy = ((y as f64 + 0.5) * h0 as f64 / h as f64 - 0.5).max(0.0);
                let sx = ((x as f64 + 0.5) * w0 as f64 / w as f64 - 0.5).max(0.0);
                let y0 = (sy.floor() as usize).min(h0 - 1);
                let x0 = (sx.floor() as usize).min(w0 - 1);
                let y1 = (y0 + 1).min(h0 - 1);
                let x1 = (x0 + 1).min(w0 - 1);
                let fy = (sy - y0 as f64).min(1.0);
                let fx = (sx - x0 as f64).min(1.0);
                let fy = if y0 == h0 - 1 { 0.0 } else { fy };
                let fx = if x0 == w0 - 1 { 0.0 } else { fx };
                out.push(
                    src.get(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + src.get(y0, x1) * (1.0 - fy) * fx
                        + src.get(y1, x0) * fy * (1.0 - fx)
                        + src.get(y1, x1) * fy * fx,
                );
            }
        }
        out
    }

    #[test]
    fn one_by_one_is_constant() {
        let m = MaskGrid::filled(1, 1, 0.37);
        let up = upsample(&m, 5, 3).unwrap();
        assert!(up.values().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn same_shape_is_identity() {
        let m = MaskGrid::new(2, 3, vec![0.1, 0.5, 0.2, 0.9, 0.0, 0.3]).unwrap();
        assert_eq!(upsample(&m, 2, 3).unwrap(), m);
    }

    #[test]
    fn two_by_two_matches_oracle() {
        let m = MaskGrid::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = upsample(&m, 4, 4).unwrap();
        let expected = oracle(&m, 4, 4);
        for (a, b) in up.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // every row is [0, 0.25, 0.75, 1]
        assert_eq!(&up.values()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn odd_ratio_matches_oracle() {
        let m = MaskGrid::new(3, 2, vec![0.3, 0.8, 0.1, 0.4, 0.9, 0.2]).unwrap();
        let up = upsample(&m, 7, 9).unwrap();
        for (a, b) in up.values().iter().zip(&oracle(&m, 7, 9)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_downsampling() {
        let m = MaskGrid::zeros(4, 4);
        assert!(matches!(upsample(&m, 3, 4), Err(Error::Input(_))));
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let g = MaskGrid::zeros(7, 9);
        let a = upsample_adjoint(&g, (3, 3)).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_from_single_cell_sums() {
        let g = MaskGrid::new(2, 3, vec![0.5, -1.0, 2.0, 0.25, 3.0, 1.5]).unwrap();
        let a = upsample_adjoint(&g, (1, 1)).unwrap();
        assert!((a.values()[0] - g.sum()).abs() < 1e-12);
    }

    #[test]
    fn adjoint_rejects_inconsistent_shapes() {
        let g = MaskGrid::zeros(4, 4);
        assert!(upsample_adjoint(&g, (5, 2)).is_err());
        assert!(upsample_adjoint(&g, (0, 2)).is_err());
    }
}
