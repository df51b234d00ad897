//! RoI max pooling over a single feature map.
//!
//! A feature-space box is quantized to the integer grid with floor(min) /
//! ceil(max), then split into out_h x out_w bins that partition the
//! quantized box as evenly as possible with the remainder going to the
//! leading bins. Each output cell is the max over its bin; the backward
//! pass routes gradient to the argmax position (ties go to the lowest
//! linear index, i.e. the first maximum in row-major scan order).

use crate::au_table::AuBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy)]
pub struct RoiSpec {
    pub out_h: usize,
    pub out_w: usize,
}

impl RoiSpec {
    pub fn square(size: usize) -> Self {
        RoiSpec {
            out_h: size,
            out_w: size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoiPoolOutput {
    /// (R, C, out_h, out_w)
    pub output: Tensor4,
    /// Flat feature index feeding each output cell; -1 for empty bins.
    pub argmax: Vec<i64>,
    /// Boxes that collapsed to zero area after quantization and were
    /// widened to a single cell at the clamped location.
    pub degenerate: Vec<bool>,
}

/// Quantize one side: returns (lo, hi, was_degenerate) with 0 <= lo < hi <= limit.
fn quantize(min_v: f64, max_v: f64, limit: usize) -> (usize, usize, bool) {
    let lo = min_v.floor().max(0.0) as i64;
    let hi = (max_v.ceil() as i64).min(limit as i64);
    if hi > lo {
        (lo as usize, hi as usize, false)
    } else {
        // collapsed: one cell at the clamped location
        let lo = lo.clamp(0, limit as i64 - 1) as usize;
        (lo, lo + 1, true)
    }
}

/// Bin [start, end) for index `i` of `count` bins over `extent` cells:
/// even split, remainder to the leading bins.
#[inline]
fn bin_bounds(i: usize, count: usize, extent: usize) -> (usize, usize) {
    let base = extent / count;
    let rem = extent % count;
    let start = i * base + i.min(rem);
    let size = base + usize::from(i < rem);
    (start, start + size)
}

/// Pool every box against one (1, C, H, W) feature map.
pub fn roi_pool_forward(
    feature: &Tensor4,
    boxes: &[AuBox],
    spec: RoiSpec,
) -> Result<RoiPoolOutput> {
    let (n, c, h, w) = feature.shape();
    if n != 1 {
        return Err(Error::Shape(format!(
            "roi_pool expects a single-image feature map, got n={n}"
        )));
    }
    if spec.out_h == 0 || spec.out_w == 0 {
        return Err(Error::Shape("RoI output size must be >= 1".into()));
    }
    let r = boxes.len();
    let mut output = Tensor4::zeros(r, c, spec.out_h, spec.out_w);
    let mut argmax = vec![-1i64; r * c * spec.out_h * spec.out_w];
    let mut degenerate = vec![false; r];
    for (bi, b) in boxes.iter().enumerate() {
        let (y0, y1, dy) = quantize(b.y_min, b.y_max, h);
        let (x0, x1, dx) = quantize(b.x_min, b.x_max, w);
        degenerate[bi] = dy || dx;
        let q_h = y1 - y0;
        let q_w = x1 - x0;
        for ci in 0..c {
            for oy in 0..spec.out_h {
                let (by0, by1) = bin_bounds(oy, spec.out_h, q_h);
                for ox in 0..spec.out_w {
                    let (bx0, bx1) = bin_bounds(ox, spec.out_w, q_w);
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = -1i64;
                    for iy in by0..by1 {
                        for ix in bx0..bx1 {
                            let v = feature.get(0, ci, y0 + iy, x0 + ix);
                            if best_idx < 0 || v > best {
                                best = v;
                                best_idx = ((ci * h + y0 + iy) * w + x0 + ix) as i64;
                            }
                        }
                    }
                    let out_idx = output.idx(bi, ci, oy, ox);
                    if best_idx >= 0 {
                        output.data_mut()[out_idx] = best;
                        argmax[out_idx] = best_idx;
                    }
                }
            }
        }
    }
    output.debug_check_finite("roi_pool_forward");
    Ok(RoiPoolOutput {
        output,
        argmax,
        degenerate,
    })
}

/// Scatter upstream gradient back to the argmax feature positions.
pub fn roi_pool_backward(
    pooled: &RoiPoolOutput,
    d_out: &Tensor4,
    feature_shape: (usize, usize, usize, usize),
) -> Result<Tensor4> {
    if d_out.shape() != pooled.output.shape() {
        return Err(Error::Shape(format!(
            "roi_pool backward: d_out {:?} vs pooled {:?}",
            d_out.shape(),
            pooled.output.shape()
        )));
    }
    let (_, c, h, w) = feature_shape;
    let plane = c * h * w;
    let mut d_feature = Tensor4::zeros(1, c, h, w);
    for (i, &am) in pooled.argmax.iter().enumerate() {
        if am >= 0 {
            debug_assert!((am as usize) < plane);
            d_feature.data_mut()[am as usize] += d_out.data()[i];
        }
    }
    Ok(d_feature)
}
