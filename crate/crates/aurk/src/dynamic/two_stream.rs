//! Two-stream fusion: RGB and optical-flow RoI features concatenated along
//! the channel dimension, then reduced back with a 1x1 convolution
//! (2C channels in, C channels out).

use crate::error::{Error, Result};
use crate::nn::{conv2d_backward, conv2d_forward};
use crate::tensor::Tensor4;

/// Stack two (R, C, H, W) feature tensors into (R, 2C, H, W).
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "two-stream concat: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, c, h, w) = a.shape();
    let mut out = Tensor4::zeros(n, 2 * c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(ni, ci, y, x, a.get(ni, ci, y, x));
                    out.set(ni, c + ci, y, x, b.get(ni, ci, y, x));
                }
            }
        }
    }
    Ok(out)
}

fn split_channels(d: &Tensor4, c: usize) -> (Tensor4, Tensor4) {
    let (n, _, h, w) = d.shape();
    let mut a = Tensor4::zeros(n, c, h, w);
    let mut b = Tensor4::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    a.set(ni, ci, y, x, d.get(ni, ci, y, x));
                    b.set(ni, ci, y, x, d.get(ni, c + ci, y, x));
                }
            }
        }
    }
    (a, b)
}

/// Fuse weight that projects the concatenated features back onto the first
/// stream: identity on the RGB half, zeros on the flow half.
pub fn identity_fuse_weight(c: usize) -> Tensor4 {
    let mut w = Tensor4::zeros(c, 2 * c, 1, 1);
    for ci in 0..c {
        w.set(ci, ci, 0, 0, 1.0);
    }
    w
}

/// concat(rgb, flow) -> 1x1 conv -> (R, C, H, W).
pub fn fuse_forward(
    rgb: &Tensor4,
    flow: &Tensor4,
    weight: &Tensor4,
    bias: Option<&[f64]>,
) -> Result<Tensor4> {
    let (c_out, c_in, kh, kw) = weight.shape();
    let c = rgb.c();
    if (kh, kw) != (1, 1) || c_in != 2 * c || c_out != c {
        return Err(Error::Shape(format!(
            "fuse weight must be ({c}, {}, 1, 1), got {:?}",
            2 * c,
            weight.shape()
        )));
    }
    let cat = concat_channels(rgb, flow)?;
    conv2d_forward(&cat, weight, bias, 1, 0)
}

/// Gradients w.r.t. both streams and the fuse kernel.
pub fn fuse_backward(
    rgb: &Tensor4,
    flow: &Tensor4,
    weight: &Tensor4,
    d_out: &Tensor4,
) -> Result<(Tensor4, Tensor4, Tensor4, Vec<f64>)> {
    let cat = concat_channels(rgb, flow)?;
    let (d_cat, d_w, d_b) = conv2d_backward(&cat, weight, 1, 0, d_out)?;
    let (d_rgb, d_flow) = split_channels(&d_cat, rgb.c());
    Ok((d_rgb, d_flow, d_w, d_b))
}
