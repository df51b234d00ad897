//! 2-D convolution (cross-correlation) with exact hand-derived gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

fn check_shapes(
    x: &Tensor4,
    weight: &Tensor4,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    let (_, c_in, h, w) = x.shape();
    let (_, wc, kh, kw) = weight.shape();
    if wc != c_in {
        return Err(Error::Shape(format!(
            "conv weight expects {wc} input channels, input has {c_in}"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv stride must be >= 1".into()));
    }
    let h_p = h + 2 * pad;
    let w_p = w + 2 * pad;
    if h_p < kh || w_p < kw {
        return Err(Error::Shape(format!(
            "kernel {kh}x{kw} larger than padded input {h_p}x{w_p}"
        )));
    }
    Ok(((h_p - kh) / stride + 1, (w_p - kw) / stride + 1))
}

/// y[n][oc][oy][ox] = sum_ic sum_ky sum_kx x[n][ic][oy*s+ky-p][ox*s+kx-p] * w[oc][ic][ky][kx] + b[oc]
pub fn conv2d_forward(
    x: &Tensor4,
    weight: &Tensor4,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4> {
    let (n, c_in, h, w) = x.shape();
    let (c_out, _, kh, kw) = weight.shape();
    let (out_h, out_w) = check_shapes(x, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::Shape(format!(
                "bias has {} entries for {c_out} output channels",
                b.len()
            )));
        }
    }
    let mut y = Tensor4::zeros(n, c_out, out_h, out_w);
    for ni in 0..n {
        for oc in 0..c_out {
            let b = bias.map_or(0.0, |b| b[oc]);
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = b;
                    for ic in 0..c_in {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x.get(ni, ic, iy as usize, ix as usize)
                                    * weight.get(oc, ic, ky, kx);
                            }
                        }
                    }
                    y.set(ni, oc, oy, ox, acc);
                }
            }
        }
    }
    y.debug_check_finite("conv2d_forward");
    Ok(y)
}

/// Gradients w.r.t. input, weights and bias given upstream d_y.
pub fn conv2d_backward(
    x: &Tensor4,
    weight: &Tensor4,
    stride: usize,
    pad: usize,
    d_y: &Tensor4,
) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
    let (n, c_in, h, w) = x.shape();
    let (c_out, _, kh, kw) = weight.shape();
    let (out_h, out_w) = check_shapes(x, weight, stride, pad)?;
    if d_y.shape() != (n, c_out, out_h, out_w) {
        return Err(Error::Shape(format!(
            "conv backward: d_y shape {:?}, expected {:?}",
            d_y.shape(),
            (n, c_out, out_h, out_w)
        )));
    }
    let mut d_x = Tensor4::zeros(n, c_in, h, w);
    let mut d_w = Tensor4::zeros(c_out, c_in, kh, kw);
    let mut d_b = vec![0.0; c_out];
    for ni in 0..n {
        for oc in 0..c_out {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let g = d_y.get(ni, oc, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    d_b[oc] += g;
                    for ic in 0..c_in {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                let dw_i = d_w.idx(oc, ic, ky, kx);
                                d_w.data_mut()[dw_i] += g * x.get(ni, ic, iy, ix);
                                let dx_i = d_x.idx(ni, ic, iy, ix);
                                d_x.data_mut()[dx_i] += g * weight.get(oc, ic, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((d_x, d_w, d_b))
}
