//! Fully-connected layer and ReLU on flat (rows x cols) matrices.

use crate::error::{Error, Result};

/// y = x * w + b, with x (n x d_in), w (d_in x d_out), b (d_out).
pub fn linear_forward(x: &[f64], n: usize, d_in: usize, w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let d_out = b.len();
    if x.len() != n * d_in || w.len() != d_in * d_out {
        return Err(Error::Shape(format!(
            "linear: x {} vs {n}x{d_in}, w {} vs {d_in}x{d_out}",
            x.len(),
            w.len()
        )));
    }
    let mut y = vec![0.0; n * d_out];
    for i in 0..n {
        let xi = &x[i * d_in..(i + 1) * d_in];
        let yi = &mut y[i * d_out..(i + 1) * d_out];
        yi.copy_from_slice(b);
        for (k, &xv) in xi.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[k * d_out..(k + 1) * d_out];
            for (yo, &wv) in yi.iter_mut().zip(wr) {
                *yo += xv * wv;
            }
        }
    }
    Ok(y)
}

/// Gradients (d_x, d_w, d_b) for upstream d_y (n x d_out).
pub fn linear_backward(
    x: &[f64],
    n: usize,
    d_in: usize,
    w: &[f64],
    d_out: usize,
    d_y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if d_y.len() != n * d_out {
        return Err(Error::Shape(format!(
            "linear backward: d_y {} vs {n}x{d_out}",
            d_y.len()
        )));
    }
    let mut d_x = vec![0.0; n * d_in];
    let mut d_w = vec![0.0; d_in * d_out];
    let mut d_b = vec![0.0; d_out];
    for i in 0..n {
        let xi = &x[i * d_in..(i + 1) * d_in];
        let gi = &d_y[i * d_out..(i + 1) * d_out];
        for (o, &g) in gi.iter().enumerate() {
            d_b[o] += g;
        }
        for k in 0..d_in {
            let wr = &w[k * d_out..(k + 1) * d_out];
            let mut acc = 0.0;
            for (o, &g) in gi.iter().enumerate() {
                acc += g * wr[o];
                d_w[k * d_out + o] += g * xi[k];
            }
            d_x[i * d_in + k] = acc;
        }
    }
    Ok((d_x, d_w, d_b))
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_backward(x: &[f64], d_y: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(d_y)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}
