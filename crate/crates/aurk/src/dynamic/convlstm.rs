//! ConvLSTM cell: an LSTM whose gate transforms are convolutions.
//!
//! Gate order in the stacked channel dimension is [i, f, g, o]:
//!
//! i = sigma(Wxi*x + Whi*h + bi)      f = sigma(Wxf*x + Whf*h + bf)
//! g = tanh (Wxg*x + Whg*h + bg)      o = sigma(Wxo*x + Who*h + bo)
//! c' = f . c + i . g                 h' = o . tanh(c')
//!
//! Gate convolutions use a square kernel with zero padding preserving
//! H x W; no peephole connections. At 1x1 spatial size the cell reduces to
//! a standard LSTM over the kernel's center taps.

use crate::error::{Error, Result};
use crate::nn::loss::sigmoid;
use crate::nn::{conv2d_backward, conv2d_forward};
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct ConvLstmParams {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// (4*c_out, c_in, k, k)
    pub w_x: Tensor4,
    /// (4*c_out, c_out, k, k)
    pub w_h: Tensor4,
    /// 4*c_out
    pub bias: Vec<f64>,
}

impl ConvLstmParams {
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvLstmParams {
            c_in,
            c_out,
            kernel,
            w_x: Tensor4::zeros(4 * c_out, c_in, kernel, kernel),
            w_h: Tensor4::zeros(4 * c_out, c_out, kernel, kernel),
            bias: vec![0.0; 4 * c_out],
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Debug, Clone)]
pub struct ConvLstmState {
    pub h: Tensor4,
    pub c: Tensor4,
}

impl ConvLstmState {
    pub fn zeros(n: usize, c_out: usize, h: usize, w: usize) -> Self {
        ConvLstmState {
            h: Tensor4::zeros(n, c_out, h, w),
            c: Tensor4::zeros(n, c_out, h, w),
        }
    }
}

/// Values cached by the forward pass for exact backprop.
#[derive(Debug, Clone)]
pub struct CellCache {
    x: Tensor4,
    h_prev: Tensor4,
    c_prev: Tensor4,
    i: Tensor4,
    f: Tensor4,
    g: Tensor4,
    o: Tensor4,
    c_new: Tensor4,
}

impl CellCache {
    /// Shape of the hidden/cell state produced by this step.
    pub fn hidden_shape(&self) -> (usize, usize, usize, usize) {
        self.i.shape()
    }
}

#[derive(Debug, Clone)]
pub struct CellGrads {
    pub d_x: Tensor4,
    pub d_h_prev: Tensor4,
    pub d_c_prev: Tensor4,
    pub d_w_x: Tensor4,
    pub d_w_h: Tensor4,
    pub d_bias: Vec<f64>,
}

fn gate_slice(pre: &Tensor4, gate: usize, c_out: usize) -> Tensor4 {
    let (n, _, h, w) = pre.shape();
    let mut out = Tensor4::zeros(n, c_out, h, w);
    for ni in 0..n {
        for ci in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    out.set(ni, ci, y, x, pre.get(ni, gate * c_out + ci, y, x));
                }
            }
        }
    }
    out
}

/// One ConvLSTM step.
pub fn cell_forward(
    x: &Tensor4,
    state: &ConvLstmState,
    params: &ConvLstmParams,
) -> Result<(ConvLstmState, CellCache)> {
    let (n, c_in, height, width) = x.shape();
    if c_in != params.c_in {
        return Err(Error::Shape(format!(
            "cell input has {c_in} channels, params expect {}",
            params.c_in
        )));
    }
    if state.h.shape() != (n, params.c_out, height, width) {
        return Err(Error::Shape(format!(
            "cell state shape {:?} does not match input {:?}",
            state.h.shape(),
            (n, params.c_out, height, width)
        )));
    }
    let pad = params.pad();
    let mut pre = conv2d_forward(x, &params.w_x, Some(&params.bias), 1, pad)?;
    let from_h = conv2d_forward(&state.h, &params.w_h, None, 1, pad)?;
    for (a, b) in pre.data_mut().iter_mut().zip(from_h.data()) {
        *a += *b;
    }
    let c_out = params.c_out;
    let mut i = gate_slice(&pre, 0, c_out);
    let mut f = gate_slice(&pre, 1, c_out);
    let mut g = gate_slice(&pre, 2, c_out);
    let mut o = gate_slice(&pre, 3, c_out);
    for v in i.data_mut() {
        *v = sigmoid(*v);
    }
    for v in f.data_mut() {
        *v = sigmoid(*v);
    }
    for v in g.data_mut() {
        *v = v.tanh();
    }
    for v in o.data_mut() {
        *v = sigmoid(*v);
    }
    let mut c_new = Tensor4::zeros(n, c_out, height, width);
    for idx in 0..c_new.numel() {
        c_new.data_mut()[idx] = f.data()[idx] * state.c.data()[idx] + i.data()[idx] * g.data()[idx];
    }
    let mut h_new = Tensor4::zeros(n, c_out, height, width);
    for idx in 0..h_new.numel() {
        h_new.data_mut()[idx] = o.data()[idx] * c_new.data()[idx].tanh();
    }
    h_new.debug_check_finite("convlstm_cell h");
    let cache = CellCache {
        x: x.clone(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        g,
        o,
        c_new: c_new.clone(),
    };
    Ok((ConvLstmState { h: h_new, c: c_new }, cache))
}

/// Exact gradients for one step given upstream d_h and d_c.
pub fn cell_backward(
    cache: &CellCache,
    params: &ConvLstmParams,
    d_h: &Tensor4,
    d_c_in: &Tensor4,
) -> Result<CellGrads> {
    let (n, c_out, height, width) = cache.i.shape();
    let numel = cache.i.numel();
    let mut d_pre = Tensor4::zeros(n, 4 * c_out, height, width);
    // d_c = d_c_in + d_h . o . (1 - tanh(c')^2)
    let mut d_c = vec![0.0; numel];
    for idx in 0..numel {
        let tc = cache.c_new.data()[idx].tanh();
        d_c[idx] = d_c_in.data()[idx] + d_h.data()[idx] * cache.o.data()[idx] * (1.0 - tc * tc);
    }
    let mut d_c_prev = Tensor4::zeros(n, c_out, height, width);
    for ni in 0..n {
        for ci in 0..c_out {
            for y in 0..height {
                for x in 0..width {
                    let idx = cache.i.idx(ni, ci, y, x);
                    let (iv, fv, gv, ov) = (
                        cache.i.data()[idx],
                        cache.f.data()[idx],
                        cache.g.data()[idx],
                        cache.o.data()[idx],
                    );
                    let tc = cache.c_new.data()[idx].tanh();
                    let d_i = d_c[idx] * gv * iv * (1.0 - iv);
                    let d_f = d_c[idx] * cache.c_prev.data()[idx] * fv * (1.0 - fv);
                    let d_g = d_c[idx] * iv * (1.0 - gv * gv);
                    let d_o = d_h.data()[idx] * tc * ov * (1.0 - ov);
                    d_pre.set(ni, ci, y, x, d_i);
                    d_pre.set(ni, c_out + ci, y, x, d_f);
                    d_pre.set(ni, 2 * c_out + ci, y, x, d_g);
                    d_pre.set(ni, 3 * c_out + ci, y, x, d_o);
                    d_c_prev.data_mut()[idx] = d_c[idx] * fv;
                }
            }
        }
    }
    let pad = params.pad();
    let (d_x, d_w_x, d_bias) = conv2d_backward(&cache.x, &params.w_x, 1, pad, &d_pre)?;
    let (d_h_prev, d_w_h, _) = conv2d_backward(&cache.h_prev, &params.w_h, 1, pad, &d_pre)?;
    Ok(CellGrads {
        d_x,
        d_h_prev,
        d_c_prev,
        d_w_x,
        d_w_h,
        d_bias,
    })
}

/// Run the cell over a sequence from a zero state; returns per-step hidden
/// states and the caches for backprop through time.
pub fn sequence_forward(
    xs: &[Tensor4],
    params: &ConvLstmParams,
) -> Result<(Vec<Tensor4>, Vec<CellCache>)> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Shape("empty sequence".into()))?;
    let (n, _, h, w) = first.shape();
    let mut state = ConvLstmState::zeros(n, params.c_out, h, w);
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let (next, cache) = cell_forward(x, &state, params)?;
        hs.push(next.h.clone());
        caches.push(cache);
        state = next;
    }
    Ok((hs, caches))
}

/// Backprop through time. `d_hs[t]` is the upstream gradient on step t's
/// hidden output. Returns per-step input gradients and summed parameter
/// gradients.
pub fn sequence_backward(
    caches: &[CellCache],
    params: &ConvLstmParams,
    d_hs: &[Tensor4],
) -> Result<(Vec<Tensor4>, Tensor4, Tensor4, Vec<f64>)> {
    if caches.len() != d_hs.len() {
        return Err(Error::Shape("BPTT: cache/gradient length mismatch".into()));
    }
    let (n, c_out, h, w) = caches[0].i.shape();
    let mut d_w_x = Tensor4::zeros(4 * c_out, params.c_in, params.kernel, params.kernel);
    let mut d_w_h = Tensor4::zeros(4 * c_out, c_out, params.kernel, params.kernel);
    let mut d_bias = vec![0.0; 4 * c_out];
    let mut d_xs = vec![Tensor4::zeros(0, 0, 0, 0); caches.len()];
    let mut d_h_carry = Tensor4::zeros(n, c_out, h, w);
    let mut d_c_carry = Tensor4::zeros(n, c_out, h, w);
    for t in (0..caches.len()).rev() {
        let mut d_h = d_hs[t].clone();
        for (a, b) in d_h.data_mut().iter_mut().zip(d_h_carry.data()) {
            *a += *b;
        }
        let grads = cell_backward(&caches[t], params, &d_h, &d_c_carry)?;
        d_xs[t] = grads.d_x;
        d_h_carry = grads.d_h_prev;
        d_c_carry = grads.d_c_prev;
        for (a, b) in d_w_x.data_mut().iter_mut().zip(grads.d_w_x.data()) {
            *a += *b;
        }
        for (a, b) in d_w_h.data_mut().iter_mut().zip(grads.d_w_h.data()) {
            *a += *b;
        }
        for (a, b) in d_bias.iter_mut().zip(&grads.d_bias) {
            *a += *b;
        }
    }
    Ok((d_xs, d_w_x, d_w_h, d_bias))
}
