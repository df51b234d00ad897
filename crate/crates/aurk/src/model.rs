//! Trainable models: the shared conv backbone, the RoI classification head,
//! and the dynamic variants (ConvLSTM timelines, two-stream fusion).
//! Includes the versioned binary checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use crate::au_table::AuBox;
use crate::dynamic::{
    fuse_backward, fuse_forward, identity_fuse_weight, sequence_backward, sequence_forward,
    CellCache, ConvLstmParams,
};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, relu_backward, relu_forward,
    roi_pool_backward, roi_pool_forward, RoiPoolOutput, RoiSpec,
};
use crate::rng::Rng;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Backbone layout: conv stack, RoI output size, head width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneProfile {
    pub name: String,
    pub convs: Vec<ConvSpec>,
    pub roi_size: usize,
    pub fc_hidden: usize,
}

impl BackboneProfile {
    /// `standard`: overall stride 16, RoI 14x14. `toy`: overall stride 8,
    /// RoI 7x7, sized for small synthetic images.
    pub fn by_name(name: &str) -> Result<BackboneProfile> {
        match name {
            "standard" => Ok(BackboneProfile {
                name: "standard".into(),
                convs: vec![
                    ConvSpec {
                        c_out: 8,
                        kernel: 5,
                        stride: 4,
                        pad: 2,
                    },
                    ConvSpec {
                        c_out: 16,
                        kernel: 5,
                        stride: 4,
                        pad: 2,
                    },
                ],
                roi_size: 14,
                fc_hidden: 64,
            }),
            "toy" => Ok(BackboneProfile {
                name: "toy".into(),
                convs: vec![
                    ConvSpec {
                        c_out: 8,
                        kernel: 5,
                        stride: 2,
                        pad: 2,
                    },
                    ConvSpec {
                        c_out: 16,
                        kernel: 5,
                        stride: 2,
                        pad: 2,
                    },
                ],
                roi_size: 7,
                fc_hidden: 64,
            }),
            other => Err(Error::Config(format!("unknown backbone profile {other:?}"))),
        }
    }

    pub fn stride(&self) -> u32 {
        self.convs.iter().map(|c| c.stride as u32).product()
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map(|c| c.c_out).unwrap_or(0)
    }
}

/// Conv stack with ReLU after every layer.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub specs: Vec<ConvSpec>,
    pub kernels: Vec<Tensor4>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    inputs: Vec<Tensor4>,
    preacts: Vec<Tensor4>,
}

#[derive(Debug, Clone)]
pub struct BackboneGrads {
    pub kernels: Vec<Tensor4>,
    pub biases: Vec<Vec<f64>>,
}

impl Backbone {
    pub fn init(c_in: usize, specs: &[ConvSpec], rng: &mut Rng) -> Backbone {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        let mut prev = c_in;
        for spec in specs {
            let fan_in = prev * spec.kernel * spec.kernel;
            let scale = (2.0 / fan_in as f64).sqrt();
            let mut k = Tensor4::zeros(spec.c_out, prev, spec.kernel, spec.kernel);
            for v in k.data_mut() {
                *v = rng.normal() * scale;
            }
            kernels.push(k);
            biases.push(vec![0.0; spec.c_out]);
            prev = spec.c_out;
        }
        Backbone {
            specs: specs.to_vec(),
            kernels,
            biases,
        }
    }

    pub fn forward(&self, image: &Tensor4) -> Result<(Tensor4, BackboneCache)> {
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut preacts = Vec::with_capacity(self.specs.len());
        let mut x = image.clone();
        for (i, spec) in self.specs.iter().enumerate() {
            inputs.push(x.clone());
            let pre = conv2d_forward(
                &x,
                &self.kernels[i],
                Some(&self.biases[i]),
                spec.stride,
                spec.pad,
            )?;
            let mut post = pre.clone();
            for v in post.data_mut() {
                *v = v.max(0.0);
            }
            preacts.push(pre);
            x = post;
        }
        Ok((x, BackboneCache { inputs, preacts }))
    }

    /// Backprop through the stack; returns parameter gradients (gradients
    /// on the image itself are not needed).
    pub fn backward(&self, cache: &BackboneCache, d_feature: &Tensor4) -> Result<BackboneGrads> {
        let mut d_x = d_feature.clone();
        let mut kernels = Vec::with_capacity(self.specs.len());
        let mut biases = Vec::with_capacity(self.specs.len());
        for i in (0..self.specs.len()).rev() {
            let mut d_pre = d_x.clone();
            for (v, &p) in d_pre.data_mut().iter_mut().zip(cache.preacts[i].data()) {
                if p <= 0.0 {
                    *v = 0.0;
                }
            }
            let (d_in, d_w, d_b) = conv2d_backward(
                &cache.inputs[i],
                &self.kernels[i],
                self.specs[i].stride,
                self.specs[i].pad,
                &d_pre,
            )?;
            kernels.push(d_w);
            biases.push(d_b);
            d_x = d_in;
        }
        kernels.reverse();
        biases.reverse();
        Ok(BackboneGrads { kernels, biases })
    }

    pub fn zero_grads(&self) -> BackboneGrads {
        BackboneGrads {
            kernels: self
                .kernels
                .iter()
                .map(|k| {
                    let (a, b, c, d) = k.shape();
                    Tensor4::zeros(a, b, c, d)
                })
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

impl BackboneGrads {
    pub fn add(&mut self, other: &BackboneGrads) {
        for (a, b) in self.kernels.iter_mut().zip(&other.kernels) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for k in &mut self.kernels {
            for v in k.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= s;
            }
        }
    }
}

/// Two fully-connected layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct FcHead {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FcCache {
    x: Vec<f64>,
    n: usize,
    h_pre: Vec<f64>,
    h_post: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct FcGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl FcHead {
    pub fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut Rng) -> FcHead {
        let s1 = (2.0 / d_in as f64).sqrt();
        let s2 = (2.0 / hidden as f64).sqrt();
        FcHead {
            d_in,
            hidden,
            d_out,
            w1: (0..d_in * hidden).map(|_| rng.normal() * s1).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden * d_out).map(|_| rng.normal() * s2).collect(),
            b2: vec![0.0; d_out],
        }
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Result<(Vec<f64>, FcCache)> {
        let h_pre = linear_forward(x, n, self.d_in, &self.w1, &self.b1)?;
        let h_post = relu_forward(&h_pre);
        let logits = linear_forward(&h_post, n, self.hidden, &self.w2, &self.b2)?;
        Ok((
            logits,
            FcCache {
                x: x.to_vec(),
                n,
                h_pre,
                h_post,
            },
        ))
    }

    pub fn backward(&self, cache: &FcCache, d_logits: &[f64]) -> Result<(Vec<f64>, FcGrads)> {
        let (d_h_post, d_w2, d_b2) = linear_backward(
            &cache.h_post,
            cache.n,
            self.hidden,
            &self.w2,
            self.d_out,
            d_logits,
        )?;
        let d_h_pre = relu_backward(&cache.h_pre, &d_h_post);
        let (d_x, d_w1, d_b1) = linear_backward(
            &cache.x,
            cache.n,
            self.d_in,
            &self.w1,
            self.hidden,
            &d_h_pre,
        )?;
        Ok((
            d_x,
            FcGrads {
                w1: d_w1,
                b1: d_b1,
                w2: d_w2,
                b2: d_b2,
            },
        ))
    }

    pub fn zero_grads(&self) -> FcGrads {
        FcGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }
}

impl FcGrads {
    pub fn add(&mut self, other: &FcGrads) {
        for (a, b) in [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *v *= s;
        }
    }
}

/// Static AU R-CNN head: backbone features, RoI pooling per AU box, two fc
/// layers, one logit row per box.
#[derive(Debug, Clone)]
pub struct StaticModel {
    pub profile: BackboneProfile,
    pub backbone: Backbone,
    pub head: FcHead,
    pub l_out: usize,
}

pub struct StaticCache {
    backbone: BackboneCache,
    feature_shape: (usize, usize, usize, usize),
    pooled: RoiPoolOutput,
    fc: FcCache,
}

#[derive(Debug, Clone)]
pub struct StaticGrads {
    pub backbone: BackboneGrads,
    pub head: FcGrads,
}

impl StaticModel {
    pub fn init(
        profile: &BackboneProfile,
        c_in: usize,
        l_out: usize,
        rng: &mut Rng,
    ) -> StaticModel {
        let backbone = Backbone::init(c_in, &profile.convs, rng);
        let d_in = profile.out_channels() * profile.roi_size * profile.roi_size;
        let head = FcHead::init(d_in, profile.fc_hidden, l_out, rng);
        StaticModel {
            profile: profile.clone(),
            backbone,
            head,
            l_out,
        }
    }

    pub fn roi_spec(&self) -> RoiSpec {
        RoiSpec::square(self.profile.roi_size)
    }

    /// Forward one preprocessed image with feature-space boxes.
    /// Returns (R x L logits, cache).
    pub fn forward(
        &self,
        image: &Tensor4,
        boxes_feat: &[AuBox],
    ) -> Result<(Vec<f64>, StaticCache)> {
        let (feature, backbone) = self.backbone.forward(image)?;
        let pooled = roi_pool_forward(&feature, boxes_feat, self.roi_spec())?;
        let r = boxes_feat.len();
        let flat = pooled.output.data().to_vec();
        let (logits, fc) = self.head.forward(&flat, r)?;
        Ok((
            logits,
            StaticCache {
                backbone,
                feature_shape: feature.shape(),
                pooled,
                fc,
            },
        ))
    }

    pub fn backward(&self, cache: &StaticCache, d_logits: &[f64]) -> Result<StaticGrads> {
        let (d_flat, head) = self.head.backward(&cache.fc, d_logits)?;
        let (r, c, _, _) = cache.pooled.output.shape();
        let s = self.profile.roi_size;
        let d_pooled = Tensor4::from_vec(r, c, s, s, d_flat)?;
        let d_feature = roi_pool_backward(&cache.pooled, &d_pooled, cache.feature_shape)?;
        let backbone = self.backbone.backward(&cache.backbone, &d_feature)?;
        Ok(StaticGrads { backbone, head })
    }

    pub fn zero_grads(&self) -> StaticGrads {
        StaticGrads {
            backbone: self.backbone.zero_grads(),
            head: self.head.zero_grads(),
        }
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (k, b) in self.backbone.kernels.iter().zip(&self.backbone.biases) {
            out.push(k.numel());
            out.push(b.len());
        }
        out.extend([
            self.head.w1.len(),
            self.head.b1.len(),
            self.head.w2.len(),
            self.head.b2.len(),
        ]);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (k, b) in self
            .backbone
            .kernels
            .iter_mut()
            .zip(self.backbone.biases.iter_mut())
        {
            out.push(k.data_mut());
            out.push(b.as_mut_slice());
        }
        out.push(self.head.w1.as_mut_slice());
        out.push(self.head.b1.as_mut_slice());
        out.push(self.head.w2.as_mut_slice());
        out.push(self.head.b2.as_mut_slice());
        out
    }

    /// Named tensors in canonical order for checkpointing.
    pub fn named_tensors(&self) -> (Vec<String>, Vec<[u64; 4]>, Vec<Vec<f64>>) {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut values = Vec::new();
        for (i, (k, b)) in self
            .backbone
            .kernels
            .iter()
            .zip(&self.backbone.biases)
            .enumerate()
        {
            let (a, c, h, w) = k.shape();
            names.push(format!("conv{i}.w"));
            shapes.push([a as u64, c as u64, h as u64, w as u64]);
            values.push(k.data().to_vec());
            names.push(format!("conv{i}.b"));
            shapes.push([b.len() as u64, 1, 1, 1]);
            values.push(b.clone());
        }
        for (name, vals, rows, cols) in [
            ("fc1.w", &self.head.w1, self.head.d_in, self.head.hidden),
            ("fc1.b", &self.head.b1, self.head.hidden, 1),
            ("fc2.w", &self.head.w2, self.head.hidden, self.head.d_out),
            ("fc2.b", &self.head.b2, self.head.d_out, 1),
        ] {
            names.push(name.to_string());
            shapes.push([rows as u64, cols as u64, 1, 1]);
            values.push(vals.clone());
        }
        (names, shapes, values)
    }

    /// Restore parameter values from checkpoint tensors (canonical order).
    pub fn load_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut slices = self.param_slices_mut();
        if values.len() != slices.len() {
            return Err(Error::Version(format!(
                "checkpoint has {} tensors, model expects {}",
                values.len(),
                slices.len()
            )));
        }
        for (dst, src) in slices.iter_mut().zip(values) {
            if dst.len() != src.len() {
                return Err(Error::Version("checkpoint tensor size mismatch".into()));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

impl StaticGrads {
    pub fn add(&mut self, other: &StaticGrads) {
        self.backbone.add(&other.backbone);
        self.head.add(&other.head);
    }

    pub fn scale(&mut self, s: f64) {
        self.backbone.scale(s);
        self.head.scale(s);
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (k, b) in self.backbone.kernels.iter().zip(&self.backbone.biases) {
            out.push(k.data());
            out.push(b.as_slice());
        }
        out.push(&self.head.w1);
        out.push(&self.head.b1);
        out.push(&self.head.w2);
        out.push(&self.head.b2);
        out
    }
}

/// ConvLSTM dynamic head over per-box timelines: one cell per box slot
/// (nine timelines on the full table), a shared two-layer fc on the
/// reshaped (N*T, C*H*W) tensor.
#[derive(Debug, Clone)]
pub struct ConvLstmHead {
    pub cells: Vec<ConvLstmParams>,
    pub head: FcHead,
    pub roi_size: usize,
    pub l_out: usize,
}

pub struct ConvLstmLineCache {
    caches: Vec<CellCache>,
    fc: FcCache,
    steps: usize,
}

#[derive(Debug, Clone)]
pub struct ConvLstmGrads {
    pub w_x: Vec<Tensor4>,
    pub w_h: Vec<Tensor4>,
    pub bias: Vec<Vec<f64>>,
    pub head: FcGrads,
}

impl ConvLstmHead {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        lines: usize,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        roi_size: usize,
        hidden: usize,
        l_out: usize,
        rng: &mut Rng,
    ) -> ConvLstmHead {
        let mut cells = Vec::with_capacity(lines);
        for _ in 0..lines {
            let mut p = ConvLstmParams::zeros(c_in, c_out, kernel);
            let sx = (1.0 / (c_in * kernel * kernel) as f64).sqrt();
            let sh = (1.0 / (c_out * kernel * kernel) as f64).sqrt();
            for v in p.w_x.data_mut() {
                *v = rng.normal() * sx;
            }
            for v in p.w_h.data_mut() {
                *v = rng.normal() * sh;
            }
            // forget-gate bias starts positive so state flows early on
            for (i, v) in p.bias.iter_mut().enumerate() {
                *v = if (c_out..2 * c_out).contains(&i) {
                    1.0
                } else {
                    0.0
                };
            }
            cells.push(p);
        }
        let d_in = c_out * roi_size * roi_size;
        ConvLstmHead {
            cells,
            head: FcHead::init(d_in, hidden, l_out, rng),
            roi_size,
            l_out,
        }
    }

    /// Run one line's timeline: xs[t] is the (N, C, H, W) RoI feature at
    /// step t. Returns per-step logit rows ((N*T) x L) and the cache; row
    /// i*T + t carries sample i at step t.
    pub fn forward_line(
        &self,
        line: usize,
        xs: &[Tensor4],
    ) -> Result<(Vec<f64>, ConvLstmLineCache)> {
        let (hs, caches) = sequence_forward(xs, &self.cells[line])?;
        let steps = hs.len();
        let n = hs[0].n();
        let per = hs[0].numel() / n;
        let mut flat = vec![0.0; n * steps * per];
        for (t, h) in hs.iter().enumerate() {
            for i in 0..n {
                let row = i * steps + t;
                flat[row * per..(row + 1) * per].copy_from_slice(&h.data()[i * per..(i + 1) * per]);
            }
        }
        let (logits, fc) = self.head.forward(&flat, n * steps)?;
        Ok((logits, ConvLstmLineCache { caches, fc, steps }))
    }

    /// Backward for one line; d_logits matches the forward output layout.
    /// Returns per-step input gradients plus parameter grads.
    pub fn backward_line(
        &self,
        line: usize,
        cache: &ConvLstmLineCache,
        d_logits: &[f64],
    ) -> Result<(Vec<Tensor4>, ConvLstmGrads)> {
        let (d_flat, head) = self.head.backward(&cache.fc, d_logits)?;
        let steps = cache.steps;
        let (n, c_out, hh, ww) = cache.caches[0].hidden_shape();
        let per = c_out * hh * ww;
        let mut d_hs = vec![Tensor4::zeros(n, c_out, hh, ww); steps];
        for (t, d_h) in d_hs.iter_mut().enumerate() {
            for i in 0..n {
                let row = i * steps + t;
                d_h.data_mut()[i * per..(i + 1) * per]
                    .copy_from_slice(&d_flat[row * per..(row + 1) * per]);
            }
        }
        let (d_xs, d_w_x, d_w_h, d_bias) =
            sequence_backward(&cache.caches, &self.cells[line], &d_hs)?;
        let mut grads = self.zero_grads();
        grads.w_x[line] = d_w_x;
        grads.w_h[line] = d_w_h;
        grads.bias[line] = d_bias;
        grads.head = head;
        Ok((d_xs, grads))
    }

    pub fn zero_grads(&self) -> ConvLstmGrads {
        ConvLstmGrads {
            w_x: self
                .cells
                .iter()
                .map(|c| {
                    let (a, b, h, w) = c.w_x.shape();
                    Tensor4::zeros(a, b, h, w)
                })
                .collect(),
            w_h: self
                .cells
                .iter()
                .map(|c| {
                    let (a, b, h, w) = c.w_h.shape();
                    Tensor4::zeros(a, b, h, w)
                })
                .collect(),
            bias: self.cells.iter().map(|c| vec![0.0; c.bias.len()]).collect(),
            head: self.head.zero_grads(),
        }
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in &self.cells {
            out.push(c.w_x.numel());
            out.push(c.w_h.numel());
            out.push(c.bias.len());
        }
        out.extend([
            self.head.w1.len(),
            self.head.b1.len(),
            self.head.w2.len(),
            self.head.b2.len(),
        ]);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.cells {
            out.push(c.w_x.data_mut());
            out.push(c.w_h.data_mut());
            out.push(c.bias.as_mut_slice());
        }
        out.push(self.head.w1.as_mut_slice());
        out.push(self.head.b1.as_mut_slice());
        out.push(self.head.w2.as_mut_slice());
        out.push(self.head.b2.as_mut_slice());
        out
    }
}

impl ConvLstmGrads {
    pub fn add(&mut self, other: &ConvLstmGrads) {
        for (a, b) in self.w_x.iter_mut().zip(&other.w_x) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        for (a, b) in self.w_h.iter_mut().zip(&other.w_h) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        self.head.add(&other.head);
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.w_x.iter_mut().chain(&mut self.w_h) {
            for v in t.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.bias {
            for v in b {
                *v *= s;
            }
        }
        self.head.scale(s);
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for ((wx, wh), b) in self.w_x.iter().zip(&self.w_h).zip(&self.bias) {
            out.push(wx.data());
            out.push(wh.data());
            out.push(b.as_slice());
        }
        out.push(&self.head.w1);
        out.push(&self.head.b1);
        out.push(&self.head.w2);
        out.push(&self.head.b2);
        out
    }
}

/// Two-stream model: an RGB backbone and a flow backbone pooled with the
/// same boxes; RoI features fused by channel concat + 1x1 conv, then the
/// shared fc head.
#[derive(Debug, Clone)]
pub struct TwoStreamModel {
    pub profile: BackboneProfile,
    pub rgb: Backbone,
    pub flow: Backbone,
    pub fuse_w: Tensor4,
    pub fuse_b: Vec<f64>,
    pub head: FcHead,
    pub l_out: usize,
}

pub struct TwoStreamCache {
    rgb: BackboneCache,
    flow: BackboneCache,
    rgb_shape: (usize, usize, usize, usize),
    flow_shape: (usize, usize, usize, usize),
    rgb_pooled: RoiPoolOutput,
    flow_pooled: RoiPoolOutput,
    fused: FcCache,
}

#[derive(Debug, Clone)]
pub struct TwoStreamGrads {
    pub rgb: BackboneGrads,
    pub flow: BackboneGrads,
    pub fuse_w: Tensor4,
    pub fuse_b: Vec<f64>,
    pub head: FcGrads,
}

impl TwoStreamModel {
    /// Start from a static model: the RGB branch copies its backbone, the
    /// fuse kernel starts as the identity projection of the RGB half so
    /// the fused model reproduces static logits until the flow branch
    /// contributes.
    pub fn from_static(
        static_model: &StaticModel,
        flow_c_in: usize,
        rng: &mut Rng,
    ) -> TwoStreamModel {
        let c = static_model.profile.out_channels();
        TwoStreamModel {
            profile: static_model.profile.clone(),
            rgb: static_model.backbone.clone(),
            flow: Backbone::init(flow_c_in, &static_model.profile.convs, rng),
            fuse_w: identity_fuse_weight(c),
            fuse_b: vec![0.0; c],
            head: static_model.head.clone(),
            l_out: static_model.l_out,
        }
    }

    /// Zero the flow branch: its features vanish and the identity fuse
    /// passes the RGB features through unchanged.
    pub fn zero_flow_branch(&mut self) {
        for k in &mut self.flow.kernels {
            for v in k.data_mut() {
                *v = 0.0;
            }
        }
        for b in &mut self.flow.biases {
            for v in b {
                *v = 0.0;
            }
        }
        self.fuse_w = identity_fuse_weight(self.profile.out_channels());
        for v in &mut self.fuse_b {
            *v = 0.0;
        }
    }

    pub fn forward(
        &self,
        rgb_image: &Tensor4,
        flow_stack: &Tensor4,
        boxes_feat: &[AuBox],
    ) -> Result<(Vec<f64>, TwoStreamCache)> {
        let spec = RoiSpec::square(self.profile.roi_size);
        let (rgb_feat, rgb_cache) = self.rgb.forward(rgb_image)?;
        let (flow_feat, flow_cache) = self.flow.forward(flow_stack)?;
        let rgb_pooled = roi_pool_forward(&rgb_feat, boxes_feat, spec)?;
        let flow_pooled = roi_pool_forward(&flow_feat, boxes_feat, spec)?;
        let fused = fuse_forward(
            &rgb_pooled.output,
            &flow_pooled.output,
            &self.fuse_w,
            Some(&self.fuse_b),
        )?;
        let r = boxes_feat.len();
        let (logits, fc) = self.head.forward(fused.data(), r)?;
        Ok((
            logits,
            TwoStreamCache {
                rgb: rgb_cache,
                flow: flow_cache,
                rgb_shape: rgb_feat.shape(),
                flow_shape: flow_feat.shape(),
                rgb_pooled,
                flow_pooled,
                fused: fc,
            },
        ))
    }

    pub fn backward(&self, cache: &TwoStreamCache, d_logits: &[f64]) -> Result<TwoStreamGrads> {
        let (d_fused_flat, head) = self.head.backward(&cache.fused, d_logits)?;
        let (r, c, s, _) = cache.rgb_pooled.output.shape();
        let d_fused = Tensor4::from_vec(r, c, s, s, d_fused_flat)?;
        let (d_rgb_pooled, d_flow_pooled, d_fuse_w, d_fuse_b) = fuse_backward(
            &cache.rgb_pooled.output,
            &cache.flow_pooled.output,
            &self.fuse_w,
            &d_fused,
        )?;
        let d_rgb_feat = roi_pool_backward(&cache.rgb_pooled, &d_rgb_pooled, cache.rgb_shape)?;
        let d_flow_feat = roi_pool_backward(&cache.flow_pooled, &d_flow_pooled, cache.flow_shape)?;
        Ok(TwoStreamGrads {
            rgb: self.rgb.backward(&cache.rgb, &d_rgb_feat)?,
            flow: self.flow.backward(&cache.flow, &d_flow_feat)?,
            fuse_w: d_fuse_w,
            fuse_b: d_fuse_b,
            head,
        })
    }

    pub fn zero_grads(&self) -> TwoStreamGrads {
        let (a, b, h, w) = self.fuse_w.shape();
        TwoStreamGrads {
            rgb: self.rgb.zero_grads(),
            flow: self.flow.zero_grads(),
            fuse_w: Tensor4::zeros(a, b, h, w),
            fuse_b: vec![0.0; self.fuse_b.len()],
            head: self.head.zero_grads(),
        }
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (k, b) in self.rgb.kernels.iter().zip(&self.rgb.biases) {
            out.push(k.numel());
            out.push(b.len());
        }
        for (k, b) in self.flow.kernels.iter().zip(&self.flow.biases) {
            out.push(k.numel());
            out.push(b.len());
        }
        out.push(self.fuse_w.numel());
        out.push(self.fuse_b.len());
        out.extend([
            self.head.w1.len(),
            self.head.b1.len(),
            self.head.w2.len(),
            self.head.b2.len(),
        ]);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (k, b) in self.rgb.kernels.iter_mut().zip(self.rgb.biases.iter_mut()) {
            out.push(k.data_mut());
            out.push(b.as_mut_slice());
        }
        for (k, b) in self
            .flow
            .kernels
            .iter_mut()
            .zip(self.flow.biases.iter_mut())
        {
            out.push(k.data_mut());
            out.push(b.as_mut_slice());
        }
        out.push(self.fuse_w.data_mut());
        out.push(self.fuse_b.as_mut_slice());
        out.push(self.head.w1.as_mut_slice());
        out.push(self.head.b1.as_mut_slice());
        out.push(self.head.w2.as_mut_slice());
        out.push(self.head.b2.as_mut_slice());
        out
    }
}

impl TwoStreamGrads {
    pub fn add(&mut self, other: &TwoStreamGrads) {
        self.rgb.add(&other.rgb);
        self.flow.add(&other.flow);
        for (x, y) in self.fuse_w.data_mut().iter_mut().zip(other.fuse_w.data()) {
            *x += *y;
        }
        for (x, y) in self.fuse_b.iter_mut().zip(&other.fuse_b) {
            *x += *y;
        }
        self.head.add(&other.head);
    }

    pub fn scale(&mut self, s: f64) {
        self.rgb.scale(s);
        self.flow.scale(s);
        for v in self.fuse_w.data_mut() {
            *v *= s;
        }
        for v in &mut self.fuse_b {
            *v *= s;
        }
        self.head.scale(s);
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (k, b) in self.rgb.kernels.iter().zip(&self.rgb.biases) {
            out.push(k.data());
            out.push(b.as_slice());
        }
        for (k, b) in self.flow.kernels.iter().zip(&self.flow.biases) {
            out.push(k.data());
            out.push(b.as_slice());
        }
        out.push(self.fuse_w.data());
        out.push(&self.fuse_b);
        out.push(&self.head.w1);
        out.push(&self.head.b1);
        out.push(&self.head.w2);
        out.push(&self.head.b2);
        out
    }
}

// --- checkpoint io ----------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AURKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to validate a checkpoint against a run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub profile: String,
    pub dataset: String,
    pub dynamic: String,
    pub resolution: u32,
    pub channels: u32,
    pub epoch: u32,
    pub mean_pixel: Vec<f64>,
    /// Flattened (y_min, x_min, y_max, x_max) per box slot when the model
    /// was trained in mean-box mode; empty otherwise.
    pub mean_boxes: Vec<f64>,
}

/// Named tensors in canonical order plus optimizer velocities. Fixed
/// little-endian layout.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub names: Vec<String>,
    pub shapes: Vec<[u64; 4]>,
    pub values: Vec<Vec<f64>>,
    pub velocities: Option<Vec<Vec<f64>>>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend((s.len() as u16).to_le_bytes());
    buf.extend(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    buf.extend((vals.len() as u64).to_le_bytes());
    for v in vals {
        buf.extend(v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not utf-8".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend(CHECKPOINT_MAGIC);
        buf.extend(CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut buf, &self.meta.profile);
        put_str(&mut buf, &self.meta.dataset);
        put_str(&mut buf, &self.meta.dynamic);
        buf.extend(self.meta.resolution.to_le_bytes());
        buf.extend(self.meta.channels.to_le_bytes());
        buf.extend(self.meta.epoch.to_le_bytes());
        put_f64s(&mut buf, &self.meta.mean_pixel);
        put_f64s(&mut buf, &self.meta.mean_boxes);
        buf.extend((self.names.len() as u32).to_le_bytes());
        for i in 0..self.names.len() {
            put_str(&mut buf, &self.names[i]);
            for d in self.shapes[i] {
                buf.extend(d.to_le_bytes());
            }
            put_f64s(&mut buf, &self.values[i]);
        }
        match &self.velocities {
            Some(vels) => {
                buf.push(1);
                for v in vels {
                    put_f64s(&mut buf, v);
                }
            }
            None => buf.push(0),
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Version("not an aurk checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let profile = r.str()?;
        let dataset = r.str()?;
        let dynamic = r.str()?;
        let resolution = r.u32()?;
        let channels = r.u32()?;
        let epoch = r.u32()?;
        let mean_pixel = r.f64s()?;
        let mean_boxes = r.f64s()?;
        let count = r.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        let mut shapes = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            names.push(r.str()?);
            let mut shape = [0u64; 4];
            for d in &mut shape {
                *d = r.u64()?;
            }
            shapes.push(shape);
            values.push(r.f64s()?);
        }
        let velocities = if r.take(1)?[0] == 1 {
            let mut vels = Vec::with_capacity(count);
            for _ in 0..count {
                vels.push(r.f64s()?);
            }
            Some(vels)
        } else {
            None
        };
        Ok(Checkpoint {
            meta: CheckpointMeta {
                profile,
                dataset,
                dynamic,
                resolution,
                channels,
                epoch,
                mean_pixel,
                mean_boxes,
            },
            names,
            shapes,
            values,
            velocities,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::au_table::{AuBox, Side, Space};
    use crate::gradcheck::{max_rel_error, numerical_gradient};
    use crate::nn::sigmoid_ce_loss;

    fn feature_box(y0: f64, x0: f64, y1: f64, x1: f64) -> AuBox {
        AuBox::new(1, Side::Whole, (y0, x0, y1, x1), Space::Feature).unwrap()
    }

    #[test]
    fn static_model_shapes_are_consistent() {
        let profile = BackboneProfile::by_name("toy").unwrap();
        let mut rng = Rng::new(3);
        let model = StaticModel::init(&profile, 3, 6, &mut rng);
        let img = Tensor4::zeros(1, 3, 64, 64);
        let boxes = vec![feature_box(0.0, 0.0, 4.0, 4.0); 6];
        let (logits, _) = model.forward(&img, &boxes).unwrap();
        assert_eq!(logits.len(), 6 * 6);
        assert_eq!(profile.stride(), 4);
        assert_eq!(BackboneProfile::by_name("standard").unwrap().stride(), 16);
    }

    #[test]
    fn static_model_end_to_end_gradient_check() {
        let profile = BackboneProfile {
            name: "tiny".into(),
            convs: vec![ConvSpec {
                c_out: 2,
                kernel: 3,
                stride: 2,
                pad: 1,
            }],
            roi_size: 2,
            fc_hidden: 4,
        };
        let mut rng = Rng::new(11);
        let model = StaticModel::init(&profile, 1, 2, &mut rng);
        // distinct feature values keep the pooling argmax stable under eps
        let img = Tensor4::from_vec(
            1,
            1,
            8,
            8,
            (0..64).map(|i| (i * 37 % 64) as f64 * 0.5).collect(),
        )
        .unwrap();
        let boxes = vec![
            feature_box(0.0, 0.0, 4.0, 4.0),
            feature_box(1.0, 1.0, 3.5, 3.5),
        ];
        let targets = vec![1.0, 0.0, 0.0, 1.0];
        let loss_of = |m: &StaticModel| {
            let (logits, _) = m.forward(&img, &boxes).unwrap();
            sigmoid_ce_loss(&logits, &targets, 2, 2).unwrap().0
        };
        let (logits, cache) = model.forward(&img, &boxes).unwrap();
        let (_, d_logits) = sigmoid_ce_loss(&logits, &targets, 2, 2).unwrap();
        let grads = model.backward(&cache, &d_logits).unwrap();
        let w0: Vec<f64> = model.backbone.kernels[0].data().to_vec();
        let num = numerical_gradient(
            |vals| {
                let mut m = model.clone();
                m.backbone.kernels[0] = Tensor4::from_vec(2, 1, 3, 3, vals.to_vec()).unwrap();
                loss_of(&m)
            },
            &w0,
            1e-3,
        );
        assert!(max_rel_error(grads.backbone.kernels[0].data(), &num) < 1e-4);
        let num_w1 = numerical_gradient(
            |vals| {
                let mut m = model.clone();
                m.head.w1 = vals.to_vec();
                loss_of(&m)
            },
            &model.head.w1,
            1e-3,
        );
        assert!(max_rel_error(&grads.head.w1, &num_w1) < 1e-4);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let meta = CheckpointMeta {
            profile: "toy".into(),
            dataset: "synth".into(),
            dynamic: "none".into(),
            resolution: 128,
            channels: 3,
            epoch: 7,
            mean_pixel: vec![0.25, 0.5, 0.125],
            mean_boxes: vec![1.0, 2.0, 3.0, 4.0],
        };
        let ckpt = Checkpoint {
            meta: meta.clone(),
            names: vec!["conv0.w".into(), "conv0.b".into()],
            shapes: vec![[2, 1, 3, 3], [2, 1, 1, 1]],
            values: vec![
                (0..18).map(|i| i as f64 * 0.861).collect(),
                vec![0.5, -0.25],
            ],
            velocities: Some(vec![vec![0.0; 18], vec![0.125, 0.0]]),
        };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.names, ckpt.names);
        assert_eq!(back.values, ckpt.values);
        assert_eq!(back.velocities, ckpt.velocities);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn bad_magic_is_a_version_error() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTACKPT....").unwrap_err(),
            Error::Version(_)
        ));
    }

    #[test]
    fn two_stream_with_zero_flow_reproduces_static_logits_exactly() {
        let profile = BackboneProfile::by_name("toy").unwrap();
        let mut rng = Rng::new(5);
        let static_model = StaticModel::init(&profile, 3, 6, &mut rng);
        let mut ts = TwoStreamModel::from_static(&static_model, 20, &mut rng);
        ts.zero_flow_branch();
        let mut img = Tensor4::zeros(1, 3, 64, 64);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 31) % 97) as f64 / 97.0 - 0.5;
        }
        let flow = Tensor4::zeros(1, 20, 64, 64);
        let boxes = vec![
            feature_box(0.0, 0.0, 5.0, 5.0),
            feature_box(1.0, 2.0, 6.0, 7.0),
        ];
        let (static_logits, _) = static_model.forward(&img, &boxes).unwrap();
        let (fused_logits, _) = ts.forward(&img, &flow, &boxes).unwrap();
        assert_eq!(static_logits, fused_logits);
    }

    #[test]
    fn convlstm_head_row_count_follows_n_times_t() {
        let mut rng = Rng::new(9);
        let head = ConvLstmHead::init(2, 3, 4, 3, 2, 8, 5, &mut rng);
        let xs: Vec<Tensor4> = (0..3)
            .map(|_| {
                let mut t = Tensor4::zeros(2, 3, 2, 2);
                for v in t.data_mut() {
                    *v = rng.normal();
                }
                t
            })
            .collect();
        let (logits, _) = head.forward_line(0, &xs).unwrap();
        // N=2, T=3 -> 6 rows of L=5
        assert_eq!(logits.len(), 6 * 5);
    }

    #[test]
    fn convlstm_reshape_round_trips_every_element() {
        let mut rng = Rng::new(21);
        let head = ConvLstmHead::init(1, 2, 3, 3, 2, 4, 2, &mut rng);
        let xs: Vec<Tensor4> = (0..4)
            .map(|_| {
                let mut t = Tensor4::zeros(2, 2, 2, 2);
                for v in t.data_mut() {
                    *v = rng.normal();
                }
                t
            })
            .collect();
        let (hs, _) = sequence_forward(&xs, &head.cells[0]).unwrap();
        // reproduce the (N, T, C, H, W) -> (N*T, C*H*W) reshape, then read
        // every element back out
        let n = 2;
        let steps = 4;
        let per = hs[0].numel() / n;
        let mut flat = vec![0.0; n * steps * per];
        for (t, h) in hs.iter().enumerate() {
            for i in 0..n {
                let row = i * steps + t;
                flat[row * per..(row + 1) * per].copy_from_slice(&h.data()[i * per..(i + 1) * per]);
            }
        }
        for (t, h) in hs.iter().enumerate() {
            for i in 0..n {
                let row = i * steps + t;
                assert_eq!(
                    &flat[row * per..(row + 1) * per],
                    &h.data()[i * per..(i + 1) * per]
                );
            }
        }
    }

    #[test]
    fn single_step_head_equals_cell_plus_fc() {
        let mut rng = Rng::new(33);
        let head = ConvLstmHead::init(1, 2, 3, 3, 2, 4, 2, &mut rng);
        let mut x = Tensor4::zeros(1, 2, 2, 2);
        for v in x.data_mut() {
            *v = rng.normal();
        }
        let (logits, _) = head.forward_line(0, &[x.clone()]).unwrap();
        let (hs, _) = sequence_forward(&[x], &head.cells[0]).unwrap();
        let (direct, _) = head.head.forward(hs[0].data(), 1).unwrap();
        assert_eq!(logits, direct);
    }

    #[test]
    fn convlstm_line_gradients_match_finite_differences() {
        let mut rng = Rng::new(41);
        let head = ConvLstmHead::init(1, 2, 2, 3, 2, 4, 2, &mut rng);
        let xs: Vec<Tensor4> = (0..3)
            .map(|_| {
                let mut t = Tensor4::zeros(1, 2, 2, 2);
                for v in t.data_mut() {
                    *v = rng.normal();
                }
                t
            })
            .collect();
        let targets: Vec<f64> = (0..3 * 2).map(|i| f64::from(i % 2 == 0)).collect();
        let loss_of = |h: &ConvLstmHead, xs: &[Tensor4]| {
            let (logits, _) = h.forward_line(0, xs).unwrap();
            sigmoid_ce_loss(&logits, &targets, 3, 2).unwrap().0
        };
        let (logits, cache) = head.forward_line(0, &xs).unwrap();
        let (_, d_logits) = sigmoid_ce_loss(&logits, &targets, 3, 2).unwrap();
        let (d_xs, grads) = head.backward_line(0, &cache, &d_logits).unwrap();
        // input gradient at step 1
        let num_x = numerical_gradient(
            |vals| {
                let mut xs2 = xs.clone();
                xs2[1] = Tensor4::from_vec(1, 2, 2, 2, vals.to_vec()).unwrap();
                loss_of(&head, &xs2)
            },
            xs[1].data(),
            1e-3,
        );
        assert!(max_rel_error(d_xs[1].data(), &num_x) < 1e-4);
        // recurrent kernel gradient
        let num_wh = numerical_gradient(
            |vals| {
                let mut h2 = head.clone();
                h2.cells[0].w_h = Tensor4::from_vec(8, 2, 3, 3, vals.to_vec()).unwrap();
                loss_of(&h2, &xs)
            },
            head.cells[0].w_h.data(),
            1e-3,
        );
        assert!(max_rel_error(grads.w_h[0].data(), &num_wh) < 1e-4);
    }
}
