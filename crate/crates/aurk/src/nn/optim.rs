//! Momentum SGD with weight decay, and the step learning-rate schedule.

use crate::error::{Error, Result};

/// Classical (heavy-ball) momentum with weight decay folded into the
/// gradient:
///
/// v <- mu * v - lr * (g + wd * p);  p <- p + v
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, weight_decay: f64, param_sizes: &[usize]) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            velocity: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params / {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(Error::Shape("optimizer state size mismatch".into()));
            }
            for i in 0..p.len() {
                v[i] = self.momentum * v[i] - lr * (g[i] + self.weight_decay * p[i]);
                p[i] += v[i];
            }
        }
        Ok(())
    }
}

/// lr(epoch) = base * 0.1^floor(epoch / 10): 0.001 at epoch 0, reduced by a
/// factor of 0.1 after every 10 epochs.
pub fn lr_schedule(base_lr: f64, epoch: u32) -> f64 {
    base_lr * 0.1f64.powi((epoch / 10) as i32)
}
