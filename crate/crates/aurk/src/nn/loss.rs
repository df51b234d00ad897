//! Multi-label sigmoid cross-entropy over an R x L logit matrix.
//!
//! loss = -(1/R) * sum_r sum_l [ y log sigma(z) + (1-y) log(1 - sigma(z)) ]
//! computed in the overflow-free form max(z,0) - z*y + ln(1 + exp(-|z|)),
//! gradient (sigma(z) - y) / R. Entries zeroed by the space constraint
//! simply carry the label 0.

use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Returns (loss, gradient w.r.t. logits).
pub fn sigmoid_ce_loss(
    logits: &[f64],
    targets: &[f64],
    rows: usize,
    cols: usize,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != rows * cols || targets.len() != rows * cols {
        return Err(Error::Shape(format!(
            "loss: logits {} targets {} for {rows}x{cols}",
            logits.len(),
            targets.len()
        )));
    }
    if rows == 0 {
        return Err(Error::Shape("loss needs at least one row".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let inv_r = 1.0 / rows as f64;
    for (i, (&z, &y)) in logits.iter().zip(targets).enumerate() {
        if !z.is_finite() {
            return Err(Error::Numeric(format!("non-finite logit at {i}")));
        }
        debug_assert!((0.0..=1.0).contains(&y), "target out of [0,1]");
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad[i] = (sigmoid(z) - y) * inv_r;
    }
    Ok((loss * inv_r, grad))
}
