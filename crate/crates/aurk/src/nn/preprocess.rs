//! Input preprocessing: mean-pixel subtraction and horizontal mirroring.

use crate::au_table::{AuBox, Side};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Subtract a per-channel mean pixel in place.
pub fn subtract_mean(image: &mut Tensor4, mean_pixel: &[f64]) -> Result<()> {
    let (_, c, _, _) = image.shape();
    if mean_pixel.len() != c {
        return Err(Error::Shape(format!(
            "mean pixel has {} channels, image has {c}",
            mean_pixel.len()
        )));
    }
    let (n, _, h, w) = image.shape();
    for ni in 0..n {
        for ci in 0..c {
            let m = mean_pixel[ci];
            for y in 0..h {
                for x in 0..w {
                    let i = image.idx(ni, ci, y, x);
                    image.data_mut()[i] -= m;
                }
            }
        }
    }
    Ok(())
}

/// Horizontally flipped copy.
pub fn mirror_image(image: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = image.shape();
    let mut out = Tensor4::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(ni, ci, y, x, image.get(ni, ci, y, w - 1 - x));
                }
            }
        }
    }
    out
}

/// Mirror boxes across the vertical axis of an image of width `width`:
/// (y_min, x_min, y_max, x_max) -> (y_min, W - x_max, y_max, W - x_min).
/// The left/right boxes of each symmetric group swap places so the row
/// order stays canonical (left slot first, spatially left).
pub fn mirror_boxes(boxes: &[AuBox], width: f64) -> Vec<AuBox> {
    let mut out: Vec<AuBox> = boxes
        .iter()
        .map(|b| AuBox {
            x_min: width - b.x_max,
            x_max: width - b.x_min,
            ..*b
        })
        .collect();
    let mut i = 0;
    while i < out.len() {
        if out[i].side != Side::Whole {
            out.swap(i, i + 1);
            out[i].side = Side::Left;
            out[i + 1].side = Side::Right;
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

/// Standard input preprocessing: optional horizontal mirror of the image
/// and its boxes, then mean-pixel subtraction.
pub fn preprocess(
    image: &Tensor4,
    boxes: &[AuBox],
    mirror: bool,
    mean_pixel: &[f64],
) -> Result<(Tensor4, Vec<AuBox>)> {
    let (mut img, boxes) = if mirror {
        let w = image.w() as f64;
        (mirror_image(image), mirror_boxes(boxes, w))
    } else {
        (image.clone(), boxes.to_vec())
    };
    subtract_mean(&mut img, mean_pixel)?;
    Ok((img, boxes))
}
