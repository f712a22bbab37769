//! Photometric loss `(1 − λ)·L1 + λ·(1 − SSIM)`.

use super::ssim::ssim_with_grad;
use crate::buffer::ImageBuf;
use crate::error::{Error, Result};

pub const LAMBDA_SSIM: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct ColorLoss {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
    /// dL/d(rendered)
    pub grad: ImageBuf,
}

pub fn loss_color(rendered: &ImageBuf, gt: &ImageBuf) -> Result<ColorLoss> {
    if !rendered.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            context: "color loss images",
            expected: gt.data.len(),
            actual: rendered.data.len(),
        });
    }
    let n = rendered.data.len() as f64;
    let mut grad = ImageBuf::zeros(rendered.width, rendered.height, rendered.channels);
    let mut l1 = 0.0;
    for ((g, &r), &t) in grad.data.iter_mut().zip(&rendered.data).zip(&gt.data) {
        let d = r - t;
        l1 += d.abs();
        let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        *g = (1.0 - LAMBDA_SSIM) * sign / n;
    }
    l1 /= n;
    let (s, sg) = ssim_with_grad(rendered, gt, true);
    grad.add_scaled(&sg.unwrap(), -LAMBDA_SSIM);
    Ok(ColorLoss {
        value: (1.0 - LAMBDA_SSIM) * l1 + LAMBDA_SSIM * (1.0 - s),
        l1,
        ssim: s,
        grad,
    })
}
