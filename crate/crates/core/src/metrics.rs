//! Image and segmentation quality metrics.

use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuf;
use crate::error::{Error, Result};
use crate::losses::IGNORE_LABEL;

pub use crate::losses::ssim::ssim;

pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at 99 dB.
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> f64 {
    assert!(a.same_shape(b), "psnr inputs differ in shape");
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Segmentation scores in percent plus the confusion matrix
/// (`confusion[gt][pred]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub miou: f64,
    pub macc: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Confusion matrix over pixels whose ground truth is not [`IGNORE_LABEL`].
pub fn confusion_matrix(pred: &[u16], gt: &[u16], m: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            context: "label maps",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let mut conf = vec![vec![0u64; m]; m];
    for (&p, &g) in pred.iter().zip(gt) {
        if g == IGNORE_LABEL {
            continue;
        }
        if p as usize >= m || g as usize >= m {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {m} classes",
                p.max(g)
            )));
        }
        conf[g as usize][p as usize] += 1;
    }
    Ok(conf)
}

/// mIoU over classes present in prediction or ground truth; mAcc over
/// classes present in ground truth.
pub fn scores_from_confusion(conf: &[Vec<u64>]) -> (f64, f64) {
    let m = conf.len();
    let (mut iou_sum, mut iou_n, mut acc_sum, mut acc_n) = (0.0, 0usize, 0.0, 0usize);
    for c in 0..m {
        let tp = conf[c][c];
        let gt: u64 = conf[c].iter().sum();
        let pred: u64 = (0..m).map(|r| conf[r][c]).sum();
        let union = gt + pred - tp;
        if union > 0 {
            iou_sum += tp as f64 / union as f64;
            iou_n += 1;
        }
        if gt > 0 {
            acc_sum += tp as f64 / gt as f64;
            acc_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { 100.0 * s / n as f64 };
    (mean(iou_sum, iou_n), mean(acc_sum, acc_n))
}

pub fn miou_macc(pred: &[u16], gt: &[u16], m: usize) -> Result<SegmentationScores> {
    let confusion = confusion_matrix(pred, gt, m)?;
    let (miou, macc) = scores_from_confusion(&confusion);
    Ok(SegmentationScores {
        miou,
        macc,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
    pub miou: f64,
    pub macc: f64,
}

/// Per-view and aggregate scores. Means of PSNR and SSIM are per-view
/// averages; mIoU and mAcc are computed from the pooled confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScores>,
    pub psnr: f64,
    pub ssim: f64,
    pub miou: f64,
    pub macc: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Accumulates views into an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct EvalAccumulator {
    classes: usize,
    views: Vec<ViewScores>,
    confusion: Vec<Vec<u64>>,
}

impl EvalAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            views: Vec::new(),
            confusion: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(
        &mut self,
        view: impl Into<String>,
        color: &ImageBuf,
        gt_color: &ImageBuf,
        pred_labels: &[u16],
        gt_labels: &[u16],
    ) -> Result<()> {
        let rendered = color.clamped01();
        let scores = miou_macc(pred_labels, gt_labels, self.classes)?;
        for (row, add) in self.confusion.iter_mut().zip(&scores.confusion) {
            for (a, b) in row.iter_mut().zip(add) {
                *a += b;
            }
        }
        self.views.push(ViewScores {
            view: view.into(),
            psnr: psnr(&rendered, gt_color),
            ssim: ssim(&rendered, gt_color),
            miou: scores.miou,
            macc: scores.macc,
        });
        Ok(())
    }

    pub fn finish(self) -> EvalReport {
        let n = self.views.len().max(1) as f64;
        let (miou, macc) = scores_from_confusion(&self.confusion);
        EvalReport {
            psnr: self.views.iter().map(|v| v.psnr).sum::<f64>() / n,
            ssim: self.views.iter().map(|v| v.ssim).sum::<f64>() / n,
            miou,
            macc,
            confusion: self.confusion,
            views: self.views,
        }
    }
}
