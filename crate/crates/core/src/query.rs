//! Rendering for inspection: color, per-pixel class labels and a highlight
//! overlay for a text query.

use crate::error::{Error, Result};
use crate::geom::Camera;
use crate::io::{encode_rgb8_png, Checkpoint};
use crate::losses::IGNORE_LABEL;
use crate::trainer::checkpoint_labels;

/// Pixels with lower accumulated alpha are left unlabeled.
pub const LABEL_ALPHA_CUTOFF: f64 = 0.5;
pub const HIGHLIGHT: [u8; 3] = [255, 48, 32];
pub const UNLABELED_COLOR: [u8; 3] = [0, 0, 0];
pub const DEFAULT_OVERLAY_ALPHA: f64 = 0.5;

const PALETTE: [[u8; 3]; 12] = [
    [141, 110, 99],
    [176, 190, 197],
    [255, 241, 118],
    [129, 199, 132],
    [100, 181, 246],
    [186, 104, 200],
    [255, 183, 77],
    [240, 98, 146],
    [77, 208, 225],
    [174, 213, 129],
    [121, 134, 203],
    [255, 138, 101],
];

/// Display color of class `c`.
pub fn class_color(c: usize) -> [u8; 3] {
    let base = PALETTE[c % PALETTE.len()];
    let cycle = (c / PALETTE.len()) as u8;
    base.map(|v| v.wrapping_sub(cycle.wrapping_mul(37)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRender {
    pub width: usize,
    pub height: usize,
    pub color: Vec<u8>,
    /// Argmax class per pixel; [`IGNORE_LABEL`] where alpha is below the cutoff.
    pub labels: Vec<u16>,
    pub label_color: Vec<u8>,
    pub query_class: Option<usize>,
    pub overlay: Option<Vec<u8>>,
}

impl QueryRender {
    pub fn color_png(&self) -> Result<Vec<u8>> {
        encode_rgb8_png(self.width, self.height, &self.color)
    }

    pub fn label_png(&self) -> Result<Vec<u8>> {
        encode_rgb8_png(self.width, self.height, &self.label_color)
    }

    pub fn overlay_png(&self) -> Result<Option<Vec<u8>>> {
        self.overlay
            .as_ref()
            .map(|o| encode_rgb8_png(self.width, self.height, o))
            .transpose()
    }

    /// Pixels highlighted for the query.
    pub fn query_mask(&self) -> Vec<bool> {
        match self.query_class {
            Some(c) => self.labels.iter().map(|&l| l as usize == c).collect(),
            None => vec![false; self.labels.len()],
        }
    }
}

/// Renders `ckpt` at `cam`. A `query` must resolve to a class of the
/// checkpoint's text bank.
pub fn render_query(
    ckpt: &Checkpoint,
    cam: &Camera,
    query: Option<&str>,
    overlay_alpha: f64,
    background: [f64; 3],
) -> Result<QueryRender> {
    let bank = ckpt
        .bank
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("checkpoint has no text bank".into()))?;
    if !(0.0..=1.0).contains(&overlay_alpha) {
        return Err(Error::InvalidArgument(format!(
            "overlay_alpha must be in [0, 1], got {overlay_alpha}"
        )));
    }
    let query_class = match query {
        None => None,
        Some(q) => Some(bank.resolve(q).ok_or_else(|| Error::UnknownQuery(q.to_string()))?),
    };
    let (out, mut labels) = checkpoint_labels(ckpt, cam, bank, background)?;
    for (l, &a) in labels.iter_mut().zip(&out.alpha.data) {
        if a < LABEL_ALPHA_CUTOFF {
            *l = IGNORE_LABEL;
        }
    }
    let color = out.color.to_rgb8();
    let label_color = labels
        .iter()
        .flat_map(|&l| {
            if l == IGNORE_LABEL {
                UNLABELED_COLOR
            } else {
                class_color(l as usize)
            }
        })
        .collect();
    let overlay = query_class.map(|c| {
        let mut o = color.clone();
        for (p, &l) in labels.iter().enumerate() {
            if l as usize == c {
                for k in 0..3 {
                    let v = o[3 * p + k] as f64 * (1.0 - overlay_alpha) + HIGHLIGHT[k] as f64 * overlay_alpha;
                    o[3 * p + k] = v.round() as u8;
                }
            }
        }
        o
    });
    Ok(QueryRender {
        width: out.width,
        height: out.height,
        color,
        labels,
        label_color,
        query_class,
        overlay,
    })
}
