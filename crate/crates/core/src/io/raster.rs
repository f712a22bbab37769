//! "SPCL" label maps and "SPCF" raw feature rasters.

use std::path::Path;

use super::bytes::{Reader, Writer};
use super::{read_file, write_file};
use crate::error::{Error, FormatError, FormatErrorKind, Result};

const LABEL_MAGIC: &[u8; 4] = b"SPCL";
const FEATURE_MAGIC: &[u8; 4] = b"SPCF";

/// Label map: magic, u16 H, u16 W, then H·W little-endian u16 labels.
pub fn encode_labels(width: usize, height: usize, labels: &[u16]) -> Result<Vec<u8>> {
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("label map {width}×{height} too large")));
    }
    if labels.len() != width * height {
        return Err(Error::ShapeMismatch {
            context: "label map",
            expected: width * height,
            actual: labels.len(),
        });
    }
    let mut w = Writer::default();
    w.raw(LABEL_MAGIC);
    w.u16(height as u16);
    w.u16(width as u16);
    for &l in labels {
        w.u16(l);
    }
    Ok(w.buf)
}

/// Returns `(width, height, labels)`.
pub fn decode_labels(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), FormatError> {
    let mut r = Reader::new("SPCL", bytes);
    r.magic(LABEL_MAGIC, "magic")?;
    let h = r.u16("height")? as usize;
    let w = r.u16("width")? as usize;
    let raw = r.bytes(w * h * 2, "labels")?;
    let labels = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    r.finish()?;
    Ok((w, h, labels))
}

pub fn write_labels(path: &Path, width: usize, height: usize, labels: &[u16]) -> Result<()> {
    write_file(path, &encode_labels(width, height, labels)?)
}

pub fn read_labels(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    Ok(decode_labels(&read_file(path)?)?)
}

/// Externally produced per-pixel features, `H × W × C` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn encode_features(raster: &FeatureRaster) -> Result<Vec<u8>> {
    let n = raster.width * raster.height * raster.channels;
    if raster.data.len() != n {
        return Err(Error::ShapeMismatch {
            context: "feature raster",
            expected: n,
            actual: raster.data.len(),
        });
    }
    let mut w = Writer::default();
    w.raw(FEATURE_MAGIC);
    w.u32(raster.height as u32);
    w.u32(raster.width as u32);
    w.u32(raster.channels as u32);
    w.f32s(&raster.data);
    Ok(w.buf)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureRaster, FormatError> {
    let mut r = Reader::new("SPCF", bytes);
    r.magic(FEATURE_MAGIC, "magic")?;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let channels = r.u32("channels")? as usize;
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .filter(|v| v.saturating_mul(4) <= r.remaining())
        .ok_or_else(|| r.error("data", FormatErrorKind::Truncated))?;
    let mut data = Vec::with_capacity(n);
    r.f32_into(&mut data, n, "data")?;
    r.finish()?;
    Ok(FeatureRaster {
        width,
        height,
        channels,
        data,
    })
}
