//! Run-length-encoded mask archives.
//!
//! Layout (little-endian): magic `SPCM`, u32 version, u32 height, u32 width,
//! u32 mask count, then per mask a u32 run count followed by u32 run lengths.
//! Runs alternate unset/set starting with unset and cover the full raster.

use super::mask::Mask;
use crate::error::{FormatError, FormatErrorKind};
use crate::io::bytes::{Reader, Writer};

pub const MASK_ARCHIVE_MAGIC: &[u8; 4] = b"SPCM";
const VERSION: u32 = 1;

/// Encodes masks that all share one size.
pub fn encode_masks(masks: &[Mask], width: usize, height: usize) -> Vec<u8> {
    let mut w = Writer::default();
    w.raw(MASK_ARCHIVE_MAGIC);
    w.u32(VERSION);
    w.u32(height as u32);
    w.u32(width as u32);
    w.u32(masks.len() as u32);
    for m in masks {
        assert_eq!((m.width, m.height), (width, height), "mask size");
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &m.data {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        w.u32(runs.len() as u32);
        for r in runs {
            w.u32(r);
        }
    }
    w.buf
}

pub fn decode_masks(bytes: &[u8]) -> Result<Vec<Mask>, FormatError> {
    let mut r = Reader::new("SPCM", bytes);
    r.magic(MASK_ARCHIVE_MAGIC, "magic")?;
    let version = r.u32("version")?;
    if version != VERSION {
        r.offset -= 4;
        return Err(r.error("version", FormatErrorKind::UnsupportedVersion(version)));
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let count = r.count("mask count", 4)?;
    let n = width * height;
    let mut masks = Vec::with_capacity(count);
    for i in 0..count {
        let field = format!("mask[{i}].runs");
        let runs = r.count(&field, 4)?;
        let mut data = Vec::with_capacity(n);
        let mut value = false;
        for _ in 0..runs {
            let len = r.u32(&field)? as usize;
            if data.len() + len > n {
                return Err(r.error(
                    field,
                    FormatErrorKind::Invalid("runs exceed raster size".into()),
                ));
            }
            data.extend(std::iter::repeat_n(value, len));
            value = !value;
        }
        if data.len() != n {
            return Err(r.error(
                field,
                FormatErrorKind::Invalid(format!("runs cover {} of {n} pixels", data.len())),
            ));
        }
        masks.push(Mask {
            width,
            height,
            data,
        });
    }
    r.finish()?;
    Ok(masks)
}
