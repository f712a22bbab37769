//! "SPCG" checkpoints: header, per-Gaussian records, then tagged sections.
//!
//! Layout (little-endian): magic, u32 version, u32 N, u32 D, u32 sh_degree,
//! N records of position f32×3, SH f32×3·(deg+1)², opacity_logit f32,
//! log_scale f32×3, quaternion f32×4, feature f32×D. Each section is a
//! 4-byte tag, a u32 payload length and the payload:
//! `HEAD` semantic heads, `BANK` text bank, `CONF` JSON config echo,
//! `ITER` u64 iteration, `LABL` u16 per-Gaussian class labels. A final
//! empty `END.` section marks a complete file.

use std::path::Path;

use super::bytes::{Reader, Writer};
use super::{read_file, write_file};
use crate::error::{Error, FormatError, FormatErrorKind, Result};
use crate::geom::{Gaussian, GaussianSet};
use crate::losses::{LinearMap, SemanticHeads, TextBank};
use crate::sgi::LayoutPoints;
use crate::sh;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SPCG";
const SECTION_ORDER: [&[u8; 4]; 5] = [b"HEAD", b"BANK", b"CONF", b"ITER", b"LABL"];
const END_TAG: &[u8; 4] = b"END.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scene: GaussianSet,
    pub heads: Option<SemanticHeads>,
    pub bank: Option<TextBank>,
    pub config: Option<serde_json::Value>,
    pub iteration: u64,
    /// Per-Gaussian class labels (teacher scenes).
    pub labels: Option<Vec<u16>>,
}

impl Checkpoint {
    pub fn from_scene(scene: GaussianSet) -> Self {
        Self {
            scene,
            heads: None,
            bank: None,
            config: None,
            iteration: 0,
            labels: None,
        }
    }
}

fn write_linear(w: &mut Writer, m: &LinearMap) {
    w.u32(m.in_dim as u32);
    w.u32(m.out_dim as u32);
    w.f32s(&m.weight);
    w.f32s(&m.bias);
}

fn read_linear(r: &mut Reader, name: &str) -> Result<LinearMap, FormatError> {
    let in_dim = r.u32(&format!("{name}.in_dim"))? as usize;
    let out_dim = r.u32(&format!("{name}.out_dim"))? as usize;
    let n = in_dim
        .checked_mul(out_dim)
        .filter(|n| n.saturating_add(out_dim).saturating_mul(4) <= r.remaining())
        .ok_or_else(|| r.error(format!("{name}.weight"), FormatErrorKind::Truncated))?;
    let mut weight = Vec::with_capacity(n);
    r.f32_into(&mut weight, n, &format!("{name}.weight"))?;
    let mut bias = Vec::with_capacity(out_dim);
    r.f32_into(&mut bias, out_dim, &format!("{name}.bias"))?;
    Ok(LinearMap {
        in_dim,
        out_dim,
        weight,
        bias,
    })
}

fn section(w: &mut Writer, tag: &[u8; 4], payload: Vec<u8>) {
    w.raw(tag);
    w.u32(payload.len() as u32);
    w.raw(&payload);
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let s = &ckpt.scene;
    s.validate()?;
    if let Some(labels) = &ckpt.labels {
        if labels.len() != s.len() {
            return Err(Error::ShapeMismatch {
                context: "checkpoint labels",
                expected: s.len(),
                actual: labels.len(),
            });
        }
    }
    let mut w = Writer::default();
    w.raw(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(s.len() as u32);
    w.u32(s.feature_dim as u32);
    w.u32(s.sh_degree as u32);
    for i in 0..s.len() {
        w.f32s(&s.positions[i]);
        w.f32s(s.sh(i));
        w.f32(s.opacity_logits[i]);
        w.f32s(&s.log_scales[i]);
        w.f32s(&s.rotations[i]);
        w.f32s(s.feature(i));
    }
    if let Some(h) = &ckpt.heads {
        let mut p = Writer::default();
        write_linear(&mut p, &h.omega_f);
        write_linear(&mut p, &h.omega_s);
        write_linear(&mut p, &h.w_psi);
        section(&mut w, b"HEAD", p.buf);
    }
    if let Some(b) = &ckpt.bank {
        let mut p = Writer::default();
        p.u32(b.len() as u32);
        p.u32(b.dim as u32);
        for name in &b.names {
            p.u32(name.len() as u32);
            p.raw(name.as_bytes());
        }
        p.f32s(&b.embeddings);
        section(&mut w, b"BANK", p.buf);
    }
    if let Some(c) = &ckpt.config {
        let text = serde_json::to_string(c).map_err(|e| Error::json("checkpoint config", e))?;
        section(&mut w, b"CONF", text.into_bytes());
    }
    let mut p = Writer::default();
    p.u64(ckpt.iteration);
    section(&mut w, b"ITER", p.buf);
    if let Some(labels) = &ckpt.labels {
        let mut p = Writer::default();
        for &l in labels {
            p.u16(l);
        }
        section(&mut w, b"LABL", p.buf);
    }
    section(&mut w, END_TAG, Vec::new());
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader::new("SPCG", bytes);
    r.magic(MAGIC, "magic")?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.offset -= 4;
        return Err(r.error("version", FormatErrorKind::UnsupportedVersion(version)));
    }
    let n = r.u32("num_gaussians")? as usize;
    let d = r.u32("feature_dim")? as usize;
    let degree = r.u32("sh_degree")? as usize;
    if degree > sh::MAX_DEGREE {
        r.offset -= 4;
        return Err(r.error("sh_degree", FormatErrorKind::Invalid(format!("degree {degree} > 3"))));
    }
    let stride = sh::num_coeffs(degree) * 3;
    let record = 4 * (3 + stride + 1 + 3 + 4 + d);
    if n.saturating_mul(record) > r.remaining() {
        let field = format!("gaussian[{}]", r.remaining() / record.max(1));
        return Err(r.error(field, FormatErrorKind::Truncated));
    }
    let mut scene = GaussianSet::new(degree, d);
    let mut sh_buf = Vec::with_capacity(stride);
    let mut feat = Vec::with_capacity(d);
    for i in 0..n {
        let position = r.f32_array::<3>(&format!("gaussian[{i}].position"))?;
        sh_buf.clear();
        r.f32_into(&mut sh_buf, stride, &format!("gaussian[{i}].sh"))?;
        let opacity_logit = r.f32(&format!("gaussian[{i}].opacity_logit"))?;
        let log_scale = r.f32_array::<3>(&format!("gaussian[{i}].log_scale"))?;
        let rotation = r.f32_array::<4>(&format!("gaussian[{i}].rotation"))?;
        feat.clear();
        r.f32_into(&mut feat, d, &format!("gaussian[{i}].feature"))?;
        scene.push(&Gaussian {
            position,
            sh: sh_buf.clone(),
            opacity_logit,
            log_scale,
            rotation,
            feature: feat.clone(),
        });
    }
    let mut ckpt = Checkpoint::from_scene(scene);
    let mut last: Option<usize> = None;
    loop {
        let tag_offset = r.offset;
        let tag: [u8; 4] = r.bytes(4, "section tag")?.try_into().unwrap();
        let tag_name = String::from_utf8_lossy(&tag).into_owned();
        if &tag == END_TAG {
            if r.u32("END.length")? != 0 {
                r.offset -= 4;
                return Err(r.error("END.length", FormatErrorKind::Invalid("end marker carries data".into())));
            }
            r.finish()?;
            break;
        }
        let Some(order) = SECTION_ORDER.iter().position(|t| **t == tag) else {
            r.offset = tag_offset;
            return Err(r.error("section tag", FormatErrorKind::Invalid(format!("unknown section `{tag_name}`"))));
        };
        if last.is_some_and(|l| l >= order) {
            r.offset = tag_offset;
            return Err(r.error(
                "section tag",
                FormatErrorKind::Invalid(format!("section `{tag_name}` duplicated or out of order")),
            ));
        }
        last = Some(order);
        let len = r.count(&format!("{tag_name}.length"), 1)?;
        let payload = r.bytes(len, &format!("{tag_name}.payload"))?;
        let base = r.offset - len;
        let mut p = Reader::new("SPCG", payload);
        let rebase = |mut e: FormatError| {
            e.offset += base;
            e
        };
        match &tag {
            b"HEAD" => {
                let omega_f = read_linear(&mut p, "HEAD.omega_f").map_err(rebase)?;
                let omega_s = read_linear(&mut p, "HEAD.omega_s").map_err(rebase)?;
                let w_psi = read_linear(&mut p, "HEAD.w_psi").map_err(rebase)?;
                ckpt.heads = Some(SemanticHeads {
                    omega_f,
                    omega_s,
                    w_psi,
                });
            }
            b"BANK" => {
                let m = p.count("BANK.classes", 4).map_err(rebase)?;
                let dim = p.u32("BANK.dim").map_err(rebase)? as usize;
                let mut names = Vec::with_capacity(m);
                for k in 0..m {
                    let field = format!("BANK.names[{k}]");
                    let l = p.count(&field, 1).map_err(rebase)?;
                    let raw = p.bytes(l, &field).map_err(rebase)?;
                    let name = String::from_utf8(raw.to_vec()).map_err(|_| {
                        rebase(p.error(&field, FormatErrorKind::Invalid("not UTF-8".into())))
                    })?;
                    names.push(name);
                }
                let count = m.saturating_mul(dim);
                if count.saturating_mul(4) > p.remaining() {
                    return Err(rebase(p.error("BANK.embeddings", FormatErrorKind::Truncated)));
                }
                let mut embeddings = Vec::with_capacity(count);
                p.f32_into(&mut embeddings, count, "BANK.embeddings").map_err(rebase)?;
                ckpt.bank = Some(TextBank {
                    names,
                    dim,
                    embeddings,
                });
            }
            b"CONF" => {
                let value = serde_json::from_slice(payload).map_err(|e| {
                    rebase(p.error("CONF", FormatErrorKind::Invalid(e.to_string())))
                })?;
                ckpt.config = Some(value);
                p.offset = payload.len();
            }
            b"ITER" => ckpt.iteration = p.u64("ITER.iteration").map_err(rebase)?,
            b"LABL" => {
                let raw = p.bytes(n * 2, "LABL.labels").map_err(rebase)?;
                ckpt.labels = Some(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect());
            }
            _ => unreachable!(),
        }
        p.finish().map_err(rebase)?;
    }
    Ok(ckpt)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(decode_checkpoint(&read_file(path)?)?)
}

/// Layout points as a degree-0 checkpoint with neutral shape parameters.
pub fn encode_layout(layout: &LayoutPoints) -> Result<Vec<u8>> {
    let d = layout.feature_dim;
    if layout.sh_dc.len() != layout.len() || layout.features.len() != layout.len() * d {
        return Err(Error::InvalidArgument("layout arrays differ in length".into()));
    }
    let mut scene = GaussianSet::new(0, d);
    for i in 0..layout.len() {
        scene.push(&Gaussian {
            position: layout.positions[i],
            sh: layout.sh_dc[i].to_vec(),
            opacity_logit: 0.0,
            log_scale: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            feature: layout.features[i * d..(i + 1) * d].to_vec(),
        });
    }
    encode_checkpoint(&Checkpoint::from_scene(scene))
}

pub fn decode_layout(bytes: &[u8]) -> Result<LayoutPoints, FormatError> {
    let ckpt = decode_checkpoint(bytes)?;
    if ckpt.scene.sh_degree != 0 {
        return Err(FormatError {
            format: "SPCG",
            field: "sh_degree".into(),
            offset: 16,
            kind: FormatErrorKind::Invalid("layout points must have SH degree 0".into()),
        });
    }
    Ok(crate::sgi::export_layout(&ckpt.scene))
}

pub fn save_layout(path: &Path, layout: &LayoutPoints) -> Result<()> {
    write_file(path, &encode_layout(layout)?)
}

pub fn load_layout(path: &Path) -> Result<LayoutPoints> {
    Ok(decode_layout(&read_file(path)?)?)
}
