//! Little-endian cursor helpers shared by the binary formats.

use crate::error::{FormatError, FormatErrorKind};

pub(crate) struct Reader<'a> {
    format: &'static str,
    data: &'a [u8],
    pub offset: usize,
}

impl<'a> Reader<'a> {
    pub fn new(format: &'static str, data: &'a [u8]) -> Self {
        Self {
            format,
            data,
            offset: 0,
        }
    }

    pub fn error(&self, field: impl Into<String>, kind: FormatErrorKind) -> FormatError {
        FormatError {
            format: self.format,
            field: field.into(),
            offset: self.offset,
            kind,
        }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.offset
    }

    pub fn bytes(&mut self, n: usize, field: &str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(self.error(field, FormatErrorKind::Truncated));
        }
        let s = &self.data[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4], field: &str) -> Result<(), FormatError> {
        let start = self.offset;
        let got = self.bytes(4, field)?;
        if got != expected {
            self.offset = start;
            return Err(self.error(field, FormatErrorKind::BadMagic));
        }
        Ok(())
    }

    pub fn u16(&mut self, field: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.bytes(2, field)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, field: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.bytes(4, field)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.bytes(8, field)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, field: &str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.bytes(4, field)?.try_into().unwrap()))
    }

    pub fn f32_into(&mut self, out: &mut Vec<f32>, n: usize, field: &str) -> Result<(), FormatError> {
        let raw = self.bytes(n * 4, field)?;
        out.extend(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        );
        Ok(())
    }

    pub fn f32_array<const K: usize>(&mut self, field: &str) -> Result<[f32; K], FormatError> {
        let raw = self.bytes(K * 4, field)?;
        Ok(std::array::from_fn(|i| {
            f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().unwrap())
        }))
    }

    /// Reads a `u32` count and checks it against the bytes left, given a
    /// minimum encoded size per element.
    pub fn count(&mut self, field: &str, min_elem_bytes: usize) -> Result<usize, FormatError> {
        let start = self.offset;
        let n = self.u32(field)? as usize;
        if n.saturating_mul(min_elem_bytes) > self.remaining() {
            self.offset = start;
            return Err(self.error(field, FormatErrorKind::Truncated));
        }
        Ok(n)
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(self.error(
                "end of data",
                FormatErrorKind::Invalid(format!("{} trailing bytes", self.remaining())),
            ));
        }
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u16(&mut self, v: u16) {
        self.raw(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.raw(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.raw(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.raw(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.f32(*x);
        }
    }
}
