//! Little-endian binary helpers shared by the checkpoint and index formats.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RSEL";

/// Kind tag stored after the magic bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    Encoder = 1,
    Map = 2,
    Index = 3,
}

impl ArtifactKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::Encoder),
            2 => Ok(Self::Map),
            3 => Ok(Self::Index),
            other => Err(Error::format("artifact", format!("unknown kind tag {other}"))),
        }
    }
}

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_header(kind: ArtifactKind, version: u32) -> Self {
        let mut w = Self::default();
        w.bytes(MAGIC);
        w.u32(version);
        w.u8(kind as u8);
        w
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.bytes(&v.to_le_bytes());
        }
    }

    /// Length-prefixed UTF-8.
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    /// Checks magic, kind and version; returns the version.
    pub fn header(&mut self, kind: ArtifactKind, max_version: u32) -> Result<u32> {
        if self.take(4)? != MAGIC {
            return Err(Error::format(self.what, "bad magic bytes"));
        }
        let version = self.u32()?;
        if version == 0 || version > max_version {
            return Err(Error::format(self.what, format!("unsupported version {version}")));
        }
        let found = ArtifactKind::from_u8(self.u8()?)?;
        if found != kind {
            return Err(Error::format(
                self.what,
                format!("expected {kind:?} artifact, found {found:?}"),
            ));
        }
        Ok(version)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.what, "unexpected end of data"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.what, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.what, "invalid utf-8"))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.what, "trailing bytes"));
        }
        Ok(())
    }
}
