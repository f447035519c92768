//! Little-endian cursor shared by the VPRF and VPRI codecs.

use crate::error::{Error, Result};

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated {
            expected: usize::MAX,
            actual: self.buf.len(),
        })?;
        if end > self.buf.len() {
            return Err(Error::Truncated {
                expected: end,
                actual: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    /// Fails with the full expected length if fewer than `n` bytes remain.
    pub(crate) fn require(&self, n: usize) -> Result<()> {
        let expected = self.pos.saturating_add(n);
        if expected > self.buf.len() {
            return Err(Error::Truncated {
                expected,
                actual: self.buf.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        if self.buf.len() < 4 || self.buf[..4] != expected {
            return Err(Error::BadMagic {
                expected,
                found: self.buf[..self.buf.len().min(4)].to_vec(),
            });
        }
        self.pos = 4;
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(self.take(8)?);
        Ok(f64::from_le_bytes(raw))
    }

    pub(crate) fn string(&mut self, len: usize) -> Result<String> {
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|e| Error::InvalidFeatures(format!("image id is not UTF-8: {e}")))
    }

    pub(crate) fn finish(self) -> Result<()> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(Error::TrailingBytes { count: rest });
        }
        Ok(())
    }
}
