//! Little-endian helpers shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub(crate) fn new(inner: W) -> Self {
        Self { inner }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub(crate) fn u16s(&mut self, vs: &[u16]) -> Result<()> {
        let buf: Vec<u8> = vs.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.bytes(&buf)
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u32s(&mut self, vs: &[u32]) -> Result<()> {
        let buf: Vec<u8> = vs.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.bytes(&buf)
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u64s(&mut self, vs: &[u64]) -> Result<()> {
        let buf: Vec<u8> = vs.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.bytes(&buf)
    }

    pub(crate) fn f32s(&mut self, vs: &[f32]) -> Result<()> {
        let buf: Vec<u8> = vs.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.bytes(&buf)
    }

    pub(crate) fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner }
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated while reading {what}")),
            _ => Error::Io(e),
        })
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        self.fill(&mut found, "magic")?;
        if &found != expected {
            return Err(Error::BadMagic {
                expected: *expected,
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn u16s(&mut self, n: usize, what: &str) -> Result<Vec<u16>> {
        let raw = self.bytes(checked(n, 2)?, what)?;
        Ok(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    }

    pub(crate) fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let raw = self.bytes(checked(n, 4)?, what)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn u64s(&mut self, n: usize, what: &str) -> Result<Vec<u64>> {
        let raw = self.bytes(checked(n, 8)?, what)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.bytes(checked(n, 4)?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// Reads a `u64` if any bytes remain; `None` at a clean end of stream.
    pub(crate) fn optional_u64(&mut self, what: &str) -> Result<Option<u64>> {
        let mut b = [0u8; 8];
        let mut got = 0;
        while got < b.len() {
            match self.inner.read(&mut b[got..])? {
                0 => break,
                n => got += n,
            }
        }
        match got {
            0 => Ok(None),
            8 => Ok(Some(u64::from_le_bytes(b))),
            _ => Err(Error::Format(format!("truncated while reading {what}"))),
        }
    }

    /// Errors unless the stream is exhausted.
    pub(crate) fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

fn checked(n: usize, width: usize) -> Result<usize> {
    // Guards against absurd header counts before allocating.
    const LIMIT: usize = 1 << 36;
    n.checked_mul(width)
        .filter(|&b| b <= LIMIT)
        .ok_or_else(|| Error::Format(format!("element count {n} too large")))
}
