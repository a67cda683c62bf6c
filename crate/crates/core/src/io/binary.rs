//! Little-endian primitive readers/writers with byte-offset error reporting.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

pub struct ByteWriter<W: Write> {
    inner: W,
}

impl<W: Write> ByteWriter<W> {
    pub fn new(inner: W) -> Self {
        ByteWriter { inner }
    }

    fn put(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::Format(format!("write failed: {e}")))
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.put(b)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.put(&[v])
    }

    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f32s(&mut self, values: impl Iterator<Item = f32>) -> Result<()> {
        let mut buf = Vec::with_capacity(4096);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
            if buf.len() >= 4096 {
                self.put(&buf)?;
                buf.clear();
            }
        }
        self.put(&buf)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner
            .flush()
            .map_err(|e| Error::Format(format!("flush failed: {e}")))
    }
}

pub struct ByteReader<R: Read> {
    inner: R,
    pos: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R) -> Self {
        ByteReader { inner, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    /// Fills `buf`; on a short read reports how far the stream got.
    pub fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Format(format!(
                        "truncated {what} at byte {}",
                        self.pos + filled as u64
                    )))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::Format(format!("read failed: {e}"))),
            }
        }
        self.pos += buf.len() as u64;
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let b: [u8; 1] = read_exact_or(self, "header")?;
        Ok(b[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(read_exact_or(self, "header")?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(read_exact_or(self, "header")?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(read_exact_or(self, "header")?))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.fill(&mut bytes, "payload")?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// True when no bytes remain.
    pub fn at_end(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(true),
                Ok(_) => return Ok(false),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::Format(format!("read failed: {e}"))),
            }
        }
    }
}

pub fn read_exact_or<R: Read, const N: usize>(r: &mut ByteReader<R>, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.fill(&mut buf, what)?;
    Ok(buf)
}
