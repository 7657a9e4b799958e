//! Shared layout for the binary containers: 4-byte magic, `u16` version,
//! `u32` length-prefixed UTF-8 JSON header, then raw little-endian `f64`s.

use std::io::Write;

use crate::error::{Error, Result};

pub(crate) fn write_container<W: Write>(
    w: &mut W,
    magic: &[u8; 4],
    version: u16,
    header: &serde_json::Value,
    arrays: &[&[f64]],
) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let len =
        u32::try_from(json.len()).map_err(|_| Error::Config("header exceeds 4 GiB".into()))?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for arr in arrays {
        let mut buf = Vec::with_capacity(arr.len() * 8);
        for v in arr.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Cursor over a container's bytes that reports offsets on failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                expected: format!("{n} bytes of {what}, found {}", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Reads magic, version and JSON header.
    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u16) -> Result<serde_json::Value> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(Error::Format {
                offset: 0,
                expected: format!("magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let v = u16::from_le_bytes(self.take(2, "version")?.try_into().unwrap());
        if v != version {
            return Err(Error::Version {
                found: v,
                supported: version,
            });
        }
        let len = u32::from_le_bytes(self.take(4, "header length")?.try_into().unwrap()) as usize;
        let at = self.pos as u64;
        let raw = self.take(len, "JSON header")?;
        serde_json::from_slice(raw).map_err(|e| Error::Format {
            offset: at,
            expected: format!("UTF-8 JSON header ({e})"),
        })
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let nbytes = n.checked_mul(8).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            expected: format!("a sane element count for {what}"),
        })?;
        let raw = self.take(nbytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                expected: format!(
                    "end of file, found {} trailing bytes",
                    self.bytes.len() - self.pos
                ),
            });
        }
        Ok(())
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }
}
