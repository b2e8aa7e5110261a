//! Checksummed file container shared by datasets and checkpoints.
//!
//! ```text
//! <magic> v<version>\n
//! <TOML header>
//! %%payload <byte length> <sha256 of header bytes followed by payload>\n
//! <binary payload>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const PAYLOAD_MARK: &str = "%%payload ";

pub(crate) fn digest(header: &str, payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(header.as_bytes());
    h.update(payload);
    hex::encode(h.finalize())
}

pub(crate) fn encode(magic: &str, version: u32, header: &str, payload: &[u8]) -> Vec<u8> {
    let mut header = header.to_string();
    if !header.ends_with('\n') {
        header.push('\n');
    }
    let mut out = Vec::with_capacity(header.len() + payload.len() + 128);
    out.extend_from_slice(format!("{magic} v{version}\n").as_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(
        format!("{PAYLOAD_MARK}{} {}\n", payload.len(), digest(&header, payload)).as_bytes(),
    );
    out.extend_from_slice(payload);
    out
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("tmp")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Splits and verifies a container; returns `(header, payload)`.
pub(crate) fn decode<'a>(magic: &str, version: u32, bytes: &'a [u8]) -> Result<(String, &'a [u8])> {
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing magic line".into()))?;
    let first = std::str::from_utf8(&bytes[..first_nl])
        .map_err(|_| Error::Format("magic line is not UTF-8".into()))?;
    let found = first
        .strip_prefix(magic)
        .and_then(|r| r.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Format(format!("expected `{magic} v<N>`, found `{first}`")))?;
    if found != version {
        return Err(Error::Version {
            found,
            expected: version,
        });
    }
    let rest = &bytes[first_nl + 1..];
    let needle = format!("\n{PAYLOAD_MARK}");
    let mark_at = if rest.starts_with(PAYLOAD_MARK.as_bytes()) {
        0
    } else {
        find(rest, needle.as_bytes())
            .map(|p| p + 1)
            .ok_or_else(|| Error::Format("missing payload marker".into()))?
    };
    let header = std::str::from_utf8(&rest[..mark_at])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?
        .to_string();
    let line_end = rest[mark_at..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("unterminated payload marker".into()))?
        + mark_at;
    let mark = std::str::from_utf8(&rest[mark_at + PAYLOAD_MARK.len()..line_end])
        .map_err(|_| Error::Format("payload marker is not UTF-8".into()))?;
    let (len, sum) = mark
        .split_once(' ')
        .ok_or_else(|| Error::Format(format!("bad payload marker `{mark}`")))?;
    let len: usize = len
        .parse()
        .map_err(|_| Error::Format(format!("bad payload length `{len}`")))?;
    let payload = &rest[line_end + 1..];
    if payload.len() != len {
        return Err(Error::Format(format!(
            "payload is {} bytes, header announces {len}",
            payload.len()
        )));
    }
    let actual = digest(&header, payload);
    if actual != sum {
        return Err(Error::Checksum {
            expected: sum.to_string(),
            actual,
        });
    }
    Ok((header, payload))
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Little-endian reader over a payload.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "payload truncated: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    out.reserve(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
