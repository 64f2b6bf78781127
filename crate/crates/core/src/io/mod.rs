//! File formats: event streams, PNM frames with a timestamp manifest, and
//! little-endian binary dumps of volumes, flows, trajectories and fields.

mod binary;
mod events;
mod frames;

pub use binary::{
    basis_descriptor, decode_coefficients, decode_flow, decode_kplane, decode_volume,
    encode_coefficients, encode_flow, encode_kplane, encode_volume, read_trajectory,
    trajectory_from_parts, write_trajectory,
};
pub use events::{
    decode_evs1, encode_evs1, format_events_csv, load_events, parse_events_csv, save_events,
    EventFile, EventFormat,
};
pub use frames::{
    decode_pnm, encode_pnm, load_pnm, parse_manifest, read_manifest, read_sequence, save_pnm,
    write_sequence, ImageFormat, ManifestEntry, MANIFEST_NAME,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Cursor over little-endian binary data.
pub(crate) struct Reader<'a> {
    format: &'static str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(format: &'static str, data: &'a [u8]) -> Result<Self> {
        let magic = format.as_bytes();
        if data.len() < magic.len() || &data[..magic.len()] != magic {
            return Err(Error::format(format, "bad magic"));
        }
        Ok(Self {
            format,
            data,
            pos: magic.len(),
        })
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.format, format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().unwrap())
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub(crate) fn i8(&mut self) -> Result<i8> {
        Ok(i8::from_le_bytes(self.take()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    /// `n` f32 values widened to f64; the count is checked against the
    /// remaining length before allocating.
    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .filter(|&b| b <= self.data.len() - self.pos)
            .ok_or_else(|| Error::format(self.format, format!("expected {n} f32 values")))?;
        let out = self.data[self.pos..self.pos + bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        self.pos += bytes;
        Ok(out)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::format(
                self.format,
                format!("{} trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, format: &'static str, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(format, format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}
