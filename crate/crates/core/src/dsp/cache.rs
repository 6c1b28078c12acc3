//! Binary spectrogram cache records.
//!
//! Layout (little endian): magic `MGVC`, version `u32`, mel channels `u32`,
//! frames `u32`, `min_db` `f64`, `ref_db` `f64`, then `M·t` `f32` values in
//! time-major order (all channels of frame 0, then frame 1, ...).

use std::io::{Read, Write};

use ndarray::Array2;

use super::normalize::{MelSpectrogram, NormalizationStats};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"MGVC";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8;

/// Bytes taken by one record with the given shape.
pub fn record_len(channels: usize, frames: usize) -> usize {
    HEADER_LEN + 4 * channels * frames
}

pub fn write_record<W: Write>(out: &mut W, spec: &MelSpectrogram) -> std::io::Result<usize> {
    let (m, t) = spec.values.dim();
    let mut buf = Vec::with_capacity(record_len(m, t));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&spec.stats.min_db.to_le_bytes());
    buf.extend_from_slice(&spec.stats.ref_db.to_le_bytes());
    for frame in 0..t {
        for ch in 0..m {
            buf.extend_from_slice(&spec.values[[ch, frame]].to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(buf.len())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::format("spectrogram cache", "truncated record"));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn u32_at(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

fn f64_at(bytes: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(bytes, 8)?.try_into().unwrap()))
}

/// Decode one record from the front of `bytes`, advancing it.
pub fn read_record(bytes: &mut &[u8], config_digest: &str) -> Result<MelSpectrogram> {
    if take(bytes, 4)? != CACHE_MAGIC {
        return Err(Error::format("spectrogram cache", "bad magic"));
    }
    let version = u32_at(bytes)?;
    if version != CACHE_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: "spectrogram cache",
            found: version,
            expected: CACHE_VERSION,
        });
    }
    let m = u32_at(bytes)? as usize;
    let t = u32_at(bytes)? as usize;
    let stats = NormalizationStats::new(f64_at(bytes)?, f64_at(bytes)?)?;
    let raw = take(bytes, 4 * m * t)?;
    let mut values = Array2::zeros((m, t));
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::format("spectrogram cache", format!("value {v} outside [-1, 1]")));
        }
        values[[i % m, i / m]] = v;
    }
    Ok(MelSpectrogram {
        values,
        stats,
        config_digest: config_digest.to_string(),
    })
}

/// Every record in a cache file, in order.
pub fn read_all<R: Read>(mut input: R, config_digest: &str) -> Result<Vec<MelSpectrogram>> {
    let mut data = Vec::new();
    input
        .read_to_end(&mut data)
        .map_err(|e| Error::io("<cache>", e))?;
    let mut cursor = data.as_slice();
    let mut out = Vec::new();
    while !cursor.is_empty() {
        out.push(read_record(&mut cursor, config_digest)?);
    }
    Ok(out)
}
