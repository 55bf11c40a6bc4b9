//! Binary mel cache: `MELS`, u32 version, u32 frames, u32 mels, f32 norm_min,
//! f32 norm_max, then row-major little-endian f32 values.

use std::path::Path;

use super::mel::{MelSpectrogram, NormStats};
use crate::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"MELS";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn write_mel_cache(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let stats = mel.norm.ok_or(Error::MissingStats)?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * mel.values().len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(mel.frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(mel.n_mels() as u32).to_le_bytes());
    buf.extend_from_slice(&(stats.min as f32).to_le_bytes());
    buf.extend_from_slice(&(stats.max as f32).to_le_bytes());
    for v in mel.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn read_mel_cache(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::format(path, "not a mel cache file"));
    }
    let version = u32_at(&bytes, 4);
    if version != CACHE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CACHE_VERSION,
        });
    }
    let frames = u32_at(&bytes, 8) as usize;
    let mels = u32_at(&bytes, 12) as usize;
    let stats = NormStats {
        min: f32_at(&bytes, 16) as f64,
        max: f32_at(&bytes, 20) as f64,
    };
    let want = HEADER_LEN + 4 * frames * mels;
    if bytes.len() != want {
        return Err(Error::format(
            path,
            format!("expected {want} bytes, found {}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::new(frames, mels, values, Some(stats))
}
