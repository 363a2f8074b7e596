//! Binary feature cache.
//!
//! Mel file layout, little endian: magic `SPMEL`, u32 version, u32 frames,
//! u32 n_mels, u32 hop, u32 win, u32 sample_rate, then `frames * n_mels` f32
//! in row-major order. Prosody files are JSON.

use std::path::Path;

use ndarray::Array2;

use super::{MelSpectrogram, ProsodyTracks};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"SPMEL";
pub const MEL_FILE_VERSION: u32 = 1;
const HEADER_LEN: usize = 5 + 6 * 4;

pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + mel.frames.len() * 4);
    buf.extend_from_slice(MAGIC);
    for v in [
        MEL_FILE_VERSION,
        mel.num_frames() as u32,
        mel.n_mels() as u32,
        mel.hop as u32,
        mel.win as u32,
        mel.sample_rate,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in mel.frames.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Validation(format!("{}: {m}", path.display()));
    if bytes.len() < HEADER_LEN || &bytes[..5] != MAGIC {
        return Err(bad("not a mel cache file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap());
    if word(0) != MEL_FILE_VERSION {
        return Err(bad(&format!("unsupported version {}", word(0))));
    }
    let (t, m) = (word(1) as usize, word(2) as usize);
    if bytes.len() != HEADER_LEN + t * m * 4 {
        return Err(bad("payload size does not match header"));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MelSpectrogram {
        frames: Array2::from_shape_vec((t, m), data).map_err(|e| bad(&e.to_string()))?,
        hop: word(3) as usize,
        win: word(4) as usize,
        sample_rate: word(5),
    })
}

pub fn write_prosody(path: &Path, p: &ProsodyTracks) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(p)?).map_err(|e| Error::io(path, e))
}

pub fn read_prosody(path: &Path) -> Result<ProsodyTracks> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
