//! `VOC1` feature files and `VST1` statistics files. Little-endian
//! throughout, values stored as `f32`.

use std::io::{Read, Write};

use super::{NormalizationStats, VocoderFeatureBlock, NUM_COEFFS, NUM_MELS};
use crate::error::{Error, Result};
use crate::vocoder::{HOP, NUM_AP_BANDS, SAMPLE_RATE};

pub const VOC1_MAGIC: &[u8; 4] = b"VOC1";
pub const STATS_MAGIC: &[u8; 4] = b"VST1";
const VOC1_VERSION: u32 = 1;
/// Refuse headers announcing more than an hour of frames.
const MAX_FRAMES: u32 = 3600 * SAMPLE_RATE / HOP as u32;

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f32s(w: &mut impl Write, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut buf = Vec::new();
    for v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn eof_as_malformed(what: &str, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::malformed(what, "truncated")
    } else {
        Error::Io(e)
    }
}

pub(crate) fn get_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| eof_as_malformed(what, e))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_f32s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| eof_as_malformed(what, e))?;
    let out: Vec<f64> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::malformed(what, "non-finite value"));
    }
    Ok(out)
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8], what: &str) -> Result<()> {
    let mut b = vec![0u8; magic.len()];
    r.read_exact(&mut b).map_err(|e| eof_as_malformed(what, e))?;
    if b != magic {
        return Err(Error::malformed(what, "bad magic"));
    }
    Ok(())
}

pub(crate) fn expect_end(r: &mut impl Read, what: &str) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::malformed(what, "trailing bytes")),
    }
}

pub fn write_voc1(w: &mut impl Write, block: &VocoderFeatureBlock) -> Result<()> {
    block.check_shape()?;
    w.write_all(VOC1_MAGIC)?;
    for v in [
        VOC1_VERSION,
        block.num_frames() as u32,
        NUM_MELS as u32,
        NUM_AP_BANDS as u32,
        HOP as u32,
        SAMPLE_RATE,
    ] {
        put_u32(w, v)?;
    }
    put_f32s(w, block.se.iter().copied())?;
    put_f32s(w, block.nap.iter().copied())?;
    put_f32s(w, block.f0.iter().copied())?;
    put_f32s(w, block.vuv.iter().copied())?;
    Ok(())
}

pub fn read_voc1(r: &mut impl Read) -> Result<VocoderFeatureBlock> {
    const WHAT: &str = "VOC1 file";
    expect_magic(r, VOC1_MAGIC, WHAT)?;
    let version = get_u32(r, WHAT)?;
    if version != VOC1_VERSION {
        return Err(Error::malformed(WHAT, format!("unsupported version {version}")));
    }
    let a = get_u32(r, WHAT)?;
    if a > MAX_FRAMES {
        return Err(Error::malformed(WHAT, format!("implausible frame count {a}")));
    }
    let header = [get_u32(r, WHAT)?, get_u32(r, WHAT)?, get_u32(r, WHAT)?, get_u32(r, WHAT)?];
    let expected = [NUM_MELS as u32, NUM_AP_BANDS as u32, HOP as u32, SAMPLE_RATE];
    if header != expected {
        return Err(Error::ConfigMismatch(format!(
            "VOC1 header (n_sp, n_ap, hop, fs) = {header:?}, expected {expected:?}"
        )));
    }
    let a = a as usize;
    let block = VocoderFeatureBlock {
        se: get_f32s(r, a * NUM_MELS, WHAT)?,
        nap: get_f32s(r, a * NUM_AP_BANDS, WHAT)?,
        f0: get_f32s(r, a, WHAT)?,
        vuv: get_f32s(r, a, WHAT)?,
    };
    expect_end(r, WHAT)?;
    Ok(block)
}

pub fn write_stats(w: &mut impl Write, stats: &NormalizationStats) -> Result<()> {
    w.write_all(STATS_MAGIC)?;
    w.write_all(&stats.fingerprint)?;
    put_f32s(w, stats.min.iter().copied())?;
    put_f32s(w, stats.max.iter().copied())?;
    Ok(())
}

/// Reads a `VST1` file. Extrema are stored as `f32`, so they are rounded
/// relative to the values that produced them.
pub fn read_stats(r: &mut impl Read) -> Result<NormalizationStats> {
    const WHAT: &str = "VST1 file";
    expect_magic(r, STATS_MAGIC, WHAT)?;
    let mut fingerprint = [0u8; 16];
    r.read_exact(&mut fingerprint).map_err(|e| eof_as_malformed(WHAT, e))?;
    let min = get_f32s(r, NUM_COEFFS, WHAT)?;
    let max = get_f32s(r, NUM_COEFFS, WHAT)?;
    expect_end(r, WHAT)?;
    let degenerate: Vec<usize> = (0..NUM_COEFFS).filter(|&i| !(max[i] > min[i])).collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateCoefficients(degenerate));
    }
    Ok(NormalizationStats {
        min: min.try_into().expect("length checked"),
        max: max.try_into().expect("length checked"),
        fingerprint,
    })
}
