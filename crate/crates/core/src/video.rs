//! Video clip tensors and the `VFT1` frame file.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::features::io::{expect_end, expect_magic, get_u32, put_u32};

pub const VFT1_MAGIC: &[u8; 4] = b"VFT1";
/// Values may exceed [-1, 1] by this much and still be accepted.
pub const RANGE_TOLERANCE: f32 = 1e-6;
const MAX_ELEMENTS: usize = 1 << 28;

/// Frames `[T, C, H, W]` with values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClipTensor {
    data: Vec<f32>,
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
}

impl VideoClipTensor {
    pub fn new(data: Vec<f32>, frames: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let n = frames * channels * height * width;
        if n == 0 || data.len() != n {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{channels}x{height}x{width} clip",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || v.abs() > 1.0 + RANGE_TOLERANCE) {
            return Err(Error::malformed("video clip", format!("value {} at index {i} outside [-1, 1]", data[i])));
        }
        Ok(Self {
            data,
            frames,
            channels,
            height,
            width,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// One frame `[C, H, W]`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.channels * self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        Self { data, ..*self }
    }
}

pub fn write_vft1(w: &mut impl Write, clip: &VideoClipTensor) -> Result<()> {
    w.write_all(VFT1_MAGIC)?;
    for v in [clip.frames, clip.channels, clip.height, clip.width] {
        put_u32(w, v as u32)?;
    }
    let mut buf = Vec::with_capacity(clip.data.len() * 4);
    for v in &clip.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_vft1(r: &mut impl Read) -> Result<VideoClipTensor> {
    const WHAT: &str = "VFT1 file";
    expect_magic(r, VFT1_MAGIC, WHAT)?;
    let dims = [get_u32(r, WHAT)?, get_u32(r, WHAT)?, get_u32(r, WHAT)?, get_u32(r, WHAT)?].map(|v| v as usize);
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= MAX_ELEMENTS);
    let Some(n) = n else {
        return Err(Error::malformed(WHAT, format!("implausible dimensions {dims:?}")));
    };
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::malformed(WHAT, "truncated"),
        _ => Error::Io(e),
    })?;
    expect_end(r, WHAT)?;
    let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    VideoClipTensor::new(data, dims[0], dims[1], dims[2], dims[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let data: Vec<f32> = (0..2 * 3 * 4 * 5).map(|i| (i as f32 / 60.0) - 1.0).collect();
        let clip = VideoClipTensor::new(data, 2, 3, 4, 5).unwrap();
        let mut buf = Vec::new();
        write_vft1(&mut buf, &clip).unwrap();
        assert_eq!(read_vft1(&mut buf.as_slice()).unwrap(), clip);
        assert!(read_vft1(&mut &buf[..buf.len() - 2]).is_err());
        assert!(VideoClipTensor::new(vec![1.5; 4], 1, 1, 2, 2).is_err());
        assert!(VideoClipTensor::new(vec![0.0; 3], 1, 1, 2, 2).is_err());
    }

    #[test]
    fn mirror_flips_width_only() {
        let clip = VideoClipTensor::new(vec![-1.0, 0.0, 1.0, 0.5, 0.25, 0.0], 1, 1, 2, 3).unwrap();
        assert_eq!(clip.mirrored().data(), &[1.0, 0.0, -1.0, 0.0, 0.25, 0.5]);
        assert_eq!(clip.mirrored().mirrored(), clip);
    }
}
