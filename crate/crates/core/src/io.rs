//! File-level loading and saving: WAV, transcripts, manifests and the
//! binary tensor formats.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::features::{read_stats, read_voc1, write_stats, write_voc1, NormalizationStats, VocoderFeatureBlock};
use crate::video::{read_vft1, write_vft1, VideoClipTensor};

fn open_error(path: &Path, e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    }
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(e) => open_error(path, e),
        other => Error::malformed(path.display().to_string(), other.to_string()),
    }
}

/// Reads a WAV file as mono, averaging channels. Integer samples are
/// scaled to `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::malformed(path.display().to_string(), "zero channels"));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
    };
    let mono = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Writes 16-bit PCM on the same scale `read_wav` uses, saturating
/// outside `[-1, 1)`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in w.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Reads a transcript file: the first non-empty line.
pub fn read_transcript(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| open_error(path, e))?;
    Ok(text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One manifest row. Relative paths are resolved against the manifest's
/// directory when loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video: PathBuf,
    pub audio: PathBuf,
    pub transcript: PathBuf,
    pub speaker: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipManifest {
    pub entries: Vec<ManifestEntry>,
}

impl ClipManifest {
    /// Loads a CSV manifest with header
    /// `video,audio,transcript,speaker,split` and checks that every
    /// referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| open_error(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<ManifestEntry>().enumerate() {
            let mut e = row.map_err(|err| Error::malformed(path.display().to_string(), format!("row {}: {err}", i + 1)))?;
            for p in [&mut e.video, &mut e.audio, &mut e.transcript] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(Error::NotFound(p.clone()));
                }
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))?;
        for e in &self.entries {
            w.serialize(e).map_err(|err| Error::malformed(path.display().to_string(), err.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

fn open_read(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    Ok(std::io::BufReader::new(std::fs::File::open(path).map_err(|e| open_error(path, e))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<NormalizationStats> {
    read_stats(&mut open_read(path)?)
}

pub fn save_stats(path: &Path, stats: &NormalizationStats) -> Result<()> {
    write_with(path, |w| write_stats(w, stats))
}

pub fn load_features(path: &Path) -> Result<VocoderFeatureBlock> {
    read_voc1(&mut open_read(path)?)
}

pub fn save_features(path: &Path, block: &VocoderFeatureBlock) -> Result<()> {
    write_with(path, |w| write_voc1(w, block))
}

pub fn load_video(path: &Path) -> Result<VideoClipTensor> {
    read_vft1(&mut open_read(path)?)
}

pub fn save_video(path: &Path, clip: &VideoClipTensor) -> Result<()> {
    write_with(path, |w| write_vft1(w, clip))
}
