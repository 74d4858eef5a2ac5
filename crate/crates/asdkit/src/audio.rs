//! Raw audio clips and 16-bit PCM RIFF/WAVE file I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Mono waveform with its sample rate.
///
/// Samples are dimensionless amplitudes, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    /// Build a clip, checking the type invariants: positive rate, finite samples.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::ClipMismatch("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::ClipMismatch("clip contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Root-mean-square amplitude over the whole clip.
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum_sq: f64 = self.samples.iter().map(|&s| s as f64 * s as f64).sum();
        (sum_sq / self.samples.len() as f64).sqrt()
    }
}

fn read_u16(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([buf[at], buf[at + 1]])
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

/// Load a 16-bit PCM RIFF/WAVE file.
///
/// Multichannel files are reduced to channel 0. Integer samples are scaled
/// to [-1, 1) by dividing by 32768.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;

    let malformed = |reason: &str| Error::MalformedWav {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }

    // Walk the chunk list for "fmt " and "data"; other chunks are skipped.
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format_tag, channels, rate, bits)
    let mut data: Option<(usize, usize)> = None; // (offset, len)
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(malformed("chunk extends past end of file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed("fmt chunk too small"));
                }
                fmt = Some((
                    read_u16(&bytes, body),
                    read_u16(&bytes, body + 2),
                    read_u32(&bytes, body + 4),
                    read_u16(&bytes, body + 14),
                ));
            }
            b"data" => {
                data = Some((body, size));
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body + size + (size & 1);
    }

    let (format_tag, channels, sample_rate, bits) =
        fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    let (data_off, data_len) = data.ok_or_else(|| malformed("no data chunk"))?;

    if format_tag != 1 || bits != 16 {
        return Err(Error::UnsupportedWavEncoding {
            path: path.to_path_buf(),
            format_tag,
            bits,
        });
    }
    if channels == 0 {
        return Err(malformed("zero channels"));
    }
    if sample_rate == 0 {
        return Err(malformed("zero sample rate"));
    }

    let frame_bytes = 2 * channels as usize;
    let n_frames = data_len / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let at = data_off + frame * frame_bytes;
        let value = i16::from_le_bytes([bytes[at], bytes[at + 1]]);
        samples.push(value as f32 / 32768.0);
    }

    Ok(AudioClip { samples, sample_rate })
}

/// Check that a file is a parsable 16-bit PCM WAV without reading its sample
/// data, and return the header sample rate.
pub fn probe_wav(path: &Path) -> Result<u32> {
    use std::io::{Seek, SeekFrom};

    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let malformed = |reason: &str| Error::MalformedWav {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    reader
        .read_exact(&mut header)
        .map_err(|_| malformed("file shorter than RIFF header"))?;
    if &header[0..4] != b"RIFF" || &header[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }

    let mut fmt: Option<(u16, u32, u16)> = None;
    let mut has_data = false;
    let mut chunk_header = [0u8; 8];
    while reader.read_exact(&mut chunk_header).is_ok() {
        let size = u32::from_le_bytes(chunk_header[4..8].try_into().unwrap()) as u64;
        match &chunk_header[0..4] {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed("fmt chunk too small"));
                }
                let mut body = [0u8; 16];
                reader
                    .read_exact(&mut body)
                    .map_err(|_| malformed("truncated fmt chunk"))?;
                fmt = Some((
                    u16::from_le_bytes([body[0], body[1]]),
                    u32::from_le_bytes([body[4], body[5], body[6], body[7]]),
                    u16::from_le_bytes([body[14], body[15]]),
                ));
                reader.seek(SeekFrom::Current(size as i64 - 16 + (size & 1) as i64))?;
            }
            b"data" => {
                has_data = true;
                reader.seek(SeekFrom::Current((size + (size & 1)) as i64))?;
            }
            _ => {
                reader.seek(SeekFrom::Current((size + (size & 1)) as i64))?;
            }
        }
    }
    let (format_tag, sample_rate, bits) = fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    if !has_data {
        return Err(malformed("no data chunk"));
    }
    if format_tag != 1 || bits != 16 {
        return Err(Error::UnsupportedWavEncoding {
            path: path.to_path_buf(),
            format_tag,
            bits,
        });
    }
    Ok(sample_rate)
}

/// Write a clip as mono 16-bit PCM WAV.
///
/// Samples are clamped to [-1, 1] and quantized by rounding to the nearest
/// 16-bit integer, so writing is deterministic for a given clip.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    let data_size = (clip.samples.len() * 2) as u32;
    let byte_rate = clip.sample_rate * 2;

    writer.write_all(b"RIFF")?;
    writer.write_all(&(36 + data_size).to_le_bytes())?;
    writer.write_all(b"WAVE")?;
    writer.write_all(b"fmt ")?;
    writer.write_all(&16u32.to_le_bytes())?;
    writer.write_all(&1u16.to_le_bytes())?; // PCM
    writer.write_all(&1u16.to_le_bytes())?; // mono
    writer.write_all(&clip.sample_rate.to_le_bytes())?;
    writer.write_all(&byte_rate.to_le_bytes())?;
    writer.write_all(&2u16.to_le_bytes())?; // block align
    writer.write_all(&16u16.to_le_bytes())?;
    writer.write_all(b"data")?;
    writer.write_all(&data_size.to_le_bytes())?;
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_all(&q.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_raw_wav(
        path: &Path,
        format_tag: u16,
        channels: u16,
        rate: u32,
        bits: u16,
        data: &[u8],
    ) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&format_tag.to_le_bytes());
        bytes.extend_from_slice(&channels.to_le_bytes());
        bytes.extend_from_slice(&rate.to_le_bytes());
        bytes.extend_from_slice(&(rate * channels as u32 * (bits as u32 / 8)).to_le_bytes());
        bytes.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        bytes.extend_from_slice(&bits.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&(data.len() as u32).to_le_bytes());
        bytes.extend_from_slice(data);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn silence_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples.len(), 16000);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn sample_rate_from_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sr.wav");
        write_raw_wav(&path, 1, 1, 16000, 16, &[0, 0, 0, 0]);
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn int16_min_maps_to_minus_one() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("min.wav");
        write_raw_wav(&path, 1, 1, 16000, 16, &(-32768i16).to_le_bytes());
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![-1.0]);
    }

    #[test]
    fn multichannel_takes_channel_zero() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let mut data = Vec::new();
        data.extend_from_slice(&16384i16.to_le_bytes()); // ch0 frame0
        data.extend_from_slice(&(-16384i16).to_le_bytes()); // ch1 frame0
        data.extend_from_slice(&8192i16.to_le_bytes()); // ch0 frame1
        data.extend_from_slice(&0i16.to_le_bytes()); // ch1 frame1
        write_raw_wav(&path, 1, 2, 16000, 16, &data);
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.5, 0.25]);
    }

    #[test]
    fn missing_file_is_distinct_error() {
        let err = load_wav(Path::new("/definitely/not/here.wav")).unwrap_err();
        assert!(matches!(err, Error::FileNotFound(_)));
    }

    #[test]
    fn malformed_header_is_distinct_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("garbage.wav");
        std::fs::write(&path, b"not a wav at all").unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(matches!(err, Error::MalformedWav { .. }));
    }

    #[test]
    fn non_pcm_is_distinct_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("float.wav");
        write_raw_wav(&path, 3, 1, 16000, 32, &[0; 8]); // IEEE float
        let err = load_wav(&path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedWavEncoding { .. }));
    }

    #[test]
    fn writer_quantizes_and_clamps() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clamp.wav");
        let clip = AudioClip::new(vec![2.0, -2.0, 0.5], 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        assert!((back.samples[0] - 32767.0 / 32768.0).abs() < 1e-6);
        assert!((back.samples[1] + 32767.0 / 32768.0).abs() < 1e-6);
        assert!((back.samples[2] - 0.5).abs() < 1.0 / 32768.0);
    }
}
