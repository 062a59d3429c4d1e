//! Minimal RIFF/WAVE reader and writer for 16-bit mono PCM.
//!
//! Only the canonical 44-byte header layout is accepted: `RIFF` + `WAVE`,
//! a 16-byte PCM `fmt ` chunk (format tag 1), then chunks up to `data`.
//! Extensible headers (format tag 0xFFFE) are rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 16-bit full-scale divisor: sample / 32768 lands in [-1, 1).
const PCM16_SCALE: f64 = 32768.0;

/// Decoded mono PCM stream.
#[derive(Debug)]
pub struct WavData {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

fn read_exact_or(reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::format(format!("truncated WAV file while reading {what}")))
}

fn u16_le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Read a 16-bit mono PCM WAV file, scaling samples by 1/32768.
pub fn read_wav(path: &Path) -> Result<WavData> {
    let file = File::open(path)
        .map_err(|e| Error::format(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);

    let mut riff = [0u8; 12];
    read_exact_or(&mut r, &mut riff, "RIFF header")?;
    if &riff[0..4] != b"RIFF" {
        return Err(Error::format("missing RIFF magic"));
    }
    if &riff[8..12] != b"WAVE" {
        return Err(Error::format("missing WAVE form type"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    loop {
        let mut head = [0u8; 8];
        read_exact_or(&mut r, &mut head, "chunk header")?;
        let id = [head[0], head[1], head[2], head[3]];
        let size = u32_le(&head[4..8]) as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format("fmt chunk shorter than 16 bytes"));
                }
                let mut body = vec![0u8; size];
                read_exact_or(&mut r, &mut body, "fmt chunk")?;
                let tag = u16_le(&body[0..2]);
                let channels = u16_le(&body[2..4]);
                let rate = u32_le(&body[4..8]);
                let bits = u16_le(&body[14..16]);
                if tag == 0xFFFE {
                    return Err(Error::format(
                        "extensible WAV headers are rejected; canonical PCM required",
                    ));
                }
                if tag != 1 {
                    return Err(Error::format(format!(
                        "non-PCM encoding (format tag {tag}); PCM (1) required"
                    )));
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (_, channels, rate, bits) = fmt
                    .ok_or_else(|| Error::format("data chunk appears before fmt chunk"))?;
                if channels != 1 {
                    return Err(Error::format(format!(
                        "multi-channel WAV ({channels} channels); mono required"
                    )));
                }
                if bits != 16 {
                    return Err(Error::format(format!(
                        "{bits}-bit samples; 16-bit PCM required"
                    )));
                }
                if size % 2 != 0 {
                    return Err(Error::format("data chunk has odd byte length"));
                }
                let mut raw = vec![0u8; size];
                read_exact_or(&mut r, &mut raw, "data chunk")?;
                let samples = raw
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM16_SCALE)
                    .collect();
                return Ok(WavData {
                    samples,
                    sample_rate_hz: rate,
                });
            }
            _ => {
                // skip unknown chunk (word-aligned)
                let skip = size + (size & 1);
                let mut sink = vec![0u8; skip];
                read_exact_or(&mut r, &mut sink, "chunk body")?;
            }
        }
    }
}

/// Write samples as 16-bit mono PCM with the canonical 44-byte header.
///
/// Values are clamped to [-1, 1] and quantized by rounding `v * 32768`
/// into the i16 range.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let data_len = (samples.len() * 2) as u32;
    let byte_rate = sample_rate_hz * 2;

    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate_hz.to_le_bytes())?;
    w.write_all(&byte_rate.to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?; // bits per sample
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &v in samples {
        let q = (v.clamp(-1.0, 1.0) * PCM16_SCALE).round();
        let q = q.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_all(&q.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap().keep();
        dir.join(name)
    }

    #[test]
    fn pcm_scaling_matches_linear_rule() {
        // 16384 -> 0.5 and -32768 -> -1.0
        let path = tmp("scale.wav");
        let raw: [i16; 3] = [16384, -32768, 0];
        let mut bytes = Vec::new();
        for s in raw {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        write_raw_wav(&path, &bytes, 8000, 1, 16, 1);
        let wav = read_wav(&path).unwrap();
        assert_eq!(wav.samples, vec![0.5, -1.0, 0.0]);
        assert_eq!(wav.sample_rate_hz, 8000);
    }

    #[test]
    fn round_trip_preserves_data_chunk_bytes() {
        let path = tmp("rt.wav");
        let samples: Vec<f64> = (0..257)
            .map(|i| ((i as i32 * 113 - 14000) as f64) / 32768.0)
            .collect();
        write_wav(&path, &samples, 8000).unwrap();
        let first = std::fs::read(&path).unwrap();

        let reread = read_wav(&path).unwrap();
        let path2 = tmp("rt2.wav");
        write_wav(&path2, &reread.samples, reread.sample_rate_hz).unwrap();
        let second = std::fs::read(&path2).unwrap();
        // byte-identical including the data chunk
        assert_eq!(first, second);
    }

    #[test]
    fn rejects_stereo_and_non_pcm_and_truncated() {
        let stereo = tmp("stereo.wav");
        write_raw_wav(&stereo, &[0, 0, 0, 0], 8000, 2, 16, 1);
        let err = read_wav(&stereo).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");

        let alaw = tmp("alaw.wav");
        write_raw_wav(&alaw, &[0, 0], 8000, 1, 16, 6);
        let err = read_wav(&alaw).unwrap_err().to_string();
        assert!(err.contains("non-PCM"), "{err}");

        let trunc = tmp("trunc.wav");
        write_raw_wav(&trunc, &[0, 0, 0, 0], 8000, 1, 16, 1);
        let full = std::fs::read(&trunc).unwrap();
        std::fs::write(&trunc, &full[..full.len() - 2]).unwrap();
        let err = read_wav(&trunc).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn rejects_extensible_header() {
        let path = tmp("ext.wav");
        write_raw_wav(&path, &[0, 0], 8000, 1, 16, 0xFFFE);
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains("extensible"), "{err}");
    }

    /// Hand-assemble a WAV so tests can produce malformed variants.
    fn write_raw_wav(
        path: &Path,
        data: &[u8],
        rate: u32,
        channels: u16,
        bits: u16,
        tag: u16,
    ) {
        let mut w = Vec::new();
        w.extend_from_slice(b"RIFF");
        w.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        w.extend_from_slice(b"WAVE");
        w.extend_from_slice(b"fmt ");
        w.extend_from_slice(&16u32.to_le_bytes());
        w.extend_from_slice(&tag.to_le_bytes());
        w.extend_from_slice(&channels.to_le_bytes());
        w.extend_from_slice(&rate.to_le_bytes());
        w.extend_from_slice(&(rate * channels as u32 * (bits as u32 / 8)).to_le_bytes());
        w.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        w.extend_from_slice(&bits.to_le_bytes());
        w.extend_from_slice(b"data");
        w.extend_from_slice(&(data.len() as u32).to_le_bytes());
        w.extend_from_slice(data);
        let mut f = File::create(path).unwrap();
        f.write_all(&w).unwrap();
    }
}
