//! RIFF/WAVE decoding to mono reals.

use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavFormat {
    pub channels: u16,
    pub sample_rate: u32,
    pub bits_per_sample: u16,
    /// Resolved format code (the sub-format for extensible headers).
    pub encoding: u16,
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::WavParse { offset, reason: reason.into() }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8], offset: usize) -> Result<WavFormat> {
    if body.len() < 16 {
        return Err(parse_err(offset, format!("fmt chunk is {} bytes, need at least 16", body.len())));
    }
    let mut encoding = u16_at(body, 0);
    if encoding == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(parse_err(offset, "extensible fmt chunk too short for its sub-format"));
        }
        encoding = u16_at(body, 24);
    }
    let fmt = WavFormat {
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        bits_per_sample: u16_at(body, 14),
        encoding,
    };
    let supported = match encoding {
        FORMAT_PCM => matches!(fmt.bits_per_sample, 8 | 16 | 24 | 32),
        FORMAT_FLOAT => matches!(fmt.bits_per_sample, 32 | 64),
        _ => false,
    };
    if !supported {
        return Err(Error::UnsupportedEncoding(encoding));
    }
    if fmt.channels == 0 || fmt.sample_rate == 0 {
        return Err(parse_err(offset, "fmt chunk declares zero channels or zero sample rate"));
    }
    Ok(fmt)
}

fn decode_sample(fmt: &WavFormat, s: &[u8]) -> f64 {
    match (fmt.encoding, fmt.bits_per_sample) {
        (FORMAT_PCM, 8) => (s[0] as f64 - 128.0) / 128.0,
        (FORMAT_PCM, 16) => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
        (FORMAT_PCM, 24) => (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f64 / 8_388_608.0,
        (FORMAT_PCM, 32) => i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64 / 2_147_483_648.0,
        (FORMAT_FLOAT, 32) => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
        (FORMAT_FLOAT, 64) => f64::from_le_bytes(s[..8].try_into().expect("8-byte sample")),
        _ => unreachable!("format validated in parse_fmt"),
    }
}

/// Decodes a WAV file, averaging channels to mono. Chunks other than `fmt `
/// and `data` are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    if bytes.len() < 12 {
        return Err(parse_err(0, format!("file is {} bytes, shorter than a RIFF header", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(parse_err(0, "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(parse_err(8, "missing WAVE tag"));
    }
    let mut fmt: Option<WavFormat> = None;
    let mut pos = 12;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(parse_err(pos, "truncated chunk header"));
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_at = pos + 8;
        if bytes.len() - body_at < size {
            return Err(parse_err(
                pos,
                format!(
                    "chunk '{}' declares {} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    size,
                    bytes.len() - body_at
                ),
            ));
        }
        let body = &bytes[body_at..body_at + size];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body, pos)?),
            b"data" => {
                let fmt = fmt.ok_or_else(|| parse_err(pos, "data chunk precedes fmt chunk"))?;
                return decode_frames(&fmt, body, body_at).map(|s| (s, fmt.sample_rate));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_at + size + (size & 1);
    }
    Err(parse_err(bytes.len(), "no data chunk"))
}

fn decode_frames(fmt: &WavFormat, body: &[u8], offset: usize) -> Result<Vec<f32>> {
    let width = fmt.bits_per_sample as usize / 8;
    let frame = width * fmt.channels as usize;
    if !body.len().is_multiple_of(frame) {
        return Err(parse_err(
            offset + body.len() / frame * frame,
            format!("data ends inside a frame ({} trailing bytes of a {}-byte frame)", body.len() % frame, frame),
        ));
    }
    let scale = 1.0 / fmt.channels as f64;
    Ok(body
        .chunks_exact(frame)
        .map(|f| (f.chunks_exact(width).map(|s| decode_sample(fmt, s)).sum::<f64>() * scale) as f32)
        .collect())
}

/// Mono 16-bit PCM encoding; samples are clamped to `[-1, 1)`.
pub fn write_wav_pcm16(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        let align = channels * bits / 8;
        b.extend_from_slice(&(8000 * align as u32).to_le_bytes());
        b.extend_from_slice(&align.to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn pcm16_scaling() {
        let data: Vec<u8> = [32767i16, -32768, 0, 16384].iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = header(FORMAT_PCM, 1, 16, &data);
        assert_eq!(bytes.len(), 44 + 8);
        let (s, rate) = decode_wav(&bytes).unwrap();
        assert_eq!(rate, 8000);
        assert_eq!(s, vec![32767.0 / 32768.0, -1.0, 0.0, 0.5]);
    }

    #[test]
    fn stereo_averages() {
        let data: Vec<u8> = [1.0f32, -1.0, 0.5, 0.25].iter().flat_map(|v| v.to_le_bytes()).collect();
        let (s, _) = decode_wav(&header(FORMAT_FLOAT, 2, 32, &data)).unwrap();
        assert_eq!(s, vec![0.0, 0.375]);
    }

    #[test]
    fn eight_and_twenty_four_bit() {
        let (s, _) = decode_wav(&header(FORMAT_PCM, 1, 8, &[128, 0, 255])).unwrap();
        assert_eq!(s, vec![0.0, -1.0, 127.0 / 128.0]);
        let (s, _) = decode_wav(&header(FORMAT_PCM, 1, 24, &[0x00, 0x00, 0x80, 0xff, 0xff, 0x7f])).unwrap();
        assert_eq!(s, vec![-1.0, 8_388_607.0 / 8_388_608.0]);
    }

    #[test]
    fn unknown_chunks_skipped() {
        let mut bytes = header(FORMAT_PCM, 1, 16, &[0, 64]);
        let list = b"LIST\x03\x00\x00\x00abc\x00";
        bytes.splice(36..36, list.iter().copied());
        assert_eq!(decode_wav(&bytes).unwrap().0, vec![0.5]);
    }

    #[test]
    fn compressed_rejected() {
        let err = decode_wav(&header(2, 1, 4, &[0, 0])).unwrap_err();
        assert!(err.to_string().contains("unsupported encoding"), "{err}");
    }

    #[test]
    fn truncated_data_reports_offset() {
        let mut bytes = header(FORMAT_PCM, 1, 16, &[0, 0, 0, 0]);
        bytes.truncate(bytes.len() - 2);
        match decode_wav(&bytes).unwrap_err() {
            Error::WavParse { offset, .. } => assert_eq!(offset, 36),
            e => panic!("{e}"),
        }
        match decode_wav(&bytes[..40]).unwrap_err() {
            Error::WavParse { offset, .. } => assert_eq!(offset, 36),
            e => panic!("{e}"),
        }
        assert!(matches!(decode_wav(b"RIFX\0\0\0\0WAVE").unwrap_err(), Error::WavParse { offset: 0, .. }));
    }

    #[test]
    fn pcm16_round_trip() {
        let s: Vec<f32> = (-20..20).map(|i| i as f32 * 811.0 / 32768.0).collect();
        let (back, rate) = decode_wav(&write_wav_pcm16(&s, 22050)).unwrap();
        assert_eq!(rate, 22050);
        assert_eq!(back, s);
    }
}
