//! Minimal RIFF/WAVE reader and writer for PCM signed 16-bit mono.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{AudioBuffer, DspError};

pub fn read_wav(path: &Path) -> Result<AudioBuffer, DspError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer, DspError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DspError::Malformed("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(DspError::Malformed(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(DspError::Malformed("fmt chunk too short".into()));
                }
                let b = &bytes[body_start..];
                fmt = Some((
                    u16::from_le_bytes(b[0..2].try_into().unwrap()),
                    u16::from_le_bytes(b[2..4].try_into().unwrap()),
                    u32::from_le_bytes(b[4..8].try_into().unwrap()),
                    u16::from_le_bytes(b[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_end + (size & 1);
    }
    let (codec, channels, rate, bits) =
        fmt.ok_or_else(|| DspError::Malformed("no fmt chunk".into()))?;
    if codec != 1 {
        return Err(DspError::Unsupported(format!("codec tag {codec} (want PCM=1)")));
    }
    if channels != 1 {
        return Err(DspError::Unsupported(format!("{channels} channels (want mono)")));
    }
    if bits != 16 {
        return Err(DspError::Unsupported(format!("{bits}-bit samples (want 16)")));
    }
    let data = data.ok_or_else(|| DspError::Malformed("no data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(DspError::Malformed("odd data chunk length".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate: rate,
    })
}

pub fn write_wav(buf: &AudioBuffer, path: &Path) -> Result<(), DspError> {
    for (i, s) in buf.samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(DspError::NonFiniteSample(i));
        }
    }
    let n_bytes = (buf.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + n_bytes as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + n_bytes).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&n_bytes.to_le_bytes());
    for s in &buf.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut f = File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
