//! Signal processing: WAV I/O, resampling, and MFCC feature extraction.

mod mfcc;
mod wav;

pub use mfcc::{mfcc, read_features, write_features, FeatureMatrix, MfccConfig};
pub use wav::{read_wav, write_wav};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed wav file: {0}")]
    Malformed(String),
    #[error("unsupported wav format: {0}")]
    Unsupported(String),
    #[error("resample factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("mel filterbank upper edge {upper} Hz exceeds Nyquist {nyquist} Hz")]
    AboveNyquist { upper: f64, nyquist: f64 },
    #[error("feature file corrupt: {0}")]
    BadFeatureFile(String),
}

/// Mono audio, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Resample with speed-perturbation semantics: the output keeps the input's
/// nominal sample rate but has round(N / factor) samples, so playback is
/// faster for factor > 1 and every frequency scales by factor.
///
/// Linear interpolation; adequate for the tonal synthetic material used here.
pub fn resample(buf: &AudioBuffer, factor: f64) -> Result<AudioBuffer, DspError> {
    if !(factor > 0.0) {
        return Err(DspError::NonPositiveFactor(factor));
    }
    if (factor - 1.0).abs() < 1e-12 {
        return Ok(buf.clone());
    }
    let n = buf.samples.len();
    let out_len = (n as f64 / factor).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * factor;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let a = *buf.samples.get(lo).unwrap_or(&0.0);
        let b = *buf.samples.get(lo + 1).unwrap_or(&a);
        out.push(a + frac * (b - a));
    }
    Ok(AudioBuffer {
        samples: out,
        sample_rate: buf.sample_rate,
    })
}

/// Rate-conversion semantics: content frequencies preserved, output carries
/// the target sample rate.
pub fn resample_to_rate(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, DspError> {
    if target_rate == 0 {
        return Err(DspError::NonPositiveFactor(0.0));
    }
    let factor = buf.sample_rate as f64 / target_rate as f64;
    let mut out = resample(buf, factor)?;
    out.sample_rate = target_rate;
    Ok(out)
}

/// One perturbed copy per (record, factor), written under `out_dir`.
///
/// Ids are suffixed with the factor; gold frame labels are carried over by
/// nearest-frame mapping so they still collapse to the transcript.
pub fn speed_perturb_manifest(
    m: &crate::corpus::Manifest,
    factors: &[f64],
    cfg: &MfccConfig,
    out_dir: &std::path::Path,
) -> Result<crate::corpus::Manifest, crate::corpus::CorpusError> {
    use crate::corpus::{CorpusError, Manifest, UtteranceRecord};
    if factors.is_empty() || factors.iter().any(|f| !(*f > 0.0)) {
        return Err(CorpusError::DegenerateSpec(
            "perturbation factors must be non-empty and positive".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut records: Vec<UtteranceRecord> = Vec::with_capacity(m.len() * factors.len());
    for r in m.records() {
        let buf = wav::read_wav(&r.audio)?;
        for &factor in factors {
            let out = resample(&buf, factor)?;
            let id = format!("{}@sp{:.2}", r.id, factor);
            let audio = out_dir.join(format!("{id}.wav"));
            let new_frames = cfg.n_frames(out.samples.len(), out.sample_rate);
            let frame_labels = r.frame_labels.as_ref().map(|labels| {
                (0..new_frames)
                    .map(|j| {
                        let src = ((j as f64 * factor).round() as usize).min(labels.len().saturating_sub(1));
                        labels.get(src).copied().unwrap_or(0)
                    })
                    .collect()
            });
            wav::write_wav(&out, &audio)?;
            records.push(UtteranceRecord {
                id,
                audio,
                transcript: r.transcript.clone(),
                frame_labels,
                domain: r.domain,
                label_source: r.label_source,
                confidence: r.confidence,
                speed_factor: r.speed_factor * factor,
            });
        }
    }
    Manifest::new(&format!("{}-perturbed", m.name), records)
}
