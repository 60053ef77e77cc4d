//! MFCC extraction: pre-emphasis, Hamming-windowed framing, power spectrum,
//! mel filterbank, log with floor, orthonormal DCT-II.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{AudioBuffer, DspError};

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub pre_emphasis: f64,
    pub frame_length: f64,
    pub frame_shift: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            n_mels: 23,
            n_coeffs: 13,
            pre_emphasis: 0.97,
            frame_length: 0.025,
            frame_shift: 0.010,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    /// 40-coefficient variant (40 mels, 40 coefficients), otherwise defaults.
    pub fn high_resolution() -> Self {
        MfccConfig {
            n_mels: 40,
            n_coeffs: 40,
            ..Default::default()
        }
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift * sample_rate as f64).round() as usize
    }

    /// 1 + floor((N - window) / hop) for N >= window, else 0.
    pub fn n_frames(&self, n_samples: usize, sample_rate: u32) -> usize {
        let win = self.window_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        if n_samples < win {
            0
        } else {
            1 + (n_samples - win) / hop
        }
    }
}

/// Row-major frames x dim feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub frame_shift: f64,
    pub frame_length: f64,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank: n_mels filters spanning 0..Nyquist, as weights
/// over the n_fft/2+1 power spectrum bins.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II matrix, n_coeffs x n_mels.
fn dct_matrix(n_coeffs: usize, n_mels: usize) -> Vec<Vec<f64>> {
    (0..n_coeffs)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n_mels as f64).sqrt()
            } else {
                (2.0 / n_mels as f64).sqrt()
            };
            (0..n_mels)
                .map(|m| {
                    scale
                        * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / n_mels as f64)
                            .cos()
                })
                .collect()
        })
        .collect()
}

pub fn mfcc(buf: &AudioBuffer, cfg: &MfccConfig) -> Result<FeatureMatrix, DspError> {
    let nyquist = buf.sample_rate as f64 / 2.0;
    if nyquist <= 0.0 {
        return Err(DspError::AboveNyquist {
            upper: 0.0,
            nyquist,
        });
    }
    let win = cfg.window_samples(buf.sample_rate);
    let hop = cfg.hop_samples(buf.sample_rate);
    let n_frames = cfg.n_frames(buf.samples.len(), buf.sample_rate);
    let mut out = FeatureMatrix {
        frames: n_frames,
        dim: cfg.n_coeffs,
        values: Vec::with_capacity(n_frames * cfg.n_coeffs),
        frame_shift: cfg.frame_shift,
        frame_length: cfg.frame_length,
    };
    if n_frames == 0 {
        return Ok(out);
    }

    // pre-emphasis over the whole signal; y[0] keeps x[0]
    let x = &buf.samples;
    let mut emph = Vec::with_capacity(x.len());
    emph.push(x[0]);
    for i in 1..x.len() {
        emph.push(x[i] - cfg.pre_emphasis * x[i - 1]);
    }

    let n_fft = win.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let hamming: Vec<f64> = (0..win)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos())
        .collect();
    let filters = mel_filterbank(cfg.n_mels, n_fft, buf.sample_rate);
    let dct = dct_matrix(cfg.n_coeffs, cfg.n_mels);

    let mut spectrum = vec![Complex::new(0.0, 0.0); n_fft];
    for f in 0..n_frames {
        let start = f * hop;
        for i in 0..n_fft {
            let v = if i < win { emph[start + i] * hamming[i] } else { 0.0 };
            spectrum[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut spectrum);
        let power: Vec<f64> = spectrum[..n_fft / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|w| {
                let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                e.max(cfg.log_floor).ln()
            })
            .collect();
        for row in &dct {
            out.values
                .push(row.iter().zip(&log_mel).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

/// Binary feature dump: frames and dim as little-endian u32, then row-major
/// little-endian f32 values.
pub fn write_features(m: &FeatureMatrix, path: &Path) -> Result<(), DspError> {
    let mut bytes = Vec::with_capacity(8 + m.values.len() * 4);
    bytes.extend_from_slice(&(m.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for v in &m.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, DspError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(DspError::BadFeatureFile("header truncated".into()));
    }
    let frames = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let want = 8 + frames * dim * 4;
    if bytes.len() != want {
        return Err(DspError::BadFeatureFile(format!(
            "expected {want} bytes, found {}",
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureMatrix {
        frames,
        dim,
        values,
        frame_shift: 0.0,
        frame_length: 0.0,
    })
}
