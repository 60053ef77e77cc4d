//! Corpus manifests and a deterministic synthetic two-domain dataset.
//!
//! Utterances are concatenations of word units, each rendered as a
//! two-tone signature with word-specific frequencies, separated by
//! silence. The out-of-domain channel applies spectral tilt, additive
//! noise, and a tone frequency offset to create a controlled domain
//! mismatch.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::{self, AudioBuffer, DspError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("audio error: {0}")]
    Dsp(#[from] DspError),
    #[error("manifest parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("conflicting records for id {id:?}: audio {a:?} vs {b:?}")]
    ConflictingRecords { id: String, a: PathBuf, b: PathBuf },
    #[error("pseudo-labeled record {0:?} has no confidence")]
    PseudoWithoutConfidence(String),
    #[error("fractions must sum to 1, got {0}")]
    BadFractions(f64),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("degenerate synthesis spec: {0}")]
    DegenerateSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    InDomain,
    OutOfDomain,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::InDomain => "in_domain",
            Domain::OutOfDomain => "out_of_domain",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "in_domain" => Some(Domain::InDomain),
            "out_of_domain" => Some(Domain::OutOfDomain),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Gold,
    Pseudo,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Gold => "gold",
            LabelSource::Pseudo => "pseudo",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "gold" => Some(LabelSource::Gold),
            "pseudo" => Some(LabelSource::Pseudo),
            _ => None,
        }
    }
}

/// One corpus entry: audio plus optional supervision and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio: PathBuf,
    pub transcript: Option<Vec<String>>,
    /// Per-frame label ids; label 0 is silence. Synthetic gold or pseudo.
    pub frame_labels: Option<Vec<u32>>,
    pub domain: Domain,
    pub label_source: LabelSource,
    /// Mean per-frame log-probability in nats; required for pseudo labels.
    pub confidence: Option<f64>,
    pub speed_factor: f64,
}

/// Ordered (by id) list of utterance records.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn new(name: &str, mut records: Vec<UtteranceRecord>) -> Result<Self, CorpusError> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.id.clone()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
            if r.label_source == LabelSource::Pseudo && r.confidence.is_none() {
                return Err(CorpusError::PseudoWithoutConfidence(r.id.clone()));
            }
        }
        Ok(Manifest {
            name: name.to_string(),
            records,
        })
    }

    pub fn empty(name: &str) -> Self {
        Manifest {
            name: name.to_string(),
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            write!(w, "id={}\taudio={}", r.id, r.audio.display())?;
            if let Some(t) = &r.transcript {
                write!(w, "\ttranscript={}", t.join(" "))?;
            }
            if let Some(fl) = &r.frame_labels {
                let s: Vec<String> = fl.iter().map(|l| l.to_string()).collect();
                write!(w, "\tframe_labels={}", s.join(","))?;
            }
            write!(w, "\tdomain={}\tlabel_source={}", r.domain, r.label_source.as_str())?;
            if let Some(c) = r.confidence {
                write!(w, "\tconfidence={c}")?;
            }
            writeln!(w, "\tspeed_factor={}", r.speed_factor)?;
        }
        Ok(())
    }

    pub fn read(name: &str, path: &Path) -> Result<Self, CorpusError> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(parse_record(&line).map_err(|msg| CorpusError::Parse {
                line: lineno + 1,
                msg,
            })?);
        }
        Manifest::new(name, records)
    }
}

fn parse_record(line: &str) -> Result<UtteranceRecord, String> {
    let mut id = None;
    let mut audio = None;
    let mut transcript = None;
    let mut frame_labels = None;
    let mut domain = None;
    let mut label_source = None;
    let mut confidence = None;
    let mut speed_factor = 1.0;
    for field in line.split('\t') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("field without '=': {field:?}"))?;
        match key {
            "id" => id = Some(value.to_string()),
            "audio" => audio = Some(PathBuf::from(value)),
            "transcript" => {
                transcript = Some(value.split_whitespace().map(str::to_string).collect())
            }
            "frame_labels" => {
                let labels: Result<Vec<u32>, _> =
                    value.split(',').map(|t| t.parse::<u32>()).collect();
                frame_labels = Some(labels.map_err(|e| format!("bad frame label: {e}"))?);
            }
            "domain" => {
                domain = Some(Domain::parse(value).ok_or_else(|| format!("bad domain {value:?}"))?)
            }
            "label_source" => {
                label_source = Some(
                    LabelSource::parse(value)
                        .ok_or_else(|| format!("bad label_source {value:?}"))?,
                )
            }
            "confidence" => {
                confidence = Some(value.parse().map_err(|e| format!("bad confidence: {e}"))?)
            }
            "speed_factor" => {
                speed_factor = value.parse().map_err(|e| format!("bad speed_factor: {e}"))?
            }
            other => return Err(format!("unknown field {other:?}")),
        }
    }
    Ok(UtteranceRecord {
        id: id.ok_or("missing id")?,
        audio: audio.ok_or("missing audio")?,
        transcript,
        frame_labels,
        domain: domain.ok_or("missing domain")?,
        label_source: label_source.ok_or("missing label_source")?,
        confidence,
        speed_factor,
    })
}

/// Merge repeated frame labels, then drop silence (label 0).
pub fn collapse(frame_labels: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in frame_labels {
        if Some(l) != prev {
            if l != 0 {
                out.push(l);
            }
            prev = Some(l);
        }
    }
    out
}

/// Channel parameters applied to one domain's audio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainShift {
    pub tilt_db_per_octave: f64,
    /// None disables additive noise.
    pub noise_snr_db: Option<f64>,
    pub tone_offset_hz: f64,
}

impl DomainShift {
    pub fn identity() -> Self {
        DomainShift {
            tilt_db_per_octave: 0.0,
            noise_snr_db: None,
            tone_offset_hz: 0.0,
        }
    }
}

/// Parameters of the synthetic corpus generator. Identical spec + seed
/// produce byte-identical corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub vocabulary_size: usize,
    pub silence_token: String,
    pub words_per_utterance: (usize, usize),
    pub sample_rate: u32,
    pub word_duration_ms: (f64, f64),
    pub silence_duration_ms: (f64, f64),
    pub in_domain_shift: DomainShift,
    pub out_domain_shift: DomainShift,
    /// Frame geometry used when emitting gold frame labels; must match the
    /// feature extraction configuration downstream.
    pub frame_length: f64,
    pub frame_shift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocabulary_size: 10,
            silence_token: "<sil>".to_string(),
            words_per_utterance: (3, 8),
            sample_rate: 8000,
            word_duration_ms: (120.0, 240.0),
            silence_duration_ms: (60.0, 120.0),
            in_domain_shift: DomainShift::identity(),
            out_domain_shift: DomainShift {
                tilt_db_per_octave: 3.0,
                noise_snr_db: Some(15.0),
                tone_offset_hz: 40.0,
            },
            frame_length: 0.025,
            frame_shift: 0.010,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Label inventory: index 0 is silence, 1..=V are words.
    pub fn label_inventory(&self) -> Vec<String> {
        let mut labels = vec![self.silence_token.clone()];
        for k in 0..self.vocabulary_size {
            labels.push(word_token(k));
        }
        labels
    }

    fn validate(&self, n_utterances: usize) -> Result<(), CorpusError> {
        if n_utterances < 1 {
            return Err(CorpusError::DegenerateSpec("n_utterances < 1".into()));
        }
        if self.vocabulary_size < 2 {
            return Err(CorpusError::DegenerateSpec("vocabulary_size < 2".into()));
        }
        if self.word_duration_ms.0 <= 0.0 || self.word_duration_ms.1 < self.word_duration_ms.0 {
            return Err(CorpusError::DegenerateSpec("zero-length words".into()));
        }
        if self.silence_duration_ms.0 <= 0.0
            || self.silence_duration_ms.1 < self.silence_duration_ms.0
        {
            return Err(CorpusError::DegenerateSpec("zero-length silence".into()));
        }
        if self.words_per_utterance.0 < 1 || self.words_per_utterance.1 < self.words_per_utterance.0
        {
            return Err(CorpusError::DegenerateSpec("bad words_per_utterance".into()));
        }
        // words and silences must each cover at least one frame center
        let min_ms = self.word_duration_ms.0.min(self.silence_duration_ms.0);
        if min_ms / 1000.0 < 2.0 * self.frame_shift {
            return Err(CorpusError::DegenerateSpec(
                "unit durations shorter than two frame shifts".into(),
            ));
        }
        Ok(())
    }
}

pub fn word_token(k: usize) -> String {
    format!("w{k:02}")
}

/// Word-specific tone pair in the telephone band, before any domain offset.
fn word_tones(k: usize, vocab: usize) -> (f64, f64) {
    let f1 = 300.0 + 1300.0 * (k as f64 + 0.5) / vocab as f64;
    (f1, f1 * 1.9)
}

fn utterance_seed(spec_seed: u64, domain: Domain, index: usize) -> u64 {
    let d = match domain {
        Domain::InDomain => 0x1u64,
        Domain::OutOfDomain => 0x2u64,
    };
    spec_seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(d.wrapping_mul(0x2545f4914f6cdd1d))
        .wrapping_add(index as u64)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate `n_utterances` for one domain, writing WAV files under
/// `out_dir`. Returns a manifest with gold transcripts and frame labels.
pub fn generate_corpus(
    spec: &SynthSpec,
    n_utterances: usize,
    domain: Domain,
    out_dir: &Path,
) -> Result<Manifest, CorpusError> {
    spec.validate(n_utterances)?;
    std::fs::create_dir_all(out_dir)?;
    let shift = match domain {
        Domain::InDomain => spec.in_domain_shift,
        Domain::OutOfDomain => spec.out_domain_shift,
    };
    let prefix = match domain {
        Domain::InDomain => "cs",
        Domain::OutOfDomain => "wb",
    };
    let rate = spec.sample_rate as f64;
    let win = (spec.frame_length * rate).round() as usize;
    let hop = (spec.frame_shift * rate).round() as usize;

    let mut records = Vec::with_capacity(n_utterances);
    for idx in 0..n_utterances {
        let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(spec.seed, domain, idx));
        let n_words = rng.gen_range(spec.words_per_utterance.0..=spec.words_per_utterance.1);
        let words: Vec<usize> = (0..n_words)
            .map(|_| rng.gen_range(0..spec.vocabulary_size))
            .collect();

        let mut samples: Vec<f64> = Vec::new();
        let mut track: Vec<u32> = Vec::new(); // sample-level label ids
        let push_silence = |samples: &mut Vec<f64>, track: &mut Vec<u32>, rng: &mut ChaCha8Rng| {
            let ms = rng.gen_range(spec.silence_duration_ms.0..=spec.silence_duration_ms.1);
            let n = (ms / 1000.0 * rate).round() as usize;
            samples.extend(std::iter::repeat(0.0).take(n));
            track.extend(std::iter::repeat(0).take(n));
        };

        push_silence(&mut samples, &mut track, &mut rng);
        for &w in &words {
            let ms = rng.gen_range(spec.word_duration_ms.0..=spec.word_duration_ms.1);
            let n = (ms / 1000.0 * rate).round() as usize;
            let (f1, f2) = word_tones(w, spec.vocabulary_size);
            let (f1, f2) = (f1 + shift.tone_offset_hz, f2 + shift.tone_offset_hz);
            let g1 = tilt_gain(f1, shift.tilt_db_per_octave);
            let g2 = tilt_gain(f2, shift.tilt_db_per_octave);
            let ramp = (0.010 * rate) as usize;
            for i in 0..n {
                let t = i as f64 / rate;
                let mut s = 0.25 * g1 * (2.0 * std::f64::consts::PI * f1 * t).sin()
                    + 0.25 * g2 * (2.0 * std::f64::consts::PI * f2 * t).sin();
                // raised-cosine fade at the word edges
                if i < ramp {
                    s *= 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos();
                } else if i >= n - ramp {
                    let j = n - 1 - i;
                    s *= 0.5 - 0.5 * (std::f64::consts::PI * j as f64 / ramp as f64).cos();
                }
                samples.push(s);
                track.push(w as u32 + 1);
            }
            push_silence(&mut samples, &mut track, &mut rng);
        }
        // trailing pad so the last word's frames are intact
        let pad = win;
        samples.extend(std::iter::repeat(0.0).take(pad));
        track.extend(std::iter::repeat(0).take(pad));

        if let Some(snr_db) = shift.noise_snr_db {
            let power: f64 =
                samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
            let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
            for s in samples.iter_mut() {
                *s += sigma * gaussian(&mut rng);
            }
        }

        // gold frame labels at the generator's frame geometry
        let n_frames = if samples.len() < win {
            0
        } else {
            1 + (samples.len() - win) / hop
        };
        let frame_labels: Vec<u32> = (0..n_frames).map(|f| track[f * hop + win / 2]).collect();
        let transcript: Vec<String> = words
            .iter()
            .map(|&w| word_token(w))
            .collect();
        debug_assert_eq!(
            collapse(&frame_labels),
            words.iter().map(|&w| w as u32 + 1).collect::<Vec<_>>(),
            "frame labels must collapse to the transcript"
        );

        let id = format!("{prefix}-{idx:05}");
        let audio = out_dir.join(format!("{id}.wav"));
        dsp::write_wav(
            &AudioBuffer {
                samples,
                sample_rate: spec.sample_rate,
            },
            &audio,
        )?;
        records.push(UtteranceRecord {
            id,
            audio,
            transcript: Some(transcript),
            frame_labels: Some(frame_labels),
            domain,
            label_source: LabelSource::Gold,
            confidence: None,
            speed_factor: 1.0,
        });
    }
    Manifest::new(&format!("{prefix}-synth"), records)
}

fn tilt_gain(freq: f64, db_per_octave: f64) -> f64 {
    10f64.powf(db_per_octave * (freq / 1000.0).log2() / 20.0)
}

/// Union of two manifests, re-sorted by id. Records sharing an id keep the
/// first manifest's copy; each collision yields a warning string. An id
/// mapped to two different audio paths is an error.
pub fn pool(a: &Manifest, b: &Manifest) -> Result<(Manifest, Vec<String>), CorpusError> {
    let mut records = a.records.clone();
    let mut warnings = Vec::new();
    for r in &b.records {
        match a.get(&r.id) {
            Some(existing) => {
                if existing.audio != r.audio {
                    return Err(CorpusError::ConflictingRecords {
                        id: r.id.clone(),
                        a: existing.audio.clone(),
                        b: r.audio.clone(),
                    });
                }
                warnings.push(format!("duplicate id {}: keeping first record", r.id));
            }
            None => records.push(r.clone()),
        }
    }
    let m = Manifest::new(&format!("{}+{}", a.name, b.name), records)?;
    Ok((m, warnings))
}

/// Deterministic disjoint partition by shuffled index, pieces re-sorted by id.
pub fn split(
    m: &Manifest,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Manifest>, CorpusError> {
    if m.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(CorpusError::BadFractions(total));
    }
    let n = m.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut out = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0usize;
    for (i, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if i + 1 == fractions.len() {
            n
        } else {
            (cum * n as f64).round() as usize
        };
        let part: Vec<UtteranceRecord> = order[start..end]
            .iter()
            .map(|&k| m.records[k].clone())
            .collect();
        out.push(Manifest::new(&format!("{}-part{}", m.name, i), part)?);
        start = end;
    }
    Ok(out)
}
