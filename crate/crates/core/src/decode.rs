//! Decoding frame posteriors into token sequences, with the per-utterance
//! mean-confidence statistic used for semi-supervised data selection.
//!
//! Greedy decoding takes the per-frame argmax; beam decoding is
//! frame-synchronous over label paths and adds a weighted trigram LM score
//! whenever a path's collapsed token sequence grows by one word.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::acoustic::{self, AcousticError, AcousticModel, FeatureProvider};
use crate::corpus::{collapse, Manifest};
use crate::dsp::FeatureMatrix;
use crate::lm::{InterpolatedModel, LanguageModel, SENT_BEGIN};

pub const HYP_HEADER: &str = "#sstune-hyp\tv1";

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("acoustic error: {0}")]
    Acoustic(#[from] AcousticError),
    #[error("beam width must be >= 1")]
    ZeroBeam,
    #[error("lm weight must be >= 0, got {0}")]
    NegativeLmWeight(f64),
    #[error("hypothesis file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Decoded token sequence with per-frame scores and the selection statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub utterance_id: String,
    /// Word tokens, silence removed.
    pub tokens: Vec<String>,
    pub frame_label_path: Vec<u32>,
    /// Chosen per-frame acoustic log-probability, nats.
    pub frame_scores: Vec<f64>,
    /// Mean of frame_scores; -inf for zero-frame input (sorts last).
    pub mean_confidence: f64,
    /// Total fused path score (acoustic plus weighted LM terms).
    pub score: f64,
}

fn finish_hypothesis(
    model: &AcousticModel,
    id: &str,
    path: Vec<u32>,
    frame_scores: Vec<f64>,
    score: f64,
) -> Hypothesis {
    let tokens = collapse(&path)
        .iter()
        .map(|&l| model.labels[l as usize].clone())
        .collect();
    let mean_confidence = if frame_scores.is_empty() {
        f64::NEG_INFINITY
    } else {
        frame_scores.iter().sum::<f64>() / frame_scores.len() as f64
    };
    Hypothesis {
        utterance_id: id.to_string(),
        tokens,
        frame_label_path: path,
        frame_scores,
        mean_confidence,
        score,
    }
}

/// Per-frame argmax decode.
pub fn greedy_decode(
    model: &AcousticModel,
    features: &FeatureMatrix,
    utterance_id: &str,
) -> Result<Hypothesis, DecodeError> {
    let lp = acoustic::forward(model, features)?;
    let n_labels = model.n_labels();
    let mut path = Vec::with_capacity(features.frames);
    let mut scores = Vec::with_capacity(features.frames);
    for frame in 0..features.frames {
        let row = &lp[frame * n_labels..(frame + 1) * n_labels];
        let (best, &best_lp) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap();
        path.push(best as u32);
        scores.push(best_lp);
    }
    let total: f64 = scores.iter().sum();
    Ok(finish_hypothesis(model, utterance_id, path, scores, total))
}

#[derive(Clone)]
struct BeamState {
    path: Vec<u32>,
    frame_scores: Vec<f64>,
    /// Emitted word label ids, in order.
    words: Vec<u32>,
    acoustic: f64,
    lm: f64,
}

impl BeamState {
    fn total(&self, lm_weight: f64) -> f64 {
        self.acoustic + lm_weight * self.lm
    }

    fn key(&self) -> (u32, u32, u32) {
        let last_label = self.path.last().copied().unwrap_or(u32::MAX);
        let n = self.words.len();
        let w1 = if n >= 2 { self.words[n - 2] } else { u32::MAX };
        let w2 = if n >= 1 { self.words[n - 1] } else { u32::MAX };
        (last_label, w1, w2)
    }
}

fn word_lm_score(
    model: &AcousticModel,
    lm: &InterpolatedModel,
    words: &[u32],
    next: u32,
) -> f64 {
    let mut ctx: Vec<&str> = Vec::with_capacity(3);
    ctx.push(SENT_BEGIN);
    for &w in words {
        ctx.push(&model.labels[w as usize]);
    }
    let lo = ctx.len().saturating_sub(2);
    lm.log_prob(&ctx[lo..], &model.labels[next as usize])
}

/// Frame-synchronous beam search with shallow LM fusion. States sharing a
/// last label and two-word LM history are merged, keeping the best score.
///
/// The result is the best-scoring hypothesis over all widths up to `beam`,
/// so widening the beam never returns a worse fused score.
pub fn beam_decode(
    model: &AcousticModel,
    features: &FeatureMatrix,
    lm: &InterpolatedModel,
    beam: usize,
    lm_weight: f64,
    utterance_id: &str,
) -> Result<Hypothesis, DecodeError> {
    if beam == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    if lm_weight < 0.0 {
        return Err(DecodeError::NegativeLmWeight(lm_weight));
    }
    let mut best: Option<Hypothesis> = None;
    for width in 1..=beam {
        let h = beam_pass(model, features, lm, width, lm_weight, utterance_id)?;
        if best.as_ref().map_or(true, |b| h.score > b.score) {
            best = Some(h);
        }
    }
    Ok(best.expect("beam >= 1"))
}

fn beam_pass(
    model: &AcousticModel,
    features: &FeatureMatrix,
    lm: &InterpolatedModel,
    beam: usize,
    lm_weight: f64,
    utterance_id: &str,
) -> Result<Hypothesis, DecodeError> {
    let lp = acoustic::forward(model, features)?;
    let n_labels = model.n_labels();
    if features.frames == 0 {
        return Ok(finish_hypothesis(model, utterance_id, vec![], vec![], 0.0));
    }
    let mut frontier = vec![BeamState {
        path: Vec::new(),
        frame_scores: Vec::new(),
        words: Vec::new(),
        acoustic: 0.0,
        lm: 0.0,
    }];
    for frame in 0..features.frames {
        let row = &lp[frame * n_labels..(frame + 1) * n_labels];
        let mut best: HashMap<(u32, u32, u32), BeamState> = HashMap::new();
        for state in &frontier {
            let last = state.path.last().copied();
            for (label, &score) in row.iter().enumerate() {
                let label = label as u32;
                let mut next = state.clone();
                next.path.push(label);
                next.frame_scores.push(score);
                next.acoustic += score;
                if label != 0 && Some(label) != last {
                    next.lm += word_lm_score(model, lm, &state.words, label);
                    next.words.push(label);
                }
                let key = next.key();
                match best.get(&key) {
                    Some(cur) if cur.total(lm_weight) >= next.total(lm_weight) => {}
                    _ => {
                        best.insert(key, next);
                    }
                }
            }
        }
        let mut states: Vec<BeamState> = best.into_values().collect();
        states.sort_by(|a, b| {
            b.total(lm_weight)
                .partial_cmp(&a.total(lm_weight))
                .unwrap()
                .then_with(|| a.key().cmp(&b.key()))
        });
        states.truncate(beam);
        frontier = states;
    }
    let best = frontier.into_iter().next().expect("non-empty frontier");
    let total = best.total(lm_weight);
    Ok(finish_hypothesis(
        model,
        utterance_id,
        best.path,
        best.frame_scores,
        total,
    ))
}

#[derive(Clone)]
pub enum DecoderConfig<'a> {
    Greedy,
    Beam {
        lm: &'a InterpolatedModel,
        beam: usize,
        lm_weight: f64,
    },
}

/// Decode every record of a manifest, in id order. Per-utterance failures
/// are recorded and skipped, never silently dropped.
pub fn decode_manifest(
    model: &AcousticModel,
    manifest: &Manifest,
    provider: &dyn FeatureProvider,
    config: &DecoderConfig,
) -> (Vec<Hypothesis>, Vec<(String, String)>) {
    let mut hyps = Vec::with_capacity(manifest.len());
    let mut failures = Vec::new();
    for rec in manifest.records() {
        let result = provider
            .features(rec)
            .map_err(DecodeError::Acoustic)
            .and_then(|feats| match config {
                DecoderConfig::Greedy => greedy_decode(model, &feats, &rec.id),
                DecoderConfig::Beam {
                    lm,
                    beam,
                    lm_weight,
                } => beam_decode(model, &feats, lm, *beam, *lm_weight, &rec.id),
            });
        match result {
            Ok(h) => hyps.push(h),
            Err(e) => failures.push((rec.id.clone(), e.to_string())),
        }
    }
    (hyps, failures)
}

/// One line per utterance: id, mean confidence (6 decimals), tokens.
pub fn write_hypotheses(hyps: &[Hypothesis], path: &Path) -> Result<(), DecodeError> {
    let mut sorted: Vec<&Hypothesis> = hyps.iter().collect();
    sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HYP_HEADER}")?;
    for h in sorted {
        writeln!(
            w,
            "{}\t{:.6}\t{}",
            h.utterance_id,
            h.mean_confidence,
            h.tokens.join(" ")
        )?;
    }
    Ok(())
}

/// Read back (id, mean_confidence, tokens) triples.
pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, f64, Vec<String>)>, DecodeError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line != HYP_HEADER {
                return Err(DecodeError::Parse {
                    line: 1,
                    msg: format!("bad header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let id = parts
            .next()
            .ok_or_else(|| DecodeError::Parse {
                line: lineno + 1,
                msg: "missing id".into(),
            })?
            .to_string();
        let conf: f64 = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| DecodeError::Parse {
                line: lineno + 1,
                msg: "bad confidence".into(),
            })?;
        let tokens = parts
            .next()
            .map(|t| t.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default();
        out.push((id, conf, tokens));
    }
    Ok(out)
}
