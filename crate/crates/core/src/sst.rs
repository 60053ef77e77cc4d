//! Semi-supervised training: pseudo-label generation, median-confidence
//! selection, and the iterative retraining loop.
//!
//! Each iteration re-decodes the entire unlabeled pool with the current
//! model, keeps the utterances at or above the median confidence, and
//! trains a fresh model on the selection (optionally pooled with the gold
//! in-domain data). Stage artifacts are written atomically under
//! `stage-k/` directories.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::acoustic::{
    self, AcousticError, AcousticModel, FeatureProvider, TrainConfig, WavMfccProvider,
};
use crate::corpus::{self, CorpusError, LabelSource, Manifest, UtteranceRecord};
use crate::decode::{self, DecodeError, Hypothesis};
use crate::dsp::MfccConfig;

#[derive(Debug, Error)]
pub enum SstError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("acoustic error: {0}")]
    Acoustic(#[from] AcousticError),
    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),
    #[error("record {0} has no confidence")]
    MissingConfidence(String),
    #[error("selection kept no records (median {median}, {n_candidates} candidates)")]
    EmptySelection { median: f64, n_candidates: usize },
    #[error("plan invalid: {0}")]
    BadPlan(String),
}

/// Outcome of one median-threshold selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub n_candidates: usize,
    pub median_confidence: f64,
    pub n_selected: usize,
    pub selected_ids: Vec<String>,
    pub rejected_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SstStrategy {
    /// Train on the selected pseudo-labeled data only.
    OodOnly,
    /// Pool the selection with the gold in-domain manifest.
    Pooled,
}

#[derive(Debug, Clone)]
pub struct SstPlan {
    pub strategy: SstStrategy,
    pub iterations: usize,
    pub perturb_factors: Vec<f64>,
    pub train_cfg: TrainConfig,
}

impl SstPlan {
    fn validate(&self) -> Result<(), SstError> {
        if self.iterations < 1 {
            return Err(SstError::BadPlan("iterations must be >= 1".into()));
        }
        if self.perturb_factors.is_empty() || self.perturb_factors.iter().any(|f| !(*f > 0.0)) {
            return Err(SstError::BadPlan("perturb factors must be positive".into()));
        }
        Ok(())
    }
}

/// Decode each utterance greedily and attach tokens, frame labels, and
/// confidence as pseudo supervision. Undecodable audio is skipped; the
/// skip count is returned alongside the hypotheses.
pub fn pseudo_label(
    model: &AcousticModel,
    unlabeled: &Manifest,
    provider: &dyn FeatureProvider,
) -> Result<(Manifest, Vec<Hypothesis>, usize), SstError> {
    let (hyps, failures) =
        decode::decode_manifest(model, unlabeled, provider, &decode::DecoderConfig::Greedy);
    let mut records = Vec::with_capacity(hyps.len());
    for h in &hyps {
        let orig = unlabeled
            .get(&h.utterance_id)
            .expect("hypothesis id from this manifest");
        records.push(UtteranceRecord {
            id: orig.id.clone(),
            audio: orig.audio.clone(),
            transcript: Some(h.tokens.clone()),
            frame_labels: Some(h.frame_label_path.clone()),
            domain: orig.domain,
            label_source: LabelSource::Pseudo,
            confidence: Some(h.mean_confidence),
            speed_factor: orig.speed_factor,
        });
    }
    let manifest = Manifest::new(&format!("{}-pseudo", unlabeled.name), records)?;
    Ok((manifest, hyps, failures.len()))
}

/// Sample median: mean of the two middle order statistics for even n.
pub fn sample_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Keep records whose confidence is at or above the sample median.
pub fn select_by_median(
    labeled: &Manifest,
) -> Result<(Manifest, Manifest, SelectionReport), SstError> {
    let mut confidences = Vec::with_capacity(labeled.len());
    for r in labeled.records() {
        confidences.push(
            r.confidence
                .ok_or_else(|| SstError::MissingConfidence(r.id.clone()))?,
        );
    }
    if labeled.is_empty() {
        return Err(SstError::EmptySelection {
            median: f64::NAN,
            n_candidates: 0,
        });
    }
    let median = sample_median(&confidences);
    let mut selected = Vec::new();
    let mut rejected = Vec::new();
    for (r, &c) in labeled.records().iter().zip(&confidences) {
        if c >= median {
            selected.push(r.clone());
        } else {
            rejected.push(r.clone());
        }
    }
    let report = SelectionReport {
        n_candidates: labeled.len(),
        median_confidence: median,
        n_selected: selected.len(),
        selected_ids: selected.iter().map(|r| r.id.clone()).collect(),
        rejected_ids: rejected.iter().map(|r| r.id.clone()).collect(),
    };
    let sel = Manifest::new(&format!("{}-selected", labeled.name), selected)?;
    let rej = Manifest::new(&format!("{}-rejected", labeled.name), rejected)?;
    Ok((sel, rej, report))
}

/// Paths persisted for one SST iteration.
#[derive(Debug, Clone)]
pub struct StageArtifacts {
    pub dir: PathBuf,
    pub model: PathBuf,
    pub report: SelectionReport,
}

fn hidden_dims(model: &AcousticModel) -> Vec<usize> {
    model.layers[..model.layers.len() - 1]
        .iter()
        .map(|l| l.out_dim)
        .collect()
}

fn write_report(report: &SelectionReport, path: &Path) -> Result<(), SstError> {
    let text = format!(
        "n_candidates={}\nmedian={}\nn_selected={}\n",
        report.n_candidates, report.median_confidence, report.n_selected
    );
    fs::write(path, text)?;
    Ok(())
}

/// Run the SST loop. The unlabeled pool is speed-perturbed once up front;
/// every iteration re-labels the whole perturbed pool with the latest
/// model, selects by median confidence, and trains a fresh model from
/// scratch on the selection (plus gold data under the pooled strategy).
pub fn run_sst(
    bootstrap: &AcousticModel,
    in_domain_gold: &Manifest,
    unlabeled_ood: &Manifest,
    plan: &SstPlan,
    mfcc_cfg: &MfccConfig,
    out_dir: &Path,
) -> Result<(AcousticModel, Vec<StageArtifacts>), SstError> {
    plan.validate()?;
    fs::create_dir_all(out_dir)?;
    let provider = WavMfccProvider {
        cfg: mfcc_cfg.clone(),
    };
    let perturbed_dir = out_dir.join("perturbed");
    let perturbed = crate::dsp::speed_perturb_manifest(
        unlabeled_ood,
        &plan.perturb_factors,
        mfcc_cfg,
        &perturbed_dir,
    )?;

    let mut current = bootstrap.clone();
    let mut stages = Vec::with_capacity(plan.iterations);
    for k in 1..=plan.iterations {
        let (pseudo, hyps, _skipped) = pseudo_label(&current, &perturbed, &provider)?;
        let (selected, rejected, report) = select_by_median(&pseudo)?;
        if selected.is_empty() {
            return Err(SstError::EmptySelection {
                median: report.median_confidence,
                n_candidates: report.n_candidates,
            });
        }
        let train_set = match plan.strategy {
            SstStrategy::OodOnly => selected.clone(),
            SstStrategy::Pooled => corpus::pool(&selected, in_domain_gold)?.0,
        };
        let mut cfg = plan.train_cfg.clone();
        cfg.seed = cfg.seed.wrapping_add(k as u64);
        let fresh = acoustic::init_model(
            current.feature_dim(),
            current.context,
            &hidden_dims(&current),
            current.labels.clone(),
            cfg.seed,
        )?;
        let (trained, _losses) = acoustic::train(&fresh, &train_set, &provider, &cfg)?;

        // stage directory, written atomically via rename
        let stage_dir = out_dir.join(format!("stage-{k}"));
        let tmp_dir = out_dir.join(format!("stage-{k}.tmp"));
        if tmp_dir.exists() {
            fs::remove_dir_all(&tmp_dir)?;
        }
        fs::create_dir_all(&tmp_dir)?;
        let model_path = tmp_dir.join("model.bin");
        acoustic::save_model(&trained, &model_path)?;
        selected.write(&tmp_dir.join("selected.manifest"))?;
        rejected.write(&tmp_dir.join("rejected.manifest"))?;
        decode::write_hypotheses(&hyps, &tmp_dir.join("hypotheses.txt"))?;
        write_report(&report, &tmp_dir.join("report"))?;
        if stage_dir.exists() {
            fs::remove_dir_all(&stage_dir)?;
        }
        fs::rename(&tmp_dir, &stage_dir)?;

        stages.push(StageArtifacts {
            dir: stage_dir.clone(),
            model: stage_dir.join("model.bin"),
            report,
        });
        current = trained;
    }
    Ok((current, stages))
}
