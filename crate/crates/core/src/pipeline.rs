//! Experiment orchestration: one config drives corpus synthesis, baseline
//! training, language-model estimation, both semi-supervised arms, their
//! fine-tuned variants, a transfer arm, scoring, and the final report.
//!
//! Every phase persists its artifacts under its own directory inside the
//! experiment output tree and drops a `.done` marker on success; completed
//! phases are skipped on re-run, so an interrupted experiment resumes
//! where it stopped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::acoustic::{
    self, AcousticError, TrainConfig, TrainMode, WavMfccProvider,
};
use crate::corpus::{
    self, CorpusError, Domain, LabelSource, Manifest, SynthSpec, UtteranceRecord,
};
use crate::decode::{self, DecodeError, DecoderConfig};
use crate::dsp::MfccConfig;
use crate::eval::{EvalError, ExperimentReport};
use crate::lm::{self, InterpolatedModel, LmError};
use crate::sst::{self, SstError, SstPlan, SstStrategy};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("acoustic error: {0}")]
    Acoustic(#[from] AcousticError),
    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),
    #[error("language model error: {0}")]
    Lm(#[from] LmError),
    #[error("semi-supervised stage error: {0}")]
    Sst(#[from] SstError),
    #[error("scoring error: {0}")]
    Eval(#[from] EvalError),
    #[error("config error: {0}")]
    Config(String),
    #[error("phase {phase} requires completed phase {missing}")]
    MissingUpstream { phase: String, missing: String },
    #[error("phase {phase} failed: {source}")]
    PhaseFailed {
        phase: String,
        #[source]
        source: Box<PipelineError>,
    },
}

/// The report lists conditions in this fixed order; `baseline` is the
/// reference row.
pub const CONDITIONS: [&str; 6] = ["baseline", "ood", "ood+ft", "pooled", "pooled+ft", "transfer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Corpus,
    Baseline,
    Lm,
    SstOod,
    SstPooled,
    FineTuneOod,
    FineTunePooled,
    Transfer,
    Decode,
    Report,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::Corpus,
        Phase::Baseline,
        Phase::Lm,
        Phase::SstOod,
        Phase::SstPooled,
        Phase::FineTuneOod,
        Phase::FineTunePooled,
        Phase::Transfer,
        Phase::Decode,
        Phase::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Corpus => "corpus",
            Phase::Baseline => "baseline",
            Phase::Lm => "lm",
            Phase::SstOod => "sst_ood",
            Phase::SstPooled => "sst_pooled",
            Phase::FineTuneOod => "fine_tune_ood",
            Phase::FineTunePooled => "fine_tune_pooled",
            Phase::Transfer => "transfer",
            Phase::Decode => "decode",
            Phase::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.iter().copied().find(|p| p.name() == s)
    }

    fn deps(self) -> &'static [Phase] {
        match self {
            Phase::Corpus => &[],
            Phase::Baseline => &[Phase::Corpus],
            Phase::Lm => &[Phase::Corpus],
            Phase::SstOod => &[Phase::Corpus, Phase::Baseline],
            Phase::SstPooled => &[Phase::Corpus, Phase::Baseline],
            Phase::FineTuneOod => &[Phase::SstOod],
            Phase::FineTunePooled => &[Phase::SstPooled],
            Phase::Transfer => &[Phase::Corpus],
            Phase::Decode => &[
                Phase::Baseline,
                Phase::Lm,
                Phase::SstOod,
                Phase::SstPooled,
                Phase::FineTuneOod,
                Phase::FineTunePooled,
                Phase::Transfer,
            ],
            Phase::Report => &[Phase::Decode],
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one experiment needs, flattened so every value can live on
/// one `section.key=value` line of a config file or a CLI override.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub vocabulary_size: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub words_per_utterance: (usize, usize),
    pub mfcc: MfccConfig,
    pub context: usize,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub fine_tune_lr_scale: f64,
    pub fine_tune_epochs: usize,
    pub sst_iterations: usize,
    pub perturb_factors: Vec<f64>,
    pub beam: usize,
    pub lm_weight: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("experiment-out"),
            master_seed: 17,
            vocabulary_size: 12,
            n_train: 24,
            n_dev: 30,
            n_test: 50,
            n_ood: 120,
            words_per_utterance: (3, 8),
            mfcc: MfccConfig::default(),
            context: 2,
            hidden_dims: vec![48],
            learning_rate: 0.05,
            epochs: 6,
            batch_size: 128,
            l2: 1e-5,
            fine_tune_lr_scale: 0.1,
            fine_tune_epochs: 12,
            sst_iterations: 1,
            perturb_factors: vec![0.9, 1.0, 1.1],
            beam: 4,
            lm_weight: 0.4,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .trim()
        .parse()
        .map_err(|_| PipelineError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, PipelineError> {
    value
        .split(',')
        .map(|v| parse_num(key, v))
        .collect::<Result<Vec<T>, _>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(PipelineError::Config(format!("empty list for {key}")))
            } else {
                Ok(v)
            }
        })
}

impl ExperimentConfig {
    /// Apply one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "seed" => self.master_seed = parse_num(key, value)?,
            "corpus.vocabulary_size" => self.vocabulary_size = parse_num(key, value)?,
            "corpus.n_train" => self.n_train = parse_num(key, value)?,
            "corpus.n_dev" => self.n_dev = parse_num(key, value)?,
            "corpus.n_test" => self.n_test = parse_num(key, value)?,
            "corpus.n_ood" => self.n_ood = parse_num(key, value)?,
            "corpus.words_min" => self.words_per_utterance.0 = parse_num(key, value)?,
            "corpus.words_max" => self.words_per_utterance.1 = parse_num(key, value)?,
            "mfcc.n_mels" => self.mfcc.n_mels = parse_num(key, value)?,
            "mfcc.n_coeffs" => self.mfcc.n_coeffs = parse_num(key, value)?,
            "model.context" => self.context = parse_num(key, value)?,
            "model.hidden_dims" => self.hidden_dims = parse_list(key, value)?,
            "train.learning_rate" => self.learning_rate = parse_num(key, value)?,
            "train.epochs" => self.epochs = parse_num(key, value)?,
            "train.batch_size" => self.batch_size = parse_num(key, value)?,
            "train.l2" => self.l2 = parse_num(key, value)?,
            "finetune.lr_scale" => self.fine_tune_lr_scale = parse_num(key, value)?,
            "finetune.epochs" => self.fine_tune_epochs = parse_num(key, value)?,
            "sst.iterations" => self.sst_iterations = parse_num(key, value)?,
            "sst.perturb_factors" => self.perturb_factors = parse_list(key, value)?,
            "decode.beam" => self.beam = parse_num(key, value)?,
            "decode.lm_weight" => self.lm_weight = parse_num(key, value)?,
            other => {
                return Err(PipelineError::Config(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    /// Read a flat key=value config file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg = ExperimentConfig::default();
        let text = fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    /// Canonical text form; parsing it back reproduces the config.
    pub fn to_config_text(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let dims = self
            .hidden_dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "out_dir={}\nseed={}\ncorpus.vocabulary_size={}\ncorpus.n_train={}\ncorpus.n_dev={}\ncorpus.n_test={}\ncorpus.n_ood={}\ncorpus.words_min={}\ncorpus.words_max={}\nmfcc.n_mels={}\nmfcc.n_coeffs={}\nmodel.context={}\nmodel.hidden_dims={}\ntrain.learning_rate={}\ntrain.epochs={}\ntrain.batch_size={}\ntrain.l2={}\nfinetune.lr_scale={}\nfinetune.epochs={}\nsst.iterations={}\nsst.perturb_factors={}\ndecode.beam={}\ndecode.lm_weight={}\n",
            self.out_dir.display(),
            self.master_seed,
            self.vocabulary_size,
            self.n_train,
            self.n_dev,
            self.n_test,
            self.n_ood,
            self.words_per_utterance.0,
            self.words_per_utterance.1,
            self.mfcc.n_mels,
            self.mfcc.n_coeffs,
            self.context,
            dims,
            self.learning_rate,
            self.epochs,
            self.batch_size,
            self.l2,
            self.fine_tune_lr_scale,
            self.fine_tune_epochs,
            self.sst_iterations,
            list(&self.perturb_factors),
            self.beam,
            self.lm_weight,
        )
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 || self.n_ood == 0 {
            return Err(PipelineError::Config("all corpus counts must be > 0".into()));
        }
        if self.sst_iterations < 1 {
            return Err(PipelineError::Config("sst.iterations must be >= 1".into()));
        }
        Ok(())
    }

    fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            vocabulary_size: self.vocabulary_size,
            words_per_utterance: self.words_per_utterance,
            frame_length: self.mfcc.frame_length,
            frame_shift: self.mfcc.frame_shift,
            seed: phase_seed(self.master_seed, "corpus"),
            ..Default::default()
        }
    }

    fn train_cfg(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            base_learning_rate: self.learning_rate,
            fine_tune_lr_scale: self.fine_tune_lr_scale,
            epochs: match mode {
                TrainMode::FineTune => self.fine_tune_epochs,
                _ => self.epochs,
            },
            batch_size: self.batch_size,
            seed,
            l2: self.l2,
        }
    }

    fn phase_dir(&self, phase: Phase) -> PathBuf {
        self.out_dir.join(phase.name())
    }
}

/// Per-phase seed derived from the master seed and the phase name
/// (FNV-1a over the name, then a splitmix finalizer).
pub fn phase_seed(master: u64, phase: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ master;
    for b in phase.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
    h ^ (h >> 31)
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn file_digest(path: &Path) -> Result<String, PipelineError> {
    Ok(format!("{:016x}", fnv64(&fs::read(path)?)))
}

/// Sidecar provenance record for a model file: where its parameters came
/// from and what data produced them.
fn write_lineage(
    model_path: &Path,
    parent: Option<&Path>,
    training_manifest: &Path,
    label_source: &str,
    cfg: &ExperimentConfig,
) -> Result<(), PipelineError> {
    let parent_hash = match parent {
        Some(p) => file_digest(p)?,
        None => "none".to_string(),
    };
    let text = format!(
        "parent_model_hash={}\ntraining_manifest={}\ntraining_manifest_hash={}\nlabel_source={}\nconfig_hash={:016x}\n",
        parent_hash,
        training_manifest.display(),
        file_digest(training_manifest)?,
        label_source,
        fnv64(cfg.to_config_text().as_bytes()),
    );
    fs::write(lineage_path(model_path), text)?;
    Ok(())
}

pub fn lineage_path(model_path: &Path) -> PathBuf {
    let mut os = model_path.as_os_str().to_os_string();
    os.push(".lineage");
    PathBuf::from(os)
}

pub fn read_lineage(model_path: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let text = fs::read_to_string(lineage_path(model_path))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.to_string(), v.to_string());
        }
    }
    Ok(map)
}

fn done_marker(dir: &Path) -> PathBuf {
    dir.join(".done")
}

pub fn phase_complete(cfg: &ExperimentConfig, phase: Phase) -> bool {
    done_marker(&cfg.phase_dir(phase)).exists()
}

fn sentences(m: &Manifest) -> Vec<Vec<String>> {
    m.records()
        .iter()
        .filter_map(|r| r.transcript.clone())
        .collect()
}

fn strip_labels(m: &Manifest, name: &str) -> Result<Manifest, CorpusError> {
    let records = m
        .records()
        .iter()
        .map(|r| UtteranceRecord {
            transcript: None,
            frame_labels: None,
            confidence: None,
            label_source: LabelSource::Gold,
            ..r.clone()
        })
        .collect();
    Manifest::new(name, records)
}

fn load_manifest(cfg: &ExperimentConfig, file: &str) -> Result<Manifest, PipelineError> {
    let path = cfg.phase_dir(Phase::Corpus).join(file);
    let name = file.trim_end_matches(".manifest");
    Ok(Manifest::read(name, &path)?)
}

fn provider(cfg: &ExperimentConfig) -> WavMfccProvider {
    WavMfccProvider {
        cfg: cfg.mfcc.clone(),
    }
}

fn phase_corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<(), PipelineError> {
    let spec = cfg.synth_spec();
    let total = cfg.n_train + cfg.n_dev + cfg.n_test;
    let all_in = corpus::generate_corpus(&spec, total, Domain::InDomain, &dir.join("audio_in"))?;
    let fracs = [
        cfg.n_train as f64 / total as f64,
        cfg.n_dev as f64 / total as f64,
        cfg.n_test as f64 / total as f64,
    ];
    let parts = corpus::split(&all_in, &fracs, phase_seed(cfg.master_seed, "corpus-split"))?;
    for (part, file) in parts.iter().zip(["train.manifest", "dev.manifest", "test.manifest"]) {
        part.write(&dir.join(file))?;
    }
    let ood = corpus::generate_corpus(
        &spec,
        cfg.n_ood,
        Domain::OutOfDomain,
        &dir.join("audio_ood"),
    )?;
    ood.write(&dir.join("ood_gold.manifest"))?;
    strip_labels(&ood, "ood_unlabeled")?.write(&dir.join("ood_unlabeled.manifest"))?;
    fs::write(dir.join("labels.txt"), spec.label_inventory().join("\n") + "\n")?;
    Ok(())
}

fn train_scratch(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    manifest_path: &Path,
    seed_name: &str,
    dir: &Path,
    label_source: &str,
) -> Result<PathBuf, PipelineError> {
    let labels = cfg.synth_spec().label_inventory();
    let seed = phase_seed(cfg.master_seed, seed_name);
    let init = acoustic::init_model(
        cfg.mfcc.n_coeffs,
        cfg.context,
        &cfg.hidden_dims,
        labels,
        seed,
    )?;
    let tc = cfg.train_cfg(TrainMode::Scratch, seed);
    let (model, losses) = acoustic::train(&init, manifest, &provider(cfg), &tc)?;
    let model_path = dir.join("model.bin");
    acoustic::save_model(&model, &model_path)?;
    write_losses(&losses, &dir.join("losses.txt"))?;
    write_lineage(&model_path, None, manifest_path, label_source, cfg)?;
    Ok(model_path)
}

fn write_losses(losses: &[f64], path: &Path) -> Result<(), PipelineError> {
    let text: String = losses.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text)?;
    Ok(())
}

fn phase_baseline(cfg: &ExperimentConfig, dir: &Path) -> Result<(), PipelineError> {
    let train = load_manifest(cfg, "train.manifest")?;
    let path = cfg.phase_dir(Phase::Corpus).join("train.manifest");
    train_scratch(cfg, &train, &path, "baseline", dir, "gold")?;
    Ok(())
}

fn phase_lm(cfg: &ExperimentConfig, dir: &Path) -> Result<(), PipelineError> {
    let train = load_manifest(cfg, "train.manifest")?;
    let dev = load_manifest(cfg, "dev.manifest")?;
    let ood = load_manifest(cfg, "ood_gold.manifest")?;
    let vocab: Vec<String> = (0..cfg.vocabulary_size).map(corpus::word_token).collect();
    let in_lm = lm::train_lm(&sentences(&train), Some(&vocab))?;
    let bg_lm = lm::train_lm(&sentences(&ood), Some(&vocab))?;
    lm::write_arpa(&in_lm, &dir.join("in_domain.arpa"))?;
    lm::write_arpa(&bg_lm, &dir.join("background.arpa"))?;
    let fit = lm::fit_interpolation_weights(&[in_lm, bg_lm], &sentences(&dev), 1e-6, 100)?;
    let weights: String = fit.weights.iter().map(|w| format!("{w}\n")).collect();
    fs::write(dir.join("weights.txt"), weights)?;
    write_losses(&fit.ll_trace, &dir.join("ll_trace.txt"))?;
    Ok(())
}

fn load_lm(cfg: &ExperimentConfig) -> Result<InterpolatedModel, PipelineError> {
    let dir = cfg.phase_dir(Phase::Lm);
    let components = vec![
        lm::read_arpa(&dir.join("in_domain.arpa"))?,
        lm::read_arpa(&dir.join("background.arpa"))?,
    ];
    let weights: Vec<f64> = fs::read_to_string(dir.join("weights.txt"))?
        .lines()
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| PipelineError::Config("bad weights file".into()))
        })
        .collect::<Result<_, _>>()?;
    Ok(InterpolatedModel::new(components, weights)?)
}

fn phase_sst(
    cfg: &ExperimentConfig,
    dir: &Path,
    strategy: SstStrategy,
    seed_name: &str,
) -> Result<(), PipelineError> {
    let train = load_manifest(cfg, "train.manifest")?;
    let unlabeled = load_manifest(cfg, "ood_unlabeled.manifest")?;
    let bootstrap_path = cfg.phase_dir(Phase::Baseline).join("model.bin");
    let bootstrap = acoustic::load_model(&bootstrap_path)?;
    let plan = SstPlan {
        strategy,
        iterations: cfg.sst_iterations,
        perturb_factors: cfg.perturb_factors.clone(),
        train_cfg: cfg.train_cfg(TrainMode::Scratch, phase_seed(cfg.master_seed, seed_name)),
    };
    let (model, stages) = sst::run_sst(&bootstrap, &train, &unlabeled, &plan, &cfg.mfcc, dir)?;
    let model_path = dir.join("model.bin");
    acoustic::save_model(&model, &model_path)?;
    let last = stages.last().expect("at least one iteration");
    write_lineage(
        &model_path,
        Some(&bootstrap_path),
        &last.dir.join("selected.manifest"),
        "pseudo",
        cfg,
    )?;
    Ok(())
}

fn phase_fine_tune(
    cfg: &ExperimentConfig,
    dir: &Path,
    parent_phase: Phase,
    seed_name: &str,
) -> Result<(), PipelineError> {
    let train = load_manifest(cfg, "train.manifest")?;
    // fine-tuning always consumes gold supervision
    for r in train.records() {
        if r.label_source != LabelSource::Gold {
            return Err(PipelineError::Config(format!(
                "fine-tuning data must be gold-labeled; {} is not",
                r.id
            )));
        }
    }
    let parent_path = cfg.phase_dir(parent_phase).join("model.bin");
    let parent = acoustic::load_model(&parent_path)?;
    let tc = cfg.train_cfg(TrainMode::FineTune, phase_seed(cfg.master_seed, seed_name));
    let (model, losses) = acoustic::train(&parent, &train, &provider(cfg), &tc)?;
    let model_path = dir.join("model.bin");
    acoustic::save_model(&model, &model_path)?;
    write_losses(&losses, &dir.join("losses.txt"))?;
    write_lineage(
        &model_path,
        Some(&parent_path),
        &cfg.phase_dir(Phase::Corpus).join("train.manifest"),
        "gold",
        cfg,
    )?;
    Ok(())
}

fn phase_transfer(cfg: &ExperimentConfig, dir: &Path) -> Result<(), PipelineError> {
    // source model trained on the other domain's gold data
    let ood_gold = load_manifest(cfg, "ood_gold.manifest")?;
    let ood_path = cfg.phase_dir(Phase::Corpus).join("ood_gold.manifest");
    let source_dir = dir.join("source");
    fs::create_dir_all(&source_dir)?;
    let source_path = train_scratch(
        cfg,
        &ood_gold,
        &ood_path,
        "transfer-source",
        &source_dir,
        "gold",
    )?;
    let source = acoustic::load_model(&source_path)?;
    let seed = phase_seed(cfg.master_seed, "transfer");
    let labels = cfg.synth_spec().label_inventory();
    let swapped = acoustic::transfer_output_layer(&source, labels, seed)?;
    let train = load_manifest(cfg, "train.manifest")?;
    let tc = cfg.train_cfg(TrainMode::Transfer, seed);
    let (model, losses) = acoustic::train(&swapped, &train, &provider(cfg), &tc)?;
    let model_path = dir.join("model.bin");
    acoustic::save_model(&model, &model_path)?;
    write_losses(&losses, &dir.join("losses.txt"))?;
    write_lineage(
        &model_path,
        Some(&source_path),
        &cfg.phase_dir(Phase::Corpus).join("train.manifest"),
        "gold",
        cfg,
    )?;
    Ok(())
}

fn condition_model_path(cfg: &ExperimentConfig, condition: &str) -> PathBuf {
    let phase = match condition {
        "baseline" => Phase::Baseline,
        "ood" => Phase::SstOod,
        "ood+ft" => Phase::FineTuneOod,
        "pooled" => Phase::SstPooled,
        "pooled+ft" => Phase::FineTunePooled,
        "transfer" => Phase::Transfer,
        other => unreachable!("unknown condition {other}"),
    };
    cfg.phase_dir(phase).join("model.bin")
}

fn phase_decode(cfg: &ExperimentConfig, dir: &Path) -> Result<(), PipelineError> {
    let test = load_manifest(cfg, "test.manifest")?;
    let lang = load_lm(cfg)?;
    let refs: BTreeMap<String, Vec<String>> = test
        .records()
        .iter()
        .map(|r| (r.id.clone(), r.transcript.clone().unwrap_or_default()))
        .collect();
    let prov = provider(cfg);
    let mut wer_lines = String::from("condition\twer\n");
    for condition in CONDITIONS {
        let model = acoustic::load_model(&condition_model_path(cfg, condition))?;
        let dconf = DecoderConfig::Beam {
            lm: &lang,
            beam: cfg.beam,
            lm_weight: cfg.lm_weight,
        };
        let (hyps, failures) = decode::decode_manifest(&model, &test, &prov, &dconf);
        if let Some((id, why)) = failures.first() {
            return Err(PipelineError::Config(format!(
                "decoding failed for {id} under {condition}: {why}"
            )));
        }
        let safe = condition.replace('+', "_");
        decode::write_hypotheses(&hyps, &dir.join(format!("{safe}.hyp")))?;
        let hyp_map: BTreeMap<String, Vec<String>> = hyps
            .into_iter()
            .map(|h| (h.utterance_id, h.tokens))
            .collect();
        let wer = crate::eval::corpus_wer(&refs, &hyp_map)?;
        wer_lines.push_str(&format!("{condition}\t{}\n", wer.wer));
    }
    fs::write(dir.join("wer.records"), wer_lines)?;
    Ok(())
}

/// Read the persisted per-condition error rates from the decode phase.
pub fn read_wer_records(cfg: &ExperimentConfig) -> Result<Vec<(String, f64)>, PipelineError> {
    let path = cfg.phase_dir(Phase::Decode).join("wer.records");
    let text = fs::read_to_string(&path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let (cond, wer) = line
            .split_once('\t')
            .ok_or_else(|| PipelineError::Config(format!("malformed line in {}", path.display())))?;
        out.push((cond.to_string(), parse_num("wer", wer)?));
    }
    Ok(out)
}

fn phase_report(cfg: &ExperimentConfig, dir: &Path) -> Result<(), PipelineError> {
    let conditions = read_wer_records(cfg)?;
    let report = ExperimentReport::new("baseline", &conditions)?;
    fs::write(dir.join("report.txt"), report.to_string())?;
    fs::write(dir.join("report.tsv"), report.to_records())?;
    Ok(())
}

fn execute(cfg: &ExperimentConfig, phase: Phase, dir: &Path) -> Result<(), PipelineError> {
    match phase {
        Phase::Corpus => phase_corpus(cfg, dir),
        Phase::Baseline => phase_baseline(cfg, dir),
        Phase::Lm => phase_lm(cfg, dir),
        Phase::SstOod => phase_sst(cfg, dir, SstStrategy::OodOnly, "sst_ood"),
        Phase::SstPooled => phase_sst(cfg, dir, SstStrategy::Pooled, "sst_pooled"),
        Phase::FineTuneOod => phase_fine_tune(cfg, dir, Phase::SstOod, "fine_tune_ood"),
        Phase::FineTunePooled => phase_fine_tune(cfg, dir, Phase::SstPooled, "fine_tune_pooled"),
        Phase::Transfer => phase_transfer(cfg, dir),
        Phase::Decode => phase_decode(cfg, dir),
        Phase::Report => phase_report(cfg, dir),
    }
}

/// Run one phase. Completed phases are a no-op; missing upstream phases are
/// reported by name. A phase directory without a `.done` marker is treated
/// as a crashed attempt and rebuilt from scratch.
pub fn run_phase(cfg: &ExperimentConfig, phase: Phase) -> Result<(), PipelineError> {
    cfg.validate()?;
    if phase_complete(cfg, phase) {
        return Ok(());
    }
    for dep in phase.deps() {
        if !phase_complete(cfg, *dep) {
            return Err(PipelineError::MissingUpstream {
                phase: phase.name().to_string(),
                missing: dep.name().to_string(),
            });
        }
    }
    let dir = cfg.phase_dir(phase);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    execute(cfg, phase, &dir).map_err(|e| PipelineError::PhaseFailed {
        phase: phase.name().to_string(),
        source: Box::new(e),
    })?;
    fs::write(done_marker(&dir), "ok\n")?;
    Ok(())
}

/// Run the full experiment matrix, skipping phases already completed, and
/// return the final report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_config_text())?;
    for phase in Phase::ALL {
        run_phase(cfg, phase)?;
    }
    let conditions = read_wer_records(cfg)?;
    Ok(ExperimentReport::new("baseline", &conditions)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.master_seed = 99;
        cfg.hidden_dims = vec![32, 48];
        cfg.perturb_factors = vec![0.95, 1.05];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, cfg.to_config_text()).unwrap();
        let parsed = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn config_rejects_unknown_key() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(
            cfg.set("train.momentum", "0.9"),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn config_comments_and_blank_lines_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, "# a comment\n\nseed=5  # trailing\ndecode.beam=7\n").unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.master_seed, 5);
        assert_eq!(cfg.beam, 7);
    }

    #[test]
    fn phase_seeds_differ_by_name_and_master() {
        let a = phase_seed(1, "baseline");
        let b = phase_seed(1, "sst_ood");
        let c = phase_seed(2, "baseline");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, phase_seed(1, "baseline"));
    }

    #[test]
    fn phase_names_parse_and_deps_point_backwards() {
        for (i, p) in Phase::ALL.iter().enumerate() {
            assert_eq!(Phase::parse(p.name()), Some(*p));
            for d in p.deps() {
                let j = Phase::ALL.iter().position(|q| q == d).unwrap();
                assert!(j < i, "{} depends on later phase {}", p, d);
            }
        }
        assert_eq!(Phase::parse("nope"), None);
    }

    #[test]
    fn run_phase_requires_upstream() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let err = run_phase(&cfg, Phase::FineTunePooled).unwrap_err();
        match err {
            PipelineError::MissingUpstream { phase, missing } => {
                assert_eq!(phase, "fine_tune_pooled");
                assert_eq!(missing, "sst_pooled");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            out_dir: dir.to_path_buf(),
            master_seed: 11,
            vocabulary_size: 4,
            n_train: 6,
            n_dev: 3,
            n_test: 4,
            n_ood: 6,
            words_per_utterance: (2, 4),
            hidden_dims: vec![24],
            context: 2,
            epochs: 3,
            fine_tune_epochs: 2,
            perturb_factors: vec![1.0],
            beam: 2,
            ..Default::default()
        }
    }

    #[test]
    fn full_experiment_runs_resumes_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&dir.path().join("a"));
        let report = run_experiment(&cfg).unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.condition.as_str()).collect();
        assert_eq!(names, CONDITIONS.to_vec());

        // all phase markers present, lineage attached to every model
        for phase in Phase::ALL {
            assert!(phase_complete(&cfg, phase), "{phase} not marked done");
        }
        for condition in CONDITIONS {
            let lineage = read_lineage(&condition_model_path(&cfg, condition)).unwrap();
            assert!(lineage.contains_key("training_manifest_hash"));
            if condition.ends_with("+ft") || condition == "transfer" {
                assert_eq!(lineage["label_source"], "gold");
                assert!(lineage["training_manifest"].ends_with("train.manifest"));
            }
        }

        // re-run over the completed tree: no phase re-executes, bytes identical
        let report_path = cfg.phase_dir(Phase::Report).join("report.txt");
        let before = fs::read(&report_path).unwrap();
        let mtime = fs::metadata(&report_path).unwrap().modified().unwrap();
        let report2 = run_experiment(&cfg).unwrap();
        assert_eq!(report.to_records(), report2.to_records());
        assert_eq!(before, fs::read(&report_path).unwrap());
        assert_eq!(mtime, fs::metadata(&report_path).unwrap().modified().unwrap());

        // an independent run with the same seed reproduces the report bytes
        let cfg_b = ExperimentConfig {
            out_dir: dir.path().join("b"),
            ..tiny_config(&dir.path().join("b"))
        };
        run_experiment(&cfg_b).unwrap();
        let other = fs::read(cfg_b.phase_dir(Phase::Report).join("report.txt")).unwrap();
        assert_eq!(before, other);
    }

    #[test]
    fn report_phase_rebuilds_from_wer_records_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        // fabricate a completed decode phase
        let decode_dir = cfg.phase_dir(Phase::Decode);
        fs::create_dir_all(&decode_dir).unwrap();
        let mut lines = String::from("condition\twer\n");
        for (c, w) in CONDITIONS.iter().zip([20.0, 30.0, 19.0, 25.0, 18.5, 19.5]) {
            lines.push_str(&format!("{c}\t{w}\n"));
        }
        fs::write(decode_dir.join("wer.records"), lines).unwrap();
        fs::write(decode_dir.join(".done"), "ok\n").unwrap();

        run_phase(&cfg, Phase::Report).unwrap();
        let text = fs::read_to_string(cfg.phase_dir(Phase::Report).join("report.txt")).unwrap();
        assert!(text.contains("baseline"));
        assert!(text.contains("transfer"));
        let records = read_wer_records(&cfg).unwrap();
        assert_eq!(records.len(), 6);
        assert_eq!(records[1], ("ood".to_string(), 30.0));
    }
}
