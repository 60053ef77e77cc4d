//! Command-line front end. Each subcommand wraps one library operation;
//! `experiment` runs the whole matrix from a config file.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 phase failure,
//! 3 data error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sstune::acoustic::{self, TrainConfig, TrainMode, WavMfccProvider};
use sstune::corpus::{self, Domain, Manifest, SynthSpec};
use sstune::decode::{self, DecoderConfig};
use sstune::dsp::{self, MfccConfig};
use sstune::eval;
use sstune::lm::{self, InterpolatedModel};
use sstune::pipeline::{self, ExperimentConfig, Phase, PipelineError};
use sstune::sst::{self, SstPlan, SstStrategy};

#[derive(Parser)]
#[command(
    name = "sstune",
    about = "Two-domain speech recognition training and evaluation toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    In,
    Out,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    OodOnly,
    Pooled,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled two-tone corpus for one domain
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long, default_value_t = 10)]
        vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write speed-perturbed copies of every utterance in a manifest
    Perturb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.9, 1.0, 1.1])]
        factors: Vec<f64>,
    },
    /// Train an acoustic model from scratch on a labeled manifest
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 64])]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        context: usize,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode a manifest; greedy by default, beam search when an LM is given
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// ARPA component files; enables beam search
        #[arg(long, value_delimiter = ',')]
        lm: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 0.4)]
        lm_weight: f64,
    },
    /// Split a pseudo-labeled manifest at the median confidence
    Select {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        selected: PathBuf,
        #[arg(long)]
        rejected: PathBuf,
    },
    /// Estimate a trigram model from sentences (one per line)
    LmTrain {
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional fixed vocabulary, one token per line
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Fit interpolation weights for ARPA components on dev sentences
    LmInterp {
        #[arg(long, value_delimiter = ',')]
        components: Vec<PathBuf>,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the semi-supervised loop from a bootstrap model
    Sst {
        #[arg(long)]
        bootstrap: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = StrategyArg::Pooled)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 1)]
        iterations: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.9, 1.0, 1.1])]
        factors: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Continue training a model on gold data at a reduced learning rate
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0.1)]
        lr_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Reinitialize a model's output layer, then train on gold data
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score hypotheses against a gold manifest
    Score {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
    },
    /// Regenerate the report table from an experiment's persisted error rates
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the full experiment matrix from a config file
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a single named experiment phase
    Phase {
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Rewrite `--section.key value` (or `--section.key=value`) into
/// `--set section.key=value` so every config entry doubles as a flag.
fn rewrite_dotted_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let dotted = a
            .strip_prefix("--")
            .filter(|rest| {
                (rest.contains('.') && !rest.starts_with('.'))
                    || rest == &"out_dir"
                    || rest.starts_with("out_dir=")
            });
        match dotted {
            Some(rest) => {
                if let Some((k, v)) = rest.split_once('=') {
                    out.push("--set".into());
                    out.push(format!("{k}={v}"));
                } else if i + 1 < args.len() {
                    out.push("--set".into());
                    out.push(format!("{}={}", rest, args[i + 1]));
                    i += 1;
                } else {
                    out.push(a.clone());
                }
            }
            None => out.push(a.clone()),
        }
        i += 1;
    }
    out
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Phase(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Phase(_) => 2,
            CliError::Data(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Phase(m) | CliError::Data(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> CliError {
        match &e {
            PipelineError::Config(_) => CliError::Usage(e.to_string()),
            PipelineError::PhaseFailed { .. } | PipelineError::MissingUpstream { .. } => {
                CliError::Phase(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn read_sentences(path: &PathBuf) -> Result<Vec<Vec<String>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(data)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .filter(|s: &Vec<String>| !s.is_empty())
        .collect())
}

fn read_lines(path: &PathBuf) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(data)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn load_experiment_config(
    config: Option<&PathBuf>,
    seed: Option<u64>,
    overrides: &[String],
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    for ov in overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {ov:?} is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn manifest_at(path: &PathBuf) -> Result<Manifest, CliError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    Manifest::read(&name, path).map_err(data)
}

fn load_interpolated(paths: &[PathBuf], weights: &[f64]) -> Result<InterpolatedModel, CliError> {
    let components = paths
        .iter()
        .map(|p| lm::read_arpa(p).map_err(data))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = if weights.is_empty() {
        vec![1.0 / components.len() as f64; components.len()]
    } else if weights.len() == components.len() {
        weights.to_vec()
    } else {
        return Err(CliError::Usage(
            "number of weights must match number of LM components".into(),
        ));
    };
    InterpolatedModel::new(components, weights).map_err(data)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            out,
            n,
            domain,
            vocab,
            seed,
        } => {
            let spec = SynthSpec {
                vocabulary_size: vocab,
                seed,
                ..Default::default()
            };
            let domain = match domain {
                DomainArg::In => Domain::InDomain,
                DomainArg::Out => Domain::OutOfDomain,
            };
            let m = corpus::generate_corpus(&spec, n, domain, &out).map_err(data)?;
            m.write(&out.join("manifest")).map_err(data)?;
            std::fs::write(out.join("labels.txt"), spec.label_inventory().join("\n") + "\n")
                .map_err(data)?;
            println!("wrote {} utterances under {}", m.len(), out.display());
        }
        Command::Perturb {
            manifest,
            out,
            factors,
        } => {
            let m = manifest_at(&manifest)?;
            let p = dsp::speed_perturb_manifest(&m, &factors, &MfccConfig::default(), &out)
                .map_err(data)?;
            p.write(&out.join("manifest")).map_err(data)?;
            println!("wrote {} perturbed utterances", p.len());
        }
        Command::Train {
            manifest,
            labels,
            out,
            hidden,
            context,
            epochs,
            lr,
            seed,
        } => {
            let m = manifest_at(&manifest)?;
            let labels = read_lines(&labels)?;
            let cfg = MfccConfig::default();
            let init = acoustic::init_model(cfg.n_coeffs, context, &hidden, labels, seed)
                .map_err(data)?;
            let tc = TrainConfig {
                base_learning_rate: lr,
                epochs,
                seed,
                ..Default::default()
            };
            let provider = WavMfccProvider { cfg };
            let (model, losses) = acoustic::train(&init, &m, &provider, &tc).map_err(data)?;
            acoustic::save_model(&model, &out).map_err(data)?;
            println!(
                "trained {} epochs, final loss {:.4}",
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Decode {
            model,
            manifest,
            out,
            lm: lm_paths,
            weights,
            beam,
            lm_weight,
        } => {
            let model = acoustic::load_model(&model).map_err(data)?;
            let m = manifest_at(&manifest)?;
            let provider = WavMfccProvider {
                cfg: MfccConfig::default(),
            };
            let lang;
            let config = if lm_paths.is_empty() {
                DecoderConfig::Greedy
            } else {
                lang = load_interpolated(&lm_paths, &weights)?;
                DecoderConfig::Beam {
                    lm: &lang,
                    beam,
                    lm_weight,
                }
            };
            let (hyps, failures) = decode::decode_manifest(&model, &m, &provider, &config);
            decode::write_hypotheses(&hyps, &out).map_err(data)?;
            for (id, why) in &failures {
                eprintln!("failed to decode {id}: {why}");
            }
            println!("decoded {} utterances ({} failures)", hyps.len(), failures.len());
            if !failures.is_empty() {
                return Err(CliError::Data("some utterances failed to decode".into()));
            }
        }
        Command::Select {
            manifest,
            selected,
            rejected,
        } => {
            let m = manifest_at(&manifest)?;
            let (sel, rej, report) = sst::select_by_median(&m).map_err(data)?;
            sel.write(&selected).map_err(data)?;
            rej.write(&rejected).map_err(data)?;
            println!(
                "candidates={} median={:.6} selected={}",
                report.n_candidates, report.median_confidence, report.n_selected
            );
        }
        Command::LmTrain { text, out, vocab } => {
            let sentences = read_sentences(&text)?;
            let vocab = match vocab {
                Some(path) => Some(read_lines(&path)?),
                None => None,
            };
            let model = lm::train_lm(&sentences, vocab.as_deref()).map_err(data)?;
            lm::write_arpa(&model, &out).map_err(data)?;
            println!("wrote {}", out.display());
        }
        Command::LmInterp {
            components,
            dev,
            out,
        } => {
            let models = components
                .iter()
                .map(|p| lm::read_arpa(p).map_err(data))
                .collect::<Result<Vec<_>, _>>()?;
            let dev = read_sentences(&dev)?;
            let fit = lm::fit_interpolation_weights(&models, &dev, 1e-6, 100).map_err(data)?;
            let text: String = fit.weights.iter().map(|w| format!("{w}\n")).collect();
            std::fs::write(&out, text).map_err(data)?;
            println!(
                "weights {:?} after {} EM iterations",
                fit.weights,
                fit.ll_trace.len()
            );
        }
        Command::Sst {
            bootstrap,
            train,
            unlabeled,
            out,
            strategy,
            iterations,
            factors,
            epochs,
            lr,
            seed,
        } => {
            let boot = acoustic::load_model(&bootstrap).map_err(data)?;
            let gold = manifest_at(&train)?;
            let pool = manifest_at(&unlabeled)?;
            let plan = SstPlan {
                strategy: match strategy {
                    StrategyArg::OodOnly => SstStrategy::OodOnly,
                    StrategyArg::Pooled => SstStrategy::Pooled,
                },
                iterations,
                perturb_factors: factors,
                train_cfg: TrainConfig {
                    base_learning_rate: lr,
                    epochs,
                    seed,
                    ..Default::default()
                },
            };
            let (model, stages) =
                sst::run_sst(&boot, &gold, &pool, &plan, &MfccConfig::default(), &out)
                    .map_err(data)?;
            acoustic::save_model(&model, &out.join("model.bin")).map_err(data)?;
            for s in &stages {
                println!(
                    "{}: candidates={} median={:.6} selected={}",
                    s.dir.display(),
                    s.report.n_candidates,
                    s.report.median_confidence,
                    s.report.n_selected
                );
            }
        }
        Command::Finetune {
            model,
            manifest,
            out,
            epochs,
            lr,
            lr_scale,
            seed,
        } => {
            let parent = acoustic::load_model(&model).map_err(data)?;
            let m = manifest_at(&manifest)?;
            let tc = TrainConfig {
                mode: TrainMode::FineTune,
                base_learning_rate: lr,
                fine_tune_lr_scale: lr_scale,
                epochs,
                seed,
                ..Default::default()
            };
            let provider = WavMfccProvider {
                cfg: MfccConfig::default(),
            };
            let (tuned, losses) = acoustic::train(&parent, &m, &provider, &tc).map_err(data)?;
            acoustic::save_model(&tuned, &out).map_err(data)?;
            println!(
                "fine-tuned {} epochs at lr {}, final loss {:.4}",
                losses.len(),
                tc.effective_lr(),
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Transfer {
            model,
            manifest,
            labels,
            out,
            epochs,
            lr,
            seed,
        } => {
            let source = acoustic::load_model(&model).map_err(data)?;
            let labels = read_lines(&labels)?;
            let swapped = acoustic::transfer_output_layer(&source, labels, seed).map_err(data)?;
            let m = manifest_at(&manifest)?;
            let tc = TrainConfig {
                mode: TrainMode::Transfer,
                base_learning_rate: lr,
                epochs,
                seed,
                ..Default::default()
            };
            let provider = WavMfccProvider {
                cfg: MfccConfig::default(),
            };
            let (tuned, losses) = acoustic::train(&swapped, &m, &provider, &tc).map_err(data)?;
            acoustic::save_model(&tuned, &out).map_err(data)?;
            println!(
                "transferred and trained {} epochs, final loss {:.4}",
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Score { refs, hyps } => {
            let gold = manifest_at(&refs)?;
            let ref_map: BTreeMap<String, Vec<String>> = gold
                .records()
                .iter()
                .map(|r| (r.id.clone(), r.transcript.clone().unwrap_or_default()))
                .collect();
            let hyp_map: BTreeMap<String, Vec<String>> = decode::read_hypotheses(&hyps)
                .map_err(data)?
                .into_iter()
                .map(|(id, _, tokens)| (id, tokens))
                .collect();
            let wer = eval::corpus_wer(&ref_map, &hyp_map).map_err(data)?;
            println!(
                "wer={:.2} (sub={} ins={} del={} over {} reference tokens)",
                wer.wer, wer.substitutions, wer.insertions, wer.deletions, wer.n_ref_tokens
            );
        }
        Command::Report { config, overrides } => {
            let cfg = load_experiment_config(config.as_ref(), None, &overrides)?;
            let conditions = pipeline::read_wer_records(&cfg)?;
            let report = eval::ExperimentReport::new("baseline", &conditions).map_err(data)?;
            print!("{report}");
        }
        Command::Experiment {
            config,
            seed,
            overrides,
        } => {
            let cfg = load_experiment_config(config.as_ref(), seed, &overrides)?;
            let report = pipeline::run_experiment(&cfg)?;
            print!("{report}");
        }
        Command::Phase {
            name,
            config,
            seed,
            overrides,
        } => {
            let phase = Phase::parse(&name)
                .ok_or_else(|| CliError::Usage(format!("unknown phase {name:?}")))?;
            let cfg = load_experiment_config(config.as_ref(), seed, &overrides)?;
            pipeline::run_phase(&cfg, phase)?;
            println!("phase {name} complete");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = rewrite_dotted_flags(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version exit cleanly; everything else is a usage error
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
