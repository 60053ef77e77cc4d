//! End-to-end acceptance gate. Each test covers one lettered criterion and
//! prints a single `criterion <letter>: PASS` line on success (visible with
//! `cargo test --test acceptance -- --nocapture`); a failed assertion names
//! the criterion in its panic message.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sstune::acoustic::{self, TrainConfig, TrainMode, WavMfccProvider};
use sstune::corpus::{self, Domain, LabelSource, Manifest, SynthSpec, UtteranceRecord};
use sstune::decode::{self, DecoderConfig};
use sstune::dsp::{self, AudioBuffer, MfccConfig};
use sstune::eval::{self, round1, ExperimentReport};
use sstune::lm;
use sstune::pipeline::{self, ExperimentConfig, Phase};
use sstune::sst;

fn check(criterion: &str, ok: bool, detail: &str) {
    assert!(ok, "criterion {criterion}: FAIL — {detail}");
}

fn pass(criterion: &str, detail: &str) {
    println!("criterion {criterion}: PASS — {detail}");
}

fn wer_map(cfg: &ExperimentConfig) -> BTreeMap<String, f64> {
    pipeline::read_wer_records(cfg)
        .unwrap()
        .into_iter()
        .collect()
}

/// A: with the default config and seed, the experiment reproduces the
/// expected ordering — out-of-domain-only training degrades the model,
/// fine-tuning recovers it, and the two fine-tuned arms end up close.
#[test]
fn criterion_a_trend_reproduction() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        out_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let report = pipeline::run_experiment(&cfg).unwrap();
    let wer = wer_map(&cfg);
    check("A", wer["ood"] > wer["baseline"], &format!(
        "WER(ood)={} not > WER(baseline)={}", wer["ood"], wer["baseline"]
    ));
    check("A", wer["ood+ft"] <= wer["baseline"], &format!(
        "WER(ood+ft)={} not <= WER(baseline)={}", wer["ood+ft"], wer["baseline"]
    ));
    check("A", wer["pooled+ft"] <= wer["pooled"], &format!(
        "WER(pooled+ft)={} not <= WER(pooled)={}", wer["pooled+ft"], wer["pooled"]
    ));
    let gap = (wer["ood+ft"] - wer["pooled+ft"]).abs();
    check("A", gap <= 2.0, &format!("fine-tuned arms differ by {gap} points"));
    let elapsed = start.elapsed().as_secs_f64();
    check("A", elapsed < 600.0, &format!("took {elapsed:.0} s"));
    check("A", report.rows.len() == 6, "report must list six conditions");
    pass("A", &format!(
        "baseline={:.2} ood={:.2} ood+ft={:.2} pooled={:.2} pooled+ft={:.2} in {elapsed:.0} s",
        wer["baseline"], wer["ood"], wer["ood+ft"], wer["pooled"], wer["pooled+ft"]
    ));
}

/// B: the relative-improvement column reproduces hand-verified reference
/// figures exactly after one-decimal rounding.
#[test]
fn criterion_b_relative_improvement_arithmetic() {
    let start = Instant::now();
    let table_1 = [
        ("baseline", 24.8, None),
        ("ood", 26.9, Some(-8.5)),
        ("ood+ft", 23.3, Some(6.0)),
        ("pooled", 24.7, Some(0.4)),
        ("pooled+ft", 23.5, Some(5.2)),
    ];
    let table_2 = [
        ("baseline", 55.1, None),
        ("ood", 68.8, Some(-24.9)),
        ("ood+ft", 46.1, Some(16.3)),
        ("pooled", 48.4, Some(12.2)),
        ("pooled+ft", 46.4, Some(15.8)),
        ("transfer", 47.0, Some(14.7)),
    ];
    for table in [&table_1[..], &table_2[..]] {
        let conditions: Vec<(String, f64)> = table
            .iter()
            .map(|(c, w, _)| (c.to_string(), *w))
            .collect();
        let report = ExperimentReport::new("baseline", &conditions).unwrap();
        for (row, (cond, _, want)) in report.rows.iter().zip(table) {
            let got = row.relative_improvement.map(round1);
            check("B", got == *want, &format!(
                "{cond}: computed {got:?}, reference {want:?}"
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check("B", elapsed < 1.0, &format!("took {elapsed:.2} s"));
    pass("B", "both reference tables reproduced exactly at one decimal");
}

/// Independent edit-distance oracle: plain recursion, no shared code with
/// the production alignment.
fn oracle_edit_distance(r: &[u8], h: &[u8]) -> usize {
    if r.is_empty() {
        return h.len();
    }
    if h.is_empty() {
        return r.len();
    }
    if r[0] == h[0] {
        return oracle_edit_distance(&r[1..], &h[1..]);
    }
    let sub = oracle_edit_distance(&r[1..], &h[1..]);
    let del = oracle_edit_distance(&r[1..], h);
    let ins = oracle_edit_distance(r, &h[1..]);
    1 + sub.min(del).min(ins)
}

/// C: alignment error counts match the oracle on 10,000 random pairs of
/// sequences of length <= 6 over a 3-symbol alphabet.
#[test]
fn criterion_c_wer_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..10_000 {
        let r: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..3u8)).collect();
        let h: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..3u8)).collect();
        let (result, _) = eval::align(&r, &h);
        let want = oracle_edit_distance(&r, &h);
        check("C", result.total_errors() == want, &format!(
            "trial {trial}: align gave {} errors, oracle {want} on {r:?} / {h:?}",
            result.total_errors()
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    check("C", elapsed < 30.0, &format!("took {elapsed:.1} s"));
    pass("C", &format!("10,000 random pairs matched the oracle in {elapsed:.1} s"));
}

/// D: analytic gradients agree with central finite differences on 20
/// random model/batch draws.
#[test]
fn criterion_d_gradient_correctness() {
    let mut worst = 0.0f64;
    for draw in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + draw);
        let feature_dim = rng.gen_range(2..=5);
        let context = rng.gen_range(0..=2);
        let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(3..=6)).collect();
        let n_labels = rng.gen_range(2..=4);
        let labels: Vec<String> = (0..n_labels).map(|i| format!("l{i}")).collect();
        let model =
            acoustic::init_model(feature_dim, context, &hidden, labels, draw).unwrap();
        let input_dim = model.input_dim();
        let n_examples = rng.gen_range(1..=6);
        let mut batch: Vec<(Vec<f64>, u32)> = Vec::with_capacity(n_examples);
        while batch.len() < n_examples {
            let x: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // central differences straddle the hinge nonlinearity, so skip
            // inputs whose hidden pre-activations sit within the step of 0
            if min_abs_preactivation(&model, &x) > 1e-2 {
                batch.push((x, rng.gen_range(0..n_labels as u32)));
            }
        }
        let (_, grad) = acoustic::loss_and_gradient(&model, &batch);
        let params = model.params_flat();
        let step = 1e-4;
        for (i, g) in grad.iter().enumerate() {
            let mut plus = model.clone();
            let mut p = params.clone();
            p[i] += step;
            plus.set_params_flat(&p);
            let mut minus = model.clone();
            p[i] = params[i] - step;
            minus.set_params_flat(&p);
            let (lp, _) = acoustic::loss_and_gradient(&plus, &batch);
            let (lm_, _) = acoustic::loss_and_gradient(&minus, &batch);
            let fd = (lp - lm_) / (2.0 * step);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    check("D", worst < 1e-4, &format!("max relative error {worst:.3e}"));
    pass("D", &format!("20 draws, max relative error {worst:.3e}"));
}

fn min_abs_preactivation(model: &acoustic::AcousticModel, x: &[f64]) -> f64 {
    let mut input = x.to_vec();
    let mut min_abs = f64::INFINITY;
    for layer in &model.layers[..model.layers.len() - 1] {
        let mut out = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let a: f64 =
                row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>() + layer.bias[o];
            min_abs = min_abs.min(a.abs());
            out.push(a.max(0.0));
        }
        input = out;
    }
    min_abs
}

/// E: median selection behaves on 1,000 random confidence vectors.
#[test]
fn criterion_e_median_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1_000 {
        let n = rng.gen_range(1..=200);
        let with_ties = rng.gen_bool(0.5);
        let confs: Vec<f64> = (0..n)
            .map(|_| {
                if with_ties {
                    -(rng.gen_range(0..8) as f64) / 2.0
                } else {
                    rng.gen_range(-50.0..0.0)
                }
            })
            .collect();
        let m = conf_manifest(&confs);
        let (sel, rej, report) = sst::select_by_median(&m).unwrap();
        let median = report.median_confidence;
        for r in sel.records() {
            check("E", r.confidence.unwrap() >= median, &format!(
                "trial {trial}: selected {} below median {median}", r.id
            ));
        }
        for r in rej.records() {
            check("E", r.confidence.unwrap() < median, &format!(
                "trial {trial}: rejected {} at or above median {median}", r.id
            ));
        }
        check("E", sel.len() + rej.len() == n, "partition must cover all candidates");
        let distinct = {
            let mut s = confs.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s.windows(2).all(|w| w[0] != w[1])
        };
        if distinct {
            check("E", report.n_selected == n.div_ceil(2), &format!(
                "trial {trial}: {} selected of {n} distinct", report.n_selected
            ));
        }
        let shifted: Vec<f64> = confs.iter().map(|c| c + 7.25).collect();
        let (_, _, shifted_report) = sst::select_by_median(&conf_manifest(&shifted)).unwrap();
        check("E", shifted_report.selected_ids == report.selected_ids, &format!(
            "trial {trial}: selection changed under constant shift"
        ));
    }
    pass("E", "1,000 random vectors: partition, cardinality, and shift invariance hold");
}

fn conf_manifest(confs: &[f64]) -> Manifest {
    let records: Vec<UtteranceRecord> = confs
        .iter()
        .enumerate()
        .map(|(i, &c)| UtteranceRecord {
            id: format!("u{i:04}"),
            audio: format!("{i}.wav").into(),
            transcript: Some(vec![]),
            frame_labels: Some(vec![]),
            domain: Domain::OutOfDomain,
            label_source: LabelSource::Pseudo,
            confidence: Some(c),
            speed_factor: 1.0,
        })
        .collect();
    Manifest::new("acc", records).unwrap()
}

/// F: interpolation weights fitted by EM prefer the matched component,
/// the likelihood trace never decreases, and the weights are a simplex.
#[test]
fn criterion_f_em_interpolation() {
    let sents = |xs: &[&str]| -> Vec<Vec<String>> {
        xs.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    };
    let dev = sents(&["a a b", "a b a", "a a a", "b a a", "a a b a"]);
    let vocab: Vec<String> = vec!["a".into(), "b".into(), "c".into(), "d".into()];
    let matched = lm::train_lm(&dev, Some(&vocab)).unwrap();
    let flat = lm::train_lm(&sents(&["a b c d"]), Some(&vocab)).unwrap();
    let fit = lm::fit_interpolation_weights(&[matched, flat], &dev, 1e-9, 200).unwrap();
    for pair in fit.ll_trace.windows(2) {
        check("F", pair[1] >= pair[0] - 1e-9, &format!(
            "likelihood decreased: {} -> {}", pair[0], pair[1]
        ));
    }
    let sum: f64 = fit.weights.iter().sum();
    check("F", (sum - 1.0).abs() <= 1e-9, &format!("weights sum to {sum}"));
    check("F", fit.weights[0] > 0.9, &format!(
        "matched-component weight {} not > 0.9", fit.weights[0]
    ));
    pass("F", &format!(
        "monotone trace over {} iterations, matched weight {:.4}",
        fit.ll_trace.len(),
        fit.weights[0]
    ));
}

/// G: resampling length arithmetic, spectral effect of perturbation, and
/// manifest tripling.
#[test]
fn criterion_g_dsp_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let n = rng.gen_range(10..50_000usize);
        let f = rng.gen_range(0.5..2.0);
        let buf = AudioBuffer {
            samples: vec![0.25; n],
            sample_rate: 8000,
        };
        let out = dsp::resample(&buf, f).unwrap();
        let want = (n as f64 / f).round() as usize;
        check("G", out.samples.len() == want, &format!(
            "resample({n}, {f}) gave {} samples, want {want}", out.samples.len()
        ));
    }

    let rate = 8000u32;
    let n = rate as usize; // one second
    let samples: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 100.0 * i as f64 / rate as f64).sin())
        .collect();
    let sped = dsp::resample(&AudioBuffer { samples, sample_rate: rate }, 1.1).unwrap();
    let peak = dominant_frequency(&sped);
    check("G", (peak - 110.0).abs() <= 2.0, &format!(
        "dominant frequency {peak:.1} Hz, want 110 +/- 2"
    ));

    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        vocabulary_size: 4,
        seed: 7,
        ..Default::default()
    };
    let m = corpus::generate_corpus(&spec, 5, Domain::InDomain, &dir.path().join("a")).unwrap();
    let p = dsp::speed_perturb_manifest(
        &m,
        &[0.9, 1.0, 1.1],
        &MfccConfig::default(),
        &dir.path().join("p"),
    )
    .unwrap();
    check("G", p.len() == 3 * m.len(), &format!(
        "perturbed manifest has {} records, want {}", p.len(), 3 * m.len()
    ));
    pass("G", &format!(
        "100 length checks, peak at {peak:.1} Hz, manifest tripled exactly"
    ));
}

fn dominant_frequency(buf: &AudioBuffer) -> f64 {
    let n = buf.samples.len();
    let mut best = (0.0f64, 0usize);
    // scan 1 Hz bins up to 400 Hz with a direct DFT
    for k in 1..400 {
        let w = 2.0 * std::f64::consts::PI * k as f64 / buf.sample_rate as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &s) in buf.samples.iter().enumerate() {
            re += s * (w * i as f64).cos();
            im -= s * (w * i as f64).sin();
        }
        let mag = re * re + im * im;
        if mag > best.0 {
            best = (mag, k);
        }
    }
    let _ = n;
    best.1 as f64
}

/// H: byte-identical reports across runs, bit-exact model persistence,
/// and close ARPA round-trips.
#[test]
fn criterion_h_determinism_and_persistence() {
    // two independent experiment runs, same config and seed
    let dir = tempfile::tempdir().unwrap();
    let small = |out: &Path| ExperimentConfig {
        out_dir: out.to_path_buf(),
        n_train: 10,
        n_dev: 6,
        n_test: 8,
        n_ood: 12,
        vocabulary_size: 6,
        hidden_dims: vec![24],
        epochs: 3,
        fine_tune_epochs: 2,
        perturb_factors: vec![1.0, 1.1],
        ..Default::default()
    };
    let cfg1 = small(&dir.path().join("run1"));
    let cfg2 = small(&dir.path().join("run2"));
    pipeline::run_experiment(&cfg1).unwrap();
    pipeline::run_experiment(&cfg2).unwrap();
    for file in ["report.txt", "report.tsv"] {
        let a = std::fs::read(cfg1.out_dir.join(Phase::Report.name()).join(file)).unwrap();
        let b = std::fs::read(cfg2.out_dir.join(Phase::Report.name()).join(file)).unwrap();
        check("H", a == b, &format!("{file} differs between identical runs"));
    }

    // model save/load preserves forward outputs bit-exactly
    let labels: Vec<String> = (0..5).map(|i| format!("l{i}")).collect();
    let model = acoustic::init_model(6, 1, &[10, 10], labels, 42).unwrap();
    let path = dir.path().join("m.bin");
    acoustic::save_model(&model, &path).unwrap();
    let back = acoustic::load_model(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames = 4;
    let feats = dsp::FeatureMatrix {
        frames,
        dim: model.feature_dim(),
        values: (0..frames * model.feature_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        frame_shift: 0.010,
        frame_length: 0.025,
    };
    let before = acoustic::forward(&model, &feats).unwrap();
    let after = acoustic::forward(&back, &feats).unwrap();
    check("H", before == after, "forward outputs changed across save/load");
    check("H", model.params_flat() == back.params_flat(), "parameters changed across save/load");

    // ARPA round-trip within 1e-4 relative on all stored probabilities
    let corpus_text: Vec<Vec<String>> = ["a b c", "a b a", "c a b", "b c a", "a c c"]
        .iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
    let model = lm::train_lm(&corpus_text, None).unwrap();
    let arpa = dir.path().join("m.arpa");
    lm::write_arpa(&model, &arpa).unwrap();
    let reread = lm::read_arpa(&arpa).unwrap();
    let vocab = model.vocab().to_vec();
    let mut worst = 0.0f64;
    for w1 in &vocab {
        for w2 in &vocab {
            // the sentence-begin marker is never predicted; its placeholder
            // probability is written with a fixed sentinel, not a real value
            for w in vocab.iter().filter(|w| *w != lm::SENT_BEGIN) {
                let contexts = [vec![], vec![w1.as_str()], vec![w1.as_str(), w2.as_str()]];
                for ctx in contexts {
                    let p = model.prob(&ctx, w);
                    let q = reread.prob(&ctx, w);
                    worst = worst.max((p - q).abs() / p.max(f64::MIN_POSITIVE));
                }
            }
        }
    }
    check("H", worst < 1e-4, &format!("ARPA round-trip relative error {worst:.3e}"));
    pass("H", &format!(
        "identical reports, bit-exact model persistence, ARPA error {worst:.3e}"
    ));
}

/// I: output-layer transfer from a converged source-domain model beats (or
/// matches within 0.5 points) scratch training on the same reduced gold set.
#[test]
fn criterion_i_transfer_analogue() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::default();
    let spec = SynthSpec {
        vocabulary_size: base.vocabulary_size,
        seed: 31,
        ..Default::default()
    };
    let provider = WavMfccProvider {
        cfg: base.mfcc.clone(),
    };

    let source_gold =
        corpus::generate_corpus(&spec, 60, Domain::OutOfDomain, &dir.path().join("src")).unwrap();
    let target_all =
        corpus::generate_corpus(&spec, 70, Domain::InDomain, &dir.path().join("tgt")).unwrap();
    let parts = corpus::split(&target_all, &[6.0 / 70.0, 64.0 / 70.0], 5).unwrap();
    let reduced_gold = &parts[0]; // quarter-sized training set
    let test = corpus::split(&parts[1], &[0.5, 0.5], 6).unwrap().remove(0);

    let labels = spec.label_inventory();
    let tc = TrainConfig {
        epochs: base.epochs,
        seed: 13,
        ..Default::default()
    };
    let source_init =
        acoustic::init_model(base.mfcc.n_coeffs, base.context, &base.hidden_dims, labels.clone(), 13)
            .unwrap();
    let (source, _) = acoustic::train(&source_init, &source_gold, &provider, &tc).unwrap();

    let scratch_init =
        acoustic::init_model(base.mfcc.n_coeffs, base.context, &base.hidden_dims, labels.clone(), 14)
            .unwrap();
    let (scratch, _) = acoustic::train(&scratch_init, reduced_gold, &provider, &tc).unwrap();

    let swapped = acoustic::transfer_output_layer(&source, labels, 14).unwrap();
    let transfer_tc = TrainConfig {
        mode: TrainMode::Transfer,
        epochs: base.epochs,
        seed: 13,
        ..Default::default()
    };
    let (transferred, _) =
        acoustic::train(&swapped, reduced_gold, &provider, &transfer_tc).unwrap();

    let score = |model: &acoustic::AcousticModel| -> f64 {
        let (hyps, failures) =
            decode::decode_manifest(model, &test, &provider, &DecoderConfig::Greedy);
        assert!(failures.is_empty());
        let refs: BTreeMap<String, Vec<String>> = test
            .records()
            .iter()
            .map(|r| (r.id.clone(), r.transcript.clone().unwrap()))
            .collect();
        let hyp_map: BTreeMap<String, Vec<String>> =
            hyps.into_iter().map(|h| (h.utterance_id, h.tokens)).collect();
        eval::corpus_wer(&refs, &hyp_map).unwrap().wer
    };
    let wer_scratch = score(&scratch);
    let wer_transfer = score(&transferred);
    check("I", wer_transfer <= wer_scratch + 0.5, &format!(
        "transfer WER {wer_transfer:.2} exceeds scratch {wer_scratch:.2} + 0.5"
    ));
    let elapsed = start.elapsed().as_secs_f64();
    check("I", elapsed < 300.0, &format!("took {elapsed:.0} s"));
    pass("I", &format!(
        "transfer {wer_transfer:.2} vs scratch {wer_scratch:.2} in {elapsed:.0} s"
    ));
}
