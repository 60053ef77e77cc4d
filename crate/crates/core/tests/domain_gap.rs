//! Regression: a model trained only on clean in-domain data must do worse
//! on shifted out-of-domain audio than on held-out in-domain audio.

use std::collections::BTreeMap;

use sstune::acoustic::{self, TrainConfig, WavMfccProvider};
use sstune::corpus::{self, Domain, Manifest, SynthSpec};
use sstune::decode::{self, DecoderConfig};
use sstune::dsp::MfccConfig;
use sstune::eval;

fn score(model: &acoustic::AcousticModel, test: &Manifest, provider: &WavMfccProvider) -> f64 {
    let (hyps, failures) = decode::decode_manifest(model, test, provider, &DecoderConfig::Greedy);
    assert!(failures.is_empty());
    let refs: BTreeMap<String, Vec<String>> = test
        .records()
        .iter()
        .map(|r| (r.id.clone(), r.transcript.clone().unwrap()))
        .collect();
    let hyps: BTreeMap<String, Vec<String>> =
        hyps.into_iter().map(|h| (h.utterance_id, h.tokens)).collect();
    eval::corpus_wer(&refs, &hyps).unwrap().wer
}

#[test]
fn in_domain_model_degrades_on_shifted_domain() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        seed: 404,
        ..Default::default()
    };
    let in_all =
        corpus::generate_corpus(&spec, 200, Domain::InDomain, &dir.path().join("in")).unwrap();
    let ood_all =
        corpus::generate_corpus(&spec, 200, Domain::OutOfDomain, &dir.path().join("ood")).unwrap();
    let parts = corpus::split(&in_all, &[0.75, 0.25], 1).unwrap();
    let (train, in_test) = (&parts[0], &parts[1]);
    let ood_test = &corpus::split(&ood_all, &[0.25, 0.75], 2).unwrap()[0];

    let provider = WavMfccProvider {
        cfg: MfccConfig::default(),
    };
    let init = acoustic::init_model(13, 2, &[48], spec.label_inventory(), 3).unwrap();
    let tc = TrainConfig {
        epochs: 6,
        seed: 3,
        ..Default::default()
    };
    let (model, _) = acoustic::train(&init, train, &provider, &tc).unwrap();

    let wer_in = score(&model, in_test, &provider);
    let wer_ood = score(&model, ood_test, &provider);
    assert!(
        wer_ood > wer_in,
        "expected domain gap: in-domain {wer_in:.2}, out-of-domain {wer_ood:.2}"
    );
}
