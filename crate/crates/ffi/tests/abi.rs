//! Exercises the C ABI exactly as a foreign caller would: raw pointers,
//! NUL-terminated strings, and status codes.

use std::ffi::CString;
use std::os::raw::c_char;
use std::ptr;

use sstune::acoustic;
use sstune::lm;
use sstune_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn wer_and_relative_improvement() {
    let mut out = f64::NAN;
    let r = c("a b c d");
    let h = c("a x c");
    let code = unsafe { sstune_wer(r.as_ptr(), h.as_ptr(), &mut out) };
    assert_eq!(code, SstuneStatus::SstuneOk);
    assert!((out - 50.0).abs() < 1e-12); // one substitution + one deletion over 4

    let code = unsafe { sstune_relative_improvement(24.8, 23.3, &mut out) };
    assert_eq!(code, SstuneStatus::SstuneOk);
    assert!((out - 100.0 * 1.5 / 24.8).abs() < 1e-12);

    let code = unsafe { sstune_relative_improvement(0.0, 1.0, &mut out) };
    assert_eq!(code, SstuneStatus::SstuneInvalidInput);
    let mut buf = [0 as c_char; 256];
    let n = sstune_last_error(buf.as_mut_ptr(), buf.len());
    assert!(n > 0);
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = f64::NAN;
    let r = c("a");
    let code = unsafe { sstune_wer(ptr::null(), r.as_ptr(), &mut out) };
    assert_eq!(code, SstuneStatus::SstuneNullArgument);
    let code = unsafe { sstune_wer(r.as_ptr(), r.as_ptr(), ptr::null_mut()) };
    assert_eq!(code, SstuneStatus::SstuneNullArgument);
    assert!(unsafe { sstune_model_load(ptr::null()) }.is_null());
    unsafe { sstune_model_free(ptr::null_mut()) };
    unsafe { sstune_lm_free(ptr::null_mut()) };
    assert_eq!(unsafe { sstune_model_num_labels(ptr::null()) }, -1);
}

#[test]
fn model_round_trip_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let labels: Vec<String> = ["<sil>", "w00", "w01"].map(String::from).to_vec();
    let model = acoustic::init_model(13, 2, &[8], labels, 7).unwrap();
    acoustic::save_model(&model, &path).unwrap();

    let cpath = c(path.to_str().unwrap());
    let handle = unsafe { sstune_model_load(cpath.as_ptr()) };
    assert!(!handle.is_null());
    assert_eq!(unsafe { sstune_model_num_labels(handle) }, 3);
    unsafe { sstune_model_free(handle) };

    let missing = c(dir.path().join("absent.bin").to_str().unwrap());
    assert!(unsafe { sstune_model_load(missing.as_ptr()) }.is_null());
    let mut buf = [0 as c_char; 256];
    assert!(sstune_last_error(buf.as_mut_ptr(), buf.len()) > 0);
}

#[test]
fn lm_perplexity_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.arpa");
    let corpus: Vec<Vec<String>> = vec![
        vec!["a".into(), "b".into(), "a".into()],
        vec!["b".into(), "a".into()],
    ];
    let model = lm::train_lm(&corpus, None).unwrap();
    lm::write_arpa(&model, &path).unwrap();

    let cpath = c(path.to_str().unwrap());
    let handle = unsafe { sstune_lm_load_arpa(cpath.as_ptr()) };
    assert!(!handle.is_null());
    let text = c("a b a\nb a");
    let mut ppl = f64::NAN;
    let code = unsafe { sstune_lm_perplexity(handle, text.as_ptr(), &mut ppl) };
    assert_eq!(code, SstuneStatus::SstuneOk);
    let reread = lm::read_arpa(&path).unwrap();
    let direct = lm::perplexity(&reread, &corpus).unwrap();
    assert!((ppl - direct).abs() < 1e-12);
    assert!((ppl - lm::perplexity(&model, &corpus).unwrap()).abs() / ppl < 1e-3);
    unsafe { sstune_lm_free(handle) };
}
