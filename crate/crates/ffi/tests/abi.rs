use std::ffi::{c_char, CStr, CString};
use std::ptr;

use pie_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    pie_string_free(p);
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pie_last_error()).to_str().unwrap().to_owned() }
}

#[test]
fn diff_cost_of_the_worked_pair() {
    let mut cost = 0.0;
    let s = unsafe {
        pie_diff_cost(
            c("He sat , then he ran").as_ptr(),
            c("He sat . Then , he ran").as_ptr(),
            PIE_MODE_WORD,
            &mut cost,
        )
    };
    assert_eq!(s, PieStatus::Ok);
    assert!((cost - 3.0).abs() < 1e-12);
    assert_eq!(last_error(), "");
}

#[test]
fn edits_round_trip_through_json() {
    let tsv = c("insert_string\tcount\ncould\t3\nthe\t2\n");
    let src = c("Bolt can have run race");
    let mut json = ptr::null_mut();
    let s = unsafe { pie_seq2edits(src.as_ptr(), c("Bolt could have run the race").as_ptr(), tsv.as_ptr(), PIE_MODE_WORD, &mut json) };
    assert_eq!(s, PieStatus::Ok, "{}", last_error());
    let json = unsafe { take(json) };
    let mut out = ptr::null_mut();
    let s = unsafe { pie_apply_edits(src.as_ptr(), c(&json).as_ptr(), PIE_MODE_WORD, &mut out) };
    assert_eq!(s, PieStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { take(out) }, "Bolt could have run the race");
}

#[test]
fn bad_arguments_set_status_and_message() {
    let mut cost = 0.0;
    let s = unsafe { pie_diff_cost(ptr::null(), c("a").as_ptr(), PIE_MODE_WORD, &mut cost) };
    assert_eq!(s, PieStatus::InvalidArgument);
    assert!(last_error().contains("null"));
    let s = unsafe { pie_diff_cost(c("a").as_ptr(), c("a").as_ptr(), 7, &mut cost) };
    assert_eq!(s, PieStatus::InvalidArgument);
    let mut out = ptr::null_mut();
    let s = unsafe { pie_apply_edits(c("a b").as_ptr(), c("{not json").as_ptr(), PIE_MODE_WORD, &mut out) };
    assert_eq!(s, PieStatus::DataError);
    assert!(out.is_null());
    unsafe { pie_string_free(ptr::null_mut()) };
}

#[test]
fn word_accuracy_over_arrays() {
    let pred = [c("a b"), c("c"), c("d"), c("x")];
    let gold = [c("a b"), c("c"), c("d"), c("y")];
    let pp: Vec<*const c_char> = pred.iter().map(|s| s.as_ptr()).collect();
    let gp: Vec<*const c_char> = gold.iter().map(|s| s.as_ptr()).collect();
    let mut acc = 0.0;
    let s = unsafe { pie_word_accuracy(pp.as_ptr(), gp.as_ptr(), 4, &mut acc) };
    assert_eq!(s, PieStatus::Ok);
    assert_eq!(acc, 0.75);
}

#[test]
fn model_load_errors_and_prediction() {
    let mut h = ptr::null_mut();
    let s = unsafe { pie_model_load(c("/nonexistent/model.ckpt").as_ptr(), &mut h) };
    assert_eq!(s, PieStatus::DataError);
    assert!(h.is_null());

    use pie_core::editspace::*;
    use pie_core::piemodel::*;
    let dict = InsertDictionary::from_entries(vec![("the".into(), 2)], 2, 1).unwrap();
    let space = EditSpace::new(dict, TransformTable::default_table(), TokenMode::Word);
    let seq = TokenSequence::from_line("the cat sat", TokenMode::Word).unwrap();
    let vocab = Vocab::build([&seq], space.dictionary(), TokenMode::Word, None).unwrap();
    let model = PieModel::<f32>::new(ModelConfig::tiny(), vocab, space, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    pie_core::training::save_checkpoint(&path, &model, None).unwrap();

    let s = unsafe { pie_model_load(c(path.to_str().unwrap()).as_ptr(), &mut h) };
    assert_eq!(s, PieStatus::Ok, "{}", last_error());
    let mut out = ptr::null_mut();
    let s = unsafe { pie_model_predict(h, c("the cat sat").as_ptr(), 4, &mut out) };
    assert_eq!(s, PieStatus::Ok, "{}", last_error());
    let _ = unsafe { take(out) };
    let passes = unsafe { pie_model_forward_passes(h) };
    assert!((1..=4).contains(&passes));
    let s = unsafe { pie_model_predict(h, c("x").as_ptr(), 0, &mut out) };
    assert_eq!(s, PieStatus::InvalidArgument);
    unsafe { pie_model_free(h) };
    assert_eq!(unsafe { pie_model_forward_passes(ptr::null()) }, 0);
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pie.h")).unwrap();
    for name in [
        "pie_last_error",
        "pie_string_free",
        "pie_model_load",
        "pie_model_predict",
        "pie_model_free",
        "pie_seq2edits",
        "PieModelHandle",
        "PIE_STATUS_OK",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pie_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
