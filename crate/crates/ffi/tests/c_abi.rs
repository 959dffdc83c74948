use std::ffi::{CStr, CString};
use std::ptr;

use dana::dap::{dap_forward, DapParams, FeatureMaps};
use dana::nn::{checkpoint, Classifier, ModelSpec};
use dana::signal::TimeWindow;
use dana_ffi::*;

fn last_error() -> String {
    let p = dana_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn dap_matches_core() {
    let (maps, w, h) = (2, 12, 3);
    let data: Vec<f64> = (0..maps * w * h).map(|k| ((k * 37) % 11) as f64 - 5.0).collect();
    let mut out = vec![0.0; maps * 5 * 9];
    let status = unsafe { dana_dap_forward(data.as_ptr(), maps, w, h, 5, 9, 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, DanaStatus::Ok);
    assert!(dana_last_error().is_null());
    let fmaps = FeatureMaps::new(maps, w, h, data).unwrap();
    let expected = dap_forward(&fmaps, DapParams::new(5, 9).unwrap()).unwrap();
    assert_eq!(out, expected.values.data());
}

#[test]
fn dap_reports_unsupported_dimensions() {
    let data = vec![1.0; 4 * 3];
    let mut out = vec![0.0; 5 * 9];
    let status = unsafe { dana_dap_forward(data.as_ptr(), 1, 4, 3, 5, 9, 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, DanaStatus::UnsupportedDimensions);
    assert!(last_error().contains("unsupported"));
}

#[test]
fn dap_buffer_and_null_checks() {
    let data = vec![1.0; 10 * 6];
    let mut out = vec![0.0; 3];
    let status = unsafe { dana_dap_forward(data.as_ptr(), 1, 10, 6, 5, 9, 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, DanaStatus::BufferTooSmall);
    let status = unsafe { dana_dap_forward(ptr::null(), 1, 10, 6, 5, 9, 3, out.as_mut_ptr(), 45) };
    assert_eq!(status, DanaStatus::NullPointer);
}

#[test]
fn resample_reports_length() {
    let data: Vec<f64> = (0..50 * 2).map(f64::from).collect();
    let mut n = 0usize;
    let status = unsafe { dana_resample(data.as_ptr(), 50, 2, 50.0, 20.0, ptr::null_mut(), 0, &mut n) };
    assert_eq!(status, DanaStatus::BufferTooSmall);
    assert_eq!(n, 20);
    let mut out = vec![0.0; n * 2];
    let status = unsafe { dana_resample(data.as_ptr(), 50, 2, 50.0, 20.0, out.as_mut_ptr(), out.len(), &mut n) };
    assert_eq!(status, DanaStatus::Ok);
    let core = TimeWindow::new(data, 50, 50.0, vec![0, 1], 1).unwrap().resample(20.0).unwrap();
    assert_eq!(out, core.data());
}

#[test]
fn resample_too_short() {
    let data = [1.0, 2.0];
    let mut n = 0usize;
    let status = unsafe { dana_resample(data.as_ptr(), 1, 2, 50.0, 20.0, ptr::null_mut(), 0, &mut n) };
    assert_eq!(status, DanaStatus::TooShort);
}

#[test]
fn model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = Classifier::build(ModelSpec::toy_adaptive(5), 7).unwrap();
    checkpoint::save(dir.path(), &model, 7, serde_json::Value::Null).unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { dana_model_load(path.as_ptr(), &mut handle) }, DanaStatus::Ok);
    assert_eq!(unsafe { dana_model_classes(handle) }, 5);

    let data: Vec<f64> = (0..30 * 3).map(|k| (k as f64 * 0.1).sin()).collect();
    let sensors = [1usize];
    let mut scores = vec![0.0; 5];
    let mut label = usize::MAX;
    let status = unsafe {
        dana_model_predict(handle, data.as_ptr(), 30, 30.0, sensors.as_ptr(), 1, scores.as_mut_ptr(), 5, &mut label)
    };
    assert_eq!(status, DanaStatus::Ok);
    let window = TimeWindow::new(data, 30, 30.0, vec![1], 3).unwrap();
    let expected = model.scores(&[&window]).unwrap();
    assert_eq!(scores, expected.data());
    assert_eq!(label, model.predict(&[&window]).unwrap()[0]);
    unsafe { dana_model_free(handle) };
}

#[test]
fn model_load_missing_dir() {
    let path = CString::new("/nonexistent/dana/checkpoint").unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { dana_model_load(path.as_ptr(), &mut handle) };
    assert_ne!(status, DanaStatus::Ok);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());
    unsafe { dana_model_free(ptr::null_mut()) };
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dana.h")).unwrap();
    for name in ["dana_dap_forward", "dana_resample", "dana_model_load", "dana_model_predict", "dana_model_free"] {
        assert!(header.contains(name), "{name}");
    }
}
