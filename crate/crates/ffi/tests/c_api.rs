use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mixorder_ffi::*;

fn faithful_path() -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/faithful.csv");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = mo_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn faithful_through_the_c_api() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(mo_dataset_from_csv(faithful_path().as_ptr(), &mut ds), MoStatus::Ok);
        assert_eq!((mo_dataset_n(ds), mo_dataset_d(ds)), (272, 2));

        let opts = mo_stp_options_default();
        let mut res = ptr::null_mut();
        assert_eq!(mo_run_stp(ds, &opts, &mut res), MoStatus::Ok);
        assert_eq!(mo_stp_result_g_hat(res), 2);
        assert!(!mo_stp_result_hit_cap(res));
        assert_eq!(mo_stp_result_alpha(res), 0.05);
        assert_eq!(mo_stp_result_trail_len(res), 2);

        let (mut g, mut log_v, mut log_p) = (0usize, 0.0, 0.0);
        assert_eq!(mo_stp_result_trail_get(res, 0, &mut g, &mut log_v, &mut log_p), MoStatus::Ok);
        assert_eq!(g, 1);
        assert!(log_p < (1e-20f64).ln());
        assert_eq!(log_p, -log_v);
        assert_eq!(
            mo_stp_result_trail_get(res, 5, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()),
            MoStatus::InvalidArgument
        );

        let mut json = ptr::null_mut();
        assert_eq!(mo_stp_result_to_json(res, &mut json), MoStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        mo_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["g_hat"], 2);
        assert_eq!(v["trail"].as_array().unwrap().len(), 2);

        let mut aic = [0.0; 3];
        let mut bic = [0.0; 3];
        let (mut ga, mut gb) = (0usize, 0usize);
        assert_eq!(
            mo_information_criteria(ds, 3, 0, aic.as_mut_ptr(), bic.as_mut_ptr(), &mut ga, &mut gb),
            MoStatus::Ok
        );
        assert_eq!(gb, 2);
        assert!((aic[0] - 9.520_564).abs() < 1e-5);

        mo_stp_result_free(res);
        mo_dataset_free(ds);
    }
}

#[test]
fn error_statuses() {
    unsafe {
        let mut ds = ptr::null_mut();
        let values = [1.0, f64::NAN];
        assert_eq!(mo_dataset_new(values.as_ptr(), 2, 1, &mut ds), MoStatus::DataError);
        assert!(ds.is_null());
        assert!(last_error().contains("non-finite"));

        assert_eq!(mo_dataset_new(ptr::null(), 2, 1, &mut ds), MoStatus::NullPointer);
        assert_eq!(
            mo_dataset_new(values.as_ptr(), 2, 1, ptr::null_mut()),
            MoStatus::NullPointer
        );

        let missing = CString::new("/nonexistent/x.csv").unwrap();
        assert_eq!(mo_dataset_from_csv(missing.as_ptr(), &mut ds), MoStatus::IoError);

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b\n1,2\n3,x\n").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(mo_dataset_from_csv(bad.as_ptr(), &mut ds), MoStatus::ParseError);
        assert!(last_error().contains("row 3"));

        let tiny = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(mo_dataset_new(tiny.as_ptr(), 4, 1, &mut ds), MoStatus::Ok);
        let mut res = ptr::null_mut();
        let mut opts = mo_stp_options_default();
        assert_eq!(mo_run_stp(ds, &opts, &mut res), MoStatus::DataError);
        opts.variant = 7;
        assert_eq!(mo_run_stp(ds, &opts, &mut res), MoStatus::InvalidArgument);
        assert!(res.is_null());
        mo_dataset_free(ds);

        // Success clears the previous message.
        let (mut p, mut lp) = (0.0, 0.0);
        assert_eq!(mo_p_value(20f64.ln(), &mut p, &mut lp), MoStatus::Ok);
        assert!(mo_last_error_message().is_null());
        assert!((p - 0.05).abs() < 1e-15);
        assert_eq!(mo_p_value(f64::NAN, &mut p, &mut lp), MoStatus::DataError);
    }
}

#[test]
fn e_value_aggregation() {
    unsafe {
        let mut out = 0.0;
        let logs = [4f64.ln(), f64::NEG_INFINITY];
        assert_eq!(mo_aggregate_e_values(logs.as_ptr(), 2, &mut out), MoStatus::Ok);
        assert!((out - 2f64.ln()).abs() < 1e-12);
        assert_eq!(mo_aggregate_e_values(ptr::null(), 0, &mut out), MoStatus::DataError);
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        mo_dataset_free(ptr::null_mut());
        mo_stp_result_free(ptr::null_mut());
        mo_string_free(ptr::null_mut());
        assert_eq!(mo_dataset_n(ptr::null()), 0);
        assert_eq!(mo_stp_result_g_hat(ptr::null()), 0);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mixorder.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mo_run_stp", "mo_dataset_new", "MoStpOptions", "MO_STATUS_OK", "mo_last_error_message"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler available; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
