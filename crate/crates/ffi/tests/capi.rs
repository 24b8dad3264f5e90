use coherence_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    let p = coherence_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn project_partition_through_c_abi() {
    let kind = CString::new("partition").unwrap();
    let q = [0.39, 0.73, 0.67, 0.71];
    let mut out = [0.0; 4];
    let mut residual = 0.0;
    let status = unsafe { coherence_project(kind.as_ptr(), 4, q.as_ptr(), out.as_mut_ptr(), &mut residual) };
    assert_eq!(status, CoherenceStatus::Ok);
    for (a, b) in out.iter().zip([0.015, 0.355, 0.295, 0.335]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((residual - 0.75).abs() < 1e-12);
}

#[test]
fn bad_arguments_set_status_and_message() {
    let kind = CString::new("xor").unwrap();
    let q = [0.5, 0.5];
    let mut out = [0.0; 2];
    let status = unsafe { coherence_project(kind.as_ptr(), 2, q.as_ptr(), out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(status, CoherenceStatus::InvalidArgument);
    assert!(last_error().contains("xor"));

    let neg = CString::new("neg").unwrap();
    let status = unsafe { coherence_project(neg.as_ptr(), 2, ptr::null(), out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(status, CoherenceStatus::NullPointer);

    let status = unsafe { coherence_project(neg.as_ptr(), 3, [0.1; 3].as_ptr(), out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(status, CoherenceStatus::InvalidArgument);
}

#[test]
fn exposure_of_negation() {
    let kind = CString::new("neg").unwrap();
    let mut out = 0.0;
    let status = unsafe { coherence_exposure(kind.as_ptr(), 2, [0.84, 0.89].as_ptr(), &mut out) };
    assert_eq!(status, CoherenceStatus::Ok);
    assert!((out - 0.73).abs() < 1e-12);
}

#[test]
fn certify_json_round_trip() {
    let input = CString::new(
        r#"{"id":"fig1","owners":[0,1,2,3],"locals":[[0.39],[0.73],[0.67],[0.71]],
            "coupling":[{"id":"p","kind":"partition","coords":[0,1,2,3]}]}"#,
    )
    .unwrap();
    let mut out: *mut std::os::raw::c_char = ptr::null_mut();
    let status = unsafe { coherence_certify_json(input.as_ptr(), &mut out) };
    assert_eq!(status, CoherenceStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { coherence_string_free(out) };
    assert!((json["eps_star"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(json["binding"][0], "p:sum=1");

    let bad = CString::new("{not json").unwrap();
    let status = unsafe { coherence_certify_json(bad.as_ptr(), &mut out) };
    assert_eq!(status, CoherenceStatus::ParseError);

    let infeasible = CString::new(
        r#"{"owners":[0,1],"locals":[[0.5],[0.5]],
            "coupling":[{"kind":"partition","coords":[0,1],"b":3.0}]}"#,
    )
    .unwrap();
    let status = unsafe { coherence_certify_json(infeasible.as_ptr(), &mut out) };
    assert_eq!(status, CoherenceStatus::Infeasible);
}

#[test]
fn eprocess_handle_lifecycle() {
    let alphas = [0.05, 1e-4];
    let mut h: *mut CoherenceEProcess = ptr::null_mut();
    assert_eq!(
        unsafe { coherence_eprocess_new(alphas.as_ptr(), 2, &mut h) },
        CoherenceStatus::Ok
    );
    let mut reject = 7u8;
    assert_eq!(
        unsafe { coherence_eprocess_decide(h, 0.05, &mut reject) },
        CoherenceStatus::Ok
    );
    assert_eq!(reject, 0);
    // a large, persistent residual drives the e-value past 1/0.05
    for _ in 0..50 {
        assert_eq!(
            unsafe { coherence_eprocess_update(h, 0.3, 2, 100) },
            CoherenceStatus::Ok
        );
    }
    let mut log_e = 0.0;
    assert_eq!(
        unsafe { coherence_eprocess_log_e_mix(h, &mut log_e) },
        CoherenceStatus::Ok
    );
    assert!(log_e > 20f64.ln());
    assert_eq!(
        unsafe { coherence_eprocess_decide(h, 0.05, &mut reject) },
        CoherenceStatus::Ok
    );
    assert_eq!(reject, 1);
    assert_eq!(
        unsafe { coherence_eprocess_update(h, -1.0, 2, 100) },
        CoherenceStatus::InvalidArgument
    );
    unsafe { coherence_eprocess_free(h) };
    unsafe { coherence_eprocess_free(ptr::null_mut()) };
    assert_eq!(
        unsafe { coherence_eprocess_update(ptr::null_mut(), 0.1, 2, 10) },
        CoherenceStatus::NullPointer
    );
}

#[test]
fn optimal_lambda_matches_formula() {
    assert!((coherence_optimal_lambda(0.05, 4, 100) - 1.25).abs() < 1e-12);
    assert_eq!(coherence_optimal_lambda(0.0, 4, 100), 0.0);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/coherence.h")).unwrap();
    for name in [
        "coherence_project",
        "coherence_exposure",
        "coherence_certify_json",
        "coherence_eprocess_new",
        "coherence_eprocess_update",
        "coherence_eprocess_log_e_mix",
        "coherence_eprocess_decide",
        "coherence_eprocess_free",
        "coherence_last_error",
        "coherence_string_free",
        "COHERENCE_STATUS_OK",
        "typedef struct CoherenceEProcess CoherenceEProcess",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
