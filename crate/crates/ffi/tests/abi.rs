use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cotsim_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { cotsim_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(cotsim_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn basis_round_trip() {
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { cotsim_basis_new(30, 20, 3, 10, 7, &mut b) }, CotsimStatus::Ok);
    let (mut d, mut m, mut mp, mut k) = (0, 0, 0, 0);
    assert_eq!(
        unsafe { cotsim_basis_dims(b, &mut d, &mut m, &mut mp, &mut k) },
        CotsimStatus::Ok
    );
    assert_eq!((d, m, mp, k), (30, 20, 10, 3));
    unsafe { cotsim_basis_free(b) };
}

#[test]
fn infeasible_basis_reports_code_and_message() {
    let mut b = ptr::null_mut();
    let s = unsafe { cotsim_basis_new(4, 10, 3, 2, 0, &mut b) };
    assert_eq!(s, CotsimStatus::DimensionInfeasible);
    assert!(b.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_handles_are_rejected() {
    let mut out = CotsimStats::default();
    assert_eq!(
        unsafe { cotsim_transition_stats(ptr::null(), &mut out) },
        CotsimStatus::NullPointer
    );
    assert!(last_error().contains("null"));
    unsafe { cotsim_model_free(ptr::null_mut()) };
}

#[test]
fn transition_stats_match_the_requested_shape() {
    let perm: Vec<usize> = (1..10).chain([0]).collect();
    let mut t = ptr::null_mut();
    let s = unsafe { cotsim_transition_new(perm.as_ptr(), perm.len(), 3, 0.5, 0.8, 0, 3, &mut t) };
    assert_eq!(s, CotsimStatus::Ok, "{}", last_error());
    let mut st = CotsimStats::default();
    assert_eq!(unsafe { cotsim_transition_stats(t, &mut st) }, CotsimStatus::Ok);
    assert!(st.tau > 0.5 && st.tau < 0.6);
    assert!((st.rho - 0.8).abs() < 1e-6);
    unsafe { cotsim_transition_free(t) };

    let s = unsafe { cotsim_transition_new(perm.as_ptr(), perm.len(), 3, 0.5, 0.2, 0, 3, &mut t) };
    assert_eq!(s, CotsimStatus::InfeasibleParameters);
}

#[test]
fn bounds_scale_inverse_square() {
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(cotsim_cot_bound(0.8, 0.5, 0.8, 20, 1.0, &mut a), CotsimStatus::Ok);
        assert_eq!(cotsim_cot_bound(0.4, 0.5, 0.8, 20, 1.0, &mut b), CotsimStatus::Ok);
        assert_eq!(cotsim_icl_bound(0.8, 0.0, 0.1, 20, 1.0, &mut b), CotsimStatus::InvalidArgument);
    }
    assert!((a - 20f64.ln() / 0.1024).abs() < 1e-9);
}

#[test]
fn model_weights_save_and_load() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cotsim_model_init(3, 0.1, 5, &mut m) }, CotsimStatus::Ok);
    let mut need = 0;
    unsafe { cotsim_model_weights(m, ptr::null_mut(), 0, &mut need) };
    assert_eq!(need, 36);
    let mut w = vec![0.0; need];
    let mut small = vec![0.0; 4];
    assert_eq!(
        unsafe { cotsim_model_weights(m, small.as_mut_ptr(), small.len(), ptr::null_mut()) },
        CotsimStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { cotsim_model_weights(m, w.as_mut_ptr(), w.len(), ptr::null_mut()) },
        CotsimStatus::Ok
    );

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cotsim_model_save(m, 3, 0, path.as_ptr()) }, CotsimStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { cotsim_model_load(path.as_ptr(), &mut back) }, CotsimStatus::Ok);
    let mut w2 = vec![1.0; need];
    unsafe { cotsim_model_weights(back, w2.as_mut_ptr(), w2.len(), ptr::null_mut()) };
    assert_eq!(w, w2);
    unsafe {
        cotsim_model_free(m);
        cotsim_model_free(back);
    }

    let missing = CString::new("/nonexistent/dir/m.json").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { cotsim_model_load(missing.as_ptr(), &mut none) }, CotsimStatus::Io);
}

#[test]
fn untrained_model_error_estimates_are_probabilities() {
    let mut b = ptr::null_mut();
    let mut m = ptr::null_mut();
    let mut t = ptr::null_mut();
    let perm: Vec<usize> = vec![1, 2, 3, 0];
    unsafe {
        assert_eq!(cotsim_basis_new(16, 6, 2, 4, 1, &mut b), CotsimStatus::Ok);
        assert_eq!(cotsim_model_init(16, 0.01, 2, &mut m), CotsimStatus::Ok);
        assert_eq!(cotsim_transition_new(perm.as_ptr(), 4, 2, 1.0, 1.0, 0, 0, &mut t), CotsimStatus::Ok);
    }
    let p = CotsimEvalParams { n_queries: 40, l_ts: 4, alpha_prime: 1.0, noise: 0.1, seed: 9 };
    let mut cot = CotsimErrorEstimate::default();
    let mut icl = CotsimErrorEstimate::default();
    unsafe {
        assert_eq!(cotsim_cot_error(m, b, t, &p, &mut cot), CotsimStatus::Ok, "{}", last_error());
        assert_eq!(cotsim_icl_error(m, b, t, &p, &mut icl), CotsimStatus::Ok);
    }
    for e in [cot, icl] {
        assert!((0.0..=1.0).contains(&e.mean));
        assert!(e.std_error >= 0.0);
    }
    unsafe {
        cotsim_basis_free(b);
        cotsim_model_free(m);
        cotsim_transition_free(t);
    }
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cotsim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "cotsim_version",
        "cotsim_last_error",
        "cotsim_basis_new",
        "cotsim_basis_free",
        "cotsim_model_init",
        "cotsim_model_load",
        "cotsim_model_weights",
        "cotsim_transition_new",
        "cotsim_transition_stats",
        "cotsim_cot_error",
        "cotsim_icl_error",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    // The header must parse as C when a compiler is available.
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-include", "stdio.h"])
        .arg(&header)
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
