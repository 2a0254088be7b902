use std::ffi::{CStr, CString};
use std::ptr;

use obsv_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(obsv_last_error()) }.to_string_lossy().into_owned()
}

fn lorenz() -> *mut ObsvSystem {
    let name = CString::new("lorenz").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { obsv_system_from_fixture(name.as_ptr(), &mut sys) }, ObsvStatus::Ok);
    sys
}

#[test]
fn fixture_dims_and_gamma() {
    let sys = lorenz();
    let (mut n, mut p, mut g) = (0usize, 0usize, 0.0);
    unsafe {
        assert_eq!(obsv_system_dims(sys, &mut n, &mut p), ObsvStatus::Ok);
        assert_eq!(obsv_n_norm(sys, &mut g), ObsvStatus::Ok);
        obsv_system_free(sys);
    }
    assert_eq!((n, p), (3, 1));
    assert!((g - 0.5f64.sqrt()).abs() < 1e-9, "gamma = {g}");
}

#[test]
fn unknown_fixture_and_null_arguments() {
    let name = CString::new("nope").unwrap();
    let mut sys = ptr::null_mut();
    unsafe {
        assert_eq!(obsv_system_from_fixture(name.as_ptr(), &mut sys), ObsvStatus::InvalidArgument);
        assert!(last_error().contains("nope"));
        assert!(sys.is_null());
        assert_eq!(obsv_system_from_fixture(ptr::null(), &mut sys), ObsvStatus::NullArgument);
        let mut n = 0usize;
        assert_eq!(obsv_system_dims(ptr::null(), &mut n, &mut n), ObsvStatus::NullArgument);
        obsv_system_free(ptr::null_mut());
        obsv_design_free(ptr::null_mut());
        obsv_string_free(ptr::null_mut());
    }
}

#[test]
fn malformed_model_json_is_rejected() {
    let text = CString::new("{\"A\": [[1.0]]").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { obsv_system_from_json(text.as_ptr(), &mut sys) }, ObsvStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn state_trap_matches_library() {
    let sys = lorenz();
    let ker = [1usize, 2];
    let mut center = [0.0; 3];
    let mut r = 0.0;
    unsafe {
        assert_eq!(obsv_state_trap(sys, ker.as_ptr(), 2, center.as_mut_ptr(), 3, &mut r), ObsvStatus::Ok);
        let mut short = [0.0; 2];
        assert_eq!(obsv_state_trap(sys, ker.as_ptr(), 2, short.as_mut_ptr(), 2, &mut r), ObsvStatus::BufferTooSmall);
        let bad = [7usize];
        assert_eq!(obsv_state_trap(sys, bad.as_ptr(), 1, center.as_mut_ptr(), 3, &mut r), ObsvStatus::InvalidArgument);
        obsv_system_free(sys);
    }
    assert!(center[0].abs() < 1e-3 && center[1].abs() < 1e-3);
    assert!(center[2] > 30.0 && center[2] < 45.0, "center = {center:?}");
}

#[test]
fn global_synthesis_round_trip() {
    let sys = lorenz();
    let ker = [1usize, 2];
    let c = [0.0, 0.0, 37.5];
    let mut design = ptr::null_mut();
    unsafe {
        let st = obsv_global_synth(sys, ker.as_ptr(), 2, ObsvRegionKind::Ball2, c.as_ptr(), 101.0, 0.0, &mut design);
        assert_eq!(st, ObsvStatus::Ok, "{}", last_error());

        let (mut m, mut rho) = (0.0, 0.0);
        assert_eq!(obsv_design_margins(design, &mut m, &mut rho), ObsvStatus::Ok);
        assert!(m > 0.0);
        assert!(rho.is_infinite());

        let mut l = [0.0; 3];
        let mut p = [0.0; 9];
        assert_eq!(obsv_design_gain(design, l.as_mut_ptr(), 3), ObsvStatus::Ok);
        assert_eq!(obsv_design_lyapunov(design, p.as_mut_ptr(), 9), ObsvStatus::Ok);
        assert_eq!(obsv_design_lyapunov(design, p.as_mut_ptr(), 4), ObsvStatus::BufferTooSmall);

        let mut v = 0.0;
        let st = obsv_verify(sys, l.as_ptr(), p.as_ptr(), ObsvRegionKind::Ball2, c.as_ptr(), 101.0, &mut v);
        assert_eq!(st, ObsvStatus::Ok, "{}", last_error());
        assert!(v > 0.0);

        let x0 = [1.0, 1.0, 1.0];
        let xh = [10.0, -10.0, 20.0];
        let mut e = f64::NAN;
        let st = obsv_simulate_observer(sys, l.as_ptr(), x0.as_ptr(), xh.as_ptr(), 10.0, 1e-3, &mut e);
        assert_eq!(st, ObsvStatus::Ok, "{}", last_error());
        assert!(e < 1e-6 * (9.0f64.powi(2) + 11.0f64.powi(2) + 19.0f64.powi(2)).sqrt(), "err = {e}");

        let mut json = ptr::null_mut();
        assert_eq!(obsv_design_to_json(design, &mut json), ObsvStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(obsv_design_from_json(json, &mut back), ObsvStatus::Ok);
        let mut l2 = [0.0; 3];
        assert_eq!(obsv_design_gain(back, l2.as_mut_ptr(), 3), ObsvStatus::Ok);
        assert_eq!(l, l2);

        obsv_string_free(json);
        obsv_design_free(back);
        obsv_design_free(design);
        obsv_system_free(sys);
    }
}

#[test]
fn unstable_gain_fails_verification() {
    let sys = lorenz();
    let l = [100.0, 0.0, 0.0];
    let p = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let c = [0.0, 0.0, 37.5];
    let mut m = -1.0;
    let st = unsafe { obsv_verify(sys, l.as_ptr(), p.as_ptr(), ObsvRegionKind::Ball2, c.as_ptr(), 101.0, &mut m) };
    assert_eq!(st, ObsvStatus::VerificationFailed);
    assert_eq!(m, 0.0);
    unsafe { obsv_system_free(sys) };
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(obsv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/obsv.h");
    assert!(std::path::Path::new(header).exists(), "header not generated");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ ObsvSystem *s = 0; ObsvStatus st = obsv_system_from_fixture(\"lorenz\", &s); obsv_system_free(s); return st == OBSV_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    match std::process::Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("cc not available; header syntax check skipped"),
    }
}
