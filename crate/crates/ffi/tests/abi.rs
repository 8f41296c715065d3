use std::ffi::{CStr, CString};
use std::ptr;

use mvscale_ffi::*;

fn last_error() -> String {
    let p = mvs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn ensemble(dim: usize, data: &[f64]) -> *mut MvsEnsemble {
    let mut out = ptr::null_mut();
    let s = unsafe { mvs_ensemble_new(dim, data.len() / dim, data.as_ptr(), &mut out) };
    assert_eq!(s, MvsStatus::Ok);
    out
}

#[test]
fn ensemble_round_trip_and_w2() {
    let a = ensemble(2, &[0.0, 0.0, 1.0, 1.0]);
    let b = ensemble(2, &[0.0, 1.0, 1.0, 2.0]);
    unsafe {
        assert_eq!(mvs_ensemble_dim(a), 2);
        assert_eq!(mvs_ensemble_count(a), 2);
        let mut buf = [9.0; 4];
        assert_eq!(mvs_ensemble_copy(a, buf.as_mut_ptr(), 4), MvsStatus::Ok);
        assert_eq!(buf, [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(mvs_ensemble_copy(a, buf.as_mut_ptr(), 3), MvsStatus::Validation);
        let (mut w, mut approx) = (0.0, true);
        assert_eq!(mvs_wasserstein2(a, b, &mut w, &mut approx), MvsStatus::Ok);
        assert!((w - 1.0).abs() < 1e-12);
        assert!(!approx);
        mvs_ensemble_free(a);
        mvs_ensemble_free(b);
    }
}

#[test]
fn null_and_invalid_inputs() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(mvs_ensemble_new(1, 1, ptr::null(), &mut out), MvsStatus::NullPointer);
        assert!(last_error().contains("data"));
        let nan = [f64::NAN];
        assert_eq!(mvs_ensemble_new(1, 1, nan.as_ptr(), &mut out), MvsStatus::Validation);
        let mut m = ptr::null_mut();
        let bad = CString::new(r#"{"name": "linear", "a": -1}"#).unwrap();
        assert_eq!(mvs_model_from_json(bad.as_ptr(), &mut m), MvsStatus::Validation);
        assert!(m.is_null());
        assert_eq!(mvs_wasserstein2(ptr::null(), ptr::null(), ptr::null_mut(), ptr::null_mut()), MvsStatus::NullPointer);
        mvs_ensemble_free(ptr::null_mut());
        mvs_model_free(ptr::null_mut());
        mvs_string_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    unsafe {
        let mut m = ptr::null_mut();
        let bad = CString::new("{").unwrap();
        assert_eq!(mvs_model_from_json(bad.as_ptr(), &mut m), MvsStatus::Validation);
        let ok = CString::new(r#"{"name": "eks", "dim": 2}"#).unwrap();
        assert_eq!(mvs_model_from_json(ok.as_ptr(), &mut m), MvsStatus::Ok);
        assert!(mvs_last_error_message().is_null());
        let (mut n, mut k, mut dn, mut dk) = (0, 0, 0, 0);
        assert_eq!(mvs_model_dims(m, &mut n, &mut k, &mut dn, &mut dk), MvsStatus::Ok);
        assert_eq!((n, k, dn, dk), (2, 2, 2, 2));
        mvs_model_free(m);
    }
}

#[test]
fn simulate_is_deterministic() {
    let spec = CString::new(r#"{"name": "linear"}"#).unwrap();
    let ts = CString::new(r#"{"epsilon": 0.1, "delta": 0.01}"#).unwrap();
    let sim = CString::new(r#"{"dt_macro": 0.01, "horizon": 0.2, "n_particles": 8, "seed": 5}"#).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mvs_model_from_json(spec.as_ptr(), &mut m), MvsStatus::Ok);
        let x0 = ensemble(1, &[1.0; 8]);
        let y0 = ensemble(1, &[0.0; 8]);
        let run = || {
            let (mut x, mut y) = (ptr::null_mut(), ptr::null_mut());
            assert_eq!(mvs_simulate(m, x0, y0, ts.as_ptr(), sim.as_ptr(), 0, &mut x, &mut y), MvsStatus::Ok);
            let mut buf = vec![0.0; 8];
            assert_eq!(mvs_ensemble_copy(x, buf.as_mut_ptr(), 8), MvsStatus::Ok);
            mvs_ensemble_free(x);
            mvs_ensemble_free(y);
            buf
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite() && *v != 1.0));
        mvs_ensemble_free(x0);
        mvs_ensemble_free(y0);
        mvs_model_free(m);
    }
}

#[test]
fn invariant_measure_of_ou() {
    let spec = CString::new(r#"{"name": "linear", "k": 1}"#).unwrap();
    let cfg = CString::new(r#"{"n_particles": 4000}"#).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mvs_model_from_json(spec.as_ptr(), &mut m), MvsStatus::Ok);
        let mu = ensemble(1, &[0.0]);
        let (mut out, mut conv) = (ptr::null_mut(), false);
        assert_eq!(mvs_invariant_measure(m, mu, cfg.as_ptr(), &mut conv, &mut out), MvsStatus::Ok);
        assert!(conv);
        let n = mvs_ensemble_count(out);
        let mut buf = vec![0.0; n];
        mvs_ensemble_copy(out, buf.as_mut_ptr(), n);
        let m2 = buf.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((m2 - 1.0).abs() < 0.1, "M2 = {m2}");
        mvs_ensemble_free(out);
        mvs_ensemble_free(mu);
        mvs_model_free(m);
    }
}

#[test]
fn experiment_run_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(
        r#"{"experiment": "simulate", "model": {"name": "linear"}, "seed": 11,
            "time_scales": {"epsilon": 0.1, "delta": 0.01},
            "sim": {"dt_macro": 0.01, "horizon": 0.1, "n_particles": 16}}"#,
    )
    .unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut summary = ptr::null_mut();
        assert_eq!(mvs_experiment_run(cfg.as_ptr(), out.as_ptr(), 2, &mut summary), MvsStatus::Ok);
        let text = CStr::from_ptr(summary).to_str().unwrap().to_owned();
        mvs_string_free(summary);
        assert!(text.contains("\"config_hash\""));
        let path = CString::new(dir.path().join("summary.json").to_str().unwrap()).unwrap();
        assert_eq!(mvs_experiment_replay(path.as_ptr(), 1), MvsStatus::Ok);
        let csv = dir.path().join("trajectory.csv");
        let mut bytes = std::fs::read(&csv).unwrap();
        let last = bytes.len() - 2;
        bytes[last] = if bytes[last] == b'1' { b'2' } else { b'1' };
        std::fs::write(&csv, bytes).unwrap();
        assert_eq!(mvs_experiment_replay(path.as_ptr(), 1), MvsStatus::ReplayMismatch);
        assert!(last_error().contains("trajectory.csv"));
    }
}
