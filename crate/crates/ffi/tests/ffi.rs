use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use phasehit_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ph_last_error_message()) }.to_string_lossy().into_owned()
}

fn example() -> *mut PhModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ph_model_example(&mut m) }, PhStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn example_model_queries() {
    let m = example();
    let mut n = 0usize;
    unsafe {
        assert_eq!(ph_model_n_states(m, &mut n), PhStatus::Ok);
        assert_eq!(n, 27);
        assert_eq!(ph_model_n_targets(m, &mut n), PhStatus::Ok);
        assert_eq!(n, 3);

        let expr = CString::new("tau(1) != tau(2) && tau(1) != tau(3) && tau(2) != tau(3)").unwrap();
        let mut p = 0.0;
        assert_eq!(ph_tail(m, expr.as_ptr(), &mut p), PhStatus::Ok);
        assert!((p - 0.899).abs() < 1e-3, "{p}");

        let mut q = 0.0;
        assert_eq!(ph_equality_prob(m, 1, 2, &mut q), PhStatus::Ok);
        let expr = CString::new("tau(1) == tau(2)").unwrap();
        assert_eq!(ph_tail(m, expr.as_ptr(), &mut p), PhStatus::Ok);
        assert!((p - q).abs() < 1e-10);

        let mut s = 0.0;
        assert_eq!(ph_survival(m, 1, 0.0, &mut s), PhStatus::Ok);
        assert!((s - 1.0).abs() < 1e-12);

        let keys = [1u32, 2, 3];
        let times = [0.4, 0.4, 0.9];
        let mut f = 0.0;
        assert_eq!(ph_density(m, keys.as_ptr(), times.as_ptr(), 3, &mut f), PhStatus::Ok);
        let region = CString::new("{1,2}<{3}").unwrap();
        let mut g = 0.0;
        assert_eq!(ph_density_in_region(m, region.as_ptr(), [0.4, 0.9].as_ptr(), 2, &mut g), PhStatus::Ok);
        assert_eq!(f, g);
        assert!(f > 0.0);

        let (mut v, mut se) = (0.0, 0.0);
        let region = CString::new("{1}<{2}<{3}").unwrap();
        assert_eq!(ph_simulate_region(m, region.as_ptr(), 2000, 0.0, 3, &mut v, &mut se), PhStatus::Ok);
        assert!(v > 0.0 && se > 0.0);
        ph_model_free(m);
    }
}

#[test]
fn errors_are_reported_with_codes() {
    let m = example();
    let mut p = 0.0;
    unsafe {
        let bad = CString::new("tau(1) >> 2").unwrap();
        assert_eq!(ph_tail(m, bad.as_ptr(), &mut p), PhStatus::Parse);
        assert!(!last_error().is_empty());
        assert_eq!(ph_tail(m, ptr::null(), &mut p), PhStatus::NullPointer);
        assert_eq!(ph_tail(ptr::null(), bad.as_ptr(), &mut p), PhStatus::NullPointer);
        assert_eq!(ph_equality_prob(m, 1, 9, &mut p), PhStatus::InvalidModel);
        let region = CString::new("{1}<{2}").unwrap();
        assert_eq!(ph_density_in_region(m, region.as_ptr(), [0.9, 0.4].as_ptr(), 2, &mut p), PhStatus::Inconsistent);
        let ok = CString::new("tau(1) > 0").unwrap();
        assert_eq!(ph_tail(m, ok.as_ptr(), &mut p), PhStatus::Ok);
        assert_eq!(last_error(), "");

        let mut h = ptr::null_mut();
        let text = CString::new("states = [\"a\", \"a\"]\nrates = []\nalpha = \"uniform\"\n").unwrap();
        assert_eq!(ph_model_from_toml(text.as_ptr(), &mut h), PhStatus::Parse);
        assert!(h.is_null());
        assert!(last_error().contains("duplicate state label"), "{}", last_error());
        let path = CString::new("/nonexistent/model.toml").unwrap();
        assert_eq!(ph_model_from_path(path.as_ptr(), &mut h), PhStatus::Io);
        ph_model_free(ptr::null_mut());
        ph_model_free(m);
    }
}

#[test]
fn model_from_toml_text() {
    let text = CString::new(
        "states = [\"0\", \"1\"]\nrates = [[\"0\", \"1\", 2.0]]\nalpha = { \"0\" = 1.0 }\n[targets]\n1 = [\"1\"]\n",
    )
    .unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(ph_model_from_toml(text.as_ptr(), &mut m), PhStatus::Ok);
        let mut s = 0.0;
        assert_eq!(ph_survival(m, 1, 1.0, &mut s), PhStatus::Ok);
        assert!((s - (-2.0f64).exp()).abs() < 1e-12);
        ph_model_free(m);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/phasehit.h");
    let text = std::fs::read_to_string(&header).expect("header generated by the build script");
    for name in [
        "typedef struct PhModel PhModel",
        "PH_STATUS_OK = 0",
        "PH_STATUS_PANIC",
        "ph_model_from_toml",
        "ph_model_free",
        "ph_density_in_region",
        "ph_tail",
        "ph_equality_prob",
        "ph_survival",
        "ph_simulate_region",
        "ph_last_error_message",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let probe = std::env::temp_dir().join(format!("phasehit_probe_{}.c", std::process::id()));
    std::fs::write(
        &probe,
        "#include \"phasehit.h\"\nint main(void) { PhModel *m = 0; PhStatus s = ph_model_example(&m); ph_model_free(m); return (int)s; }\n",
    )
    .unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-I").arg(dir.join("include")).arg(&probe).status() {
        Ok(status) => assert!(status.success(), "header does not compile"),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
    let _ = std::fs::remove_file(probe);
}
