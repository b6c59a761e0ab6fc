use std::ffi::{CStr, CString};
use std::ptr;

use stein_fclt_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sf_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn graph_handle_round_trip() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(sf_graph_new(10, 0.5, &mut g), SfStatus::Ok);
        let mut path = ptr::null_mut();
        assert_eq!(sf_graph_simulate(g, 1, 0, &mut path), SfStatus::Ok);
        assert_eq!(sf_path_dim(path), 2);
        assert_eq!(sf_path_grid(path), 10);
        let mut buf = vec![f64::NAN; 22];
        assert_eq!(sf_path_values(path, buf.as_mut_ptr(), buf.len()), SfStatus::Ok);
        assert_eq!(&buf[..2], &[0.0, 0.0]);
        assert_eq!(sf_path_values(path, buf.as_mut_ptr(), 3), SfStatus::BufferTooSmall);
        let mut again = ptr::null_mut();
        sf_graph_simulate(g, 1, 0, &mut again);
        let mut buf2 = vec![0.0; 22];
        sf_path_values(again, buf2.as_mut_ptr(), 22);
        assert_eq!(buf, buf2);
        sf_path_free(path);
        sf_path_free(again);
        sf_graph_free(g);
    }
}

#[test]
fn graph_bounds_and_errors() {
    unsafe {
        let (mut pre, mut con) = (0.0, 0.0);
        assert_eq!(sf_graph_bounds(20, &mut pre, &mut con), SfStatus::Ok);
        assert!((pre - 23.0 / 20.0).abs() < 1e-15);
        assert!(con > pre);
        let mut g = ptr::null_mut();
        assert_eq!(sf_graph_new(2, 0.5, &mut g), SfStatus::InvalidArgument);
        assert!(g.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(sf_graph_bounds(20, ptr::null_mut(), &mut con), SfStatus::NullPointer);
        sf_graph_free(ptr::null_mut());
        sf_path_free(ptr::null_mut());
        assert_eq!(sf_path_dim(ptr::null()), 0);
    }
}

#[test]
fn runs_handle() {
    unsafe {
        let rs = [2usize, 1];
        let mut r = ptr::null_mut();
        assert_eq!(sf_runs_new(50, 0.5, rs.as_ptr(), 2, &mut r), SfStatus::Ok);
        let (mut pre, mut con) = (0.0, 0.0);
        assert_eq!(sf_runs_bounds(r, &mut pre, &mut con), SfStatus::Ok);
        assert!(pre > 0.0 && con > pre);
        let mut path = ptr::null_mut();
        assert_eq!(sf_runs_simulate(r, 3, 0, &mut path), SfStatus::Ok);
        assert_eq!(sf_path_dim(path), 2);
        assert!(sf_path_sup_norm(path).is_finite());
        sf_path_free(path);
        sf_runs_free(r);
    }
}

#[test]
fn json_config_entry_point() {
    unsafe {
        let cfg = CString::new(r#"{"kind":"graph","action":"verify-regression","n":4,"p":0.3}"#).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(sf_run_config(cfg.as_ptr(), 1, &mut out), SfStatus::Ok);
        let text = CStr::from_ptr(out).to_str().unwrap().to_owned();
        sf_string_free(out);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["status"], "ok");
        assert!(v.get("metadata").is_none());

        let mut again = ptr::null_mut();
        sf_run_config(cfg.as_ptr(), 3, &mut again);
        assert_eq!(CStr::from_ptr(again).to_str().unwrap(), text);
        sf_string_free(again);

        let bad = CString::new(r#"{"kind":"graph","n":4,"extra":true}"#).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(sf_run_config(bad.as_ptr(), 0, &mut none), SfStatus::Config);
        assert!(none.is_null());
        assert!(last_error().contains("extra"));
    }
}

#[test]
fn header_lists_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/stein_fclt.h")).unwrap();
    for name in [
        "sf_last_error",
        "sf_graph_new",
        "sf_graph_simulate",
        "sf_graph_bounds",
        "sf_runs_new",
        "sf_runs_bounds",
        "sf_path_values",
        "sf_run_config",
        "sf_string_free",
        "SF_STATUS_VIOLATION",
        "typedef struct SfPath SfPath",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = std::env::temp_dir().join(format!("sf_header_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("probe.c");
    std::fs::write(&src, "#include \"stein_fclt.h\"\nint main(void) { return sf_path_dim(0) == 0 ? 0 : 1; }\n").unwrap();
    let status = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
