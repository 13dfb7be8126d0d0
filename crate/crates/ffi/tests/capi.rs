use std::ffi::{c_char, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fracritz_ffi::*;

const CONFIG: &str = "[problem]\ndim = 2\ns = 0.5\n\n[ansatz]\nkind = \"special\"\ndepth = 2\nwidth = 8\n\n\
                      [quadrature]\npoints = 200\nbatches = 2\n\n[training]\nepochs = 5\neval_every = 5\ntest_points = 500\n";

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 1024];
    let n = unsafe { frz_last_error_message(buf.as_mut_ptr(), buf.len()) };
    buf[..n].iter().map(|&c| c as u8 as char).collect()
}

#[test]
fn new_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let ckpt = dir.path().join("model.bin");
    unsafe {
        let mut m: *mut FrzModel = ptr::null_mut();
        assert_eq!(frz_model_new(FrzAnsatz::Special, 2, 8, 2, 0.5, 7, &mut m), FrzStatus::Ok);
        let mut n = 0;
        assert_eq!(frz_model_param_count(m, &mut n), FrzStatus::Ok);
        assert_eq!(n, 2 * (3 * 8 + 8 + 8 * 8 + 8 + 8) + 2);
        assert_eq!(frz_model_save(m, cstr(&ckpt).as_ptr()), FrzStatus::Ok);

        let mut back: *mut FrzModel = ptr::null_mut();
        assert_eq!(
            frz_model_load(cstr(&config).as_ptr(), cstr(&ckpt).as_ptr(), &mut back),
            FrzStatus::Ok,
            "{}",
            last_error()
        );
        let xs = [0.1, -0.3, 0.5, 0.5, -0.9, 0.2];
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        assert_eq!(frz_model_trace(m, xs.as_ptr(), 3, 2, a.as_mut_ptr()), FrzStatus::Ok);
        assert_eq!(frz_model_trace(back, xs.as_ptr(), 3, 2, b.as_mut_ptr()), FrzStatus::Ok);
        assert_eq!(a, b);
        let mut v = 0.0;
        assert_eq!(frz_model_eval(back, xs.as_ptr(), 2, 0.0, &mut v), FrzStatus::Ok);
        assert_eq!(v, a[0]);
        let (mut g1, mut g2) = (0.0, 0.0);
        assert_eq!(frz_model_decay_rates(back, &mut g1, &mut g2), FrzStatus::Ok);
        assert!((g1 - 0.5).abs() < 1e-12 && (g2 - 0.5).abs() < 1e-12);
        let mut e = 0.0;
        assert_eq!(frz_model_error(back, 1000, 3, &mut e), FrzStatus::Ok);
        assert!(e > 0.0 && e.is_finite());
        frz_model_free(m);
        frz_model_free(back);
    }
}

#[test]
fn argument_errors_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut m: *mut FrzModel = ptr::null_mut();
        assert_eq!(frz_model_new(FrzAnsatz::Simple, 2, 4, 1, 1.5, 0, &mut m), FrzStatus::InvalidArgument);
        assert!(last_error().contains('s'));
        assert_eq!(frz_model_new(FrzAnsatz::Simple, 2, 4, 1, 0.5, 0, &mut m), FrzStatus::Ok);
        let x = [0.2, 0.3];
        let mut v = 0.0;
        assert_eq!(frz_model_eval(m, x.as_ptr(), 2, 0.0, &mut v), FrzStatus::InvalidArgument);
        assert_eq!(frz_model_eval(m, ptr::null(), 1, 0.0, &mut v), FrzStatus::NullPointer);
        assert_eq!(frz_model_eval(m, x.as_ptr(), 1, -1.0, &mut v), FrzStatus::InvalidArgument);
        frz_model_free(m);

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[problem]\ndim = 0\n").unwrap();
        assert_eq!(frz_solve(cstr(&bad).as_ptr(), -1, ptr::null_mut(), ptr::null_mut()), FrzStatus::Config);
        let missing = dir.path().join("missing.bin");
        let good = dir.path().join("run.toml");
        std::fs::write(&good, CONFIG).unwrap();
        assert_eq!(
            frz_model_load(cstr(&good).as_ptr(), cstr(&missing).as_ptr(), &mut m),
            FrzStatus::Io
        );
    }
}

#[test]
fn solve_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let path = cstr(&config);
    let run = |seed: i64| unsafe {
        let mut m: *mut FrzModel = ptr::null_mut();
        let mut e = f64::NAN;
        assert_eq!(frz_solve(path.as_ptr(), seed, &mut m, &mut e), FrzStatus::Ok, "{}", last_error());
        frz_model_free(m);
        e
    };
    let a = run(3);
    assert_eq!(a.to_bits(), run(3).to_bits());
    assert_ne!(a.to_bits(), run(4).to_bits());
}

fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib = artifact_dir().join("libfracritz_ffi.a");
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "fracritz.h"
int main(void) {
    size_t n = 0;
    if (frz_sinc_node_count(0.5, 1.0 / 3.0, &n) != FRZ_STATUS_OK) return 1;
    FrzModel *m = NULL;
    if (frz_model_new(FRZ_ANSATZ_SPECIAL, 2, 4, 1, 0.5, 1, &m) != FRZ_STATUS_OK) return 2;
    double x = 0.25, v = 0.0;
    if (frz_model_eval(m, &x, 1, 0.5, &v) != FRZ_STATUS_OK) return 3;
    if (frz_model_eval(m, &x, 3, 0.5, &v) != FRZ_STATUS_INVALID_ARGUMENT) return 4;
    char buf[256];
    frz_last_error_message(buf, sizeof buf);
    printf("%zu %s\n", n, buf);
    frz_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let syntax = Command::new(&cc)
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .status()
        .unwrap();
    assert!(syntax.success());
    if !lib.exists() {
        eprintln!("{} not built; link step skipped", lib.display());
        return;
    }
    let exe = dir.path().join("probe");
    let out = Command::new(&cc)
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.starts_with("91 "), "{text}");
    assert!(text.contains("dim = 3"), "{text}");
}

fn which_cc() -> Result<PathBuf, ()> {
    for cand in ["cc", "gcc", "clang"] {
        if Command::new(cand).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(PathBuf::from(cand));
        }
    }
    Err(())
}
