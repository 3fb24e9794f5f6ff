use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use modspec_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(modspec_last_error()) }.to_string_lossy().into_owned()
}

/// One `M₂` fiber with `N = 2`: a 4×4 Hermitian matrix with spectrum {4, 3, 2, 1}.
fn m2_operator() -> *mut ModspecOperator {
    let re = [
        2.5, 0.5, 0.0, 0.0, //
        0.5, 2.5, 0.0, 0.0, //
        0.0, 0.0, 2.5, 1.5, //
        0.0, 0.0, 1.5, 2.5,
    ];
    let im = [0.0; 16];
    let mut op = ptr::null_mut();
    let st = unsafe { modspec_operator_new(1, [1.0].as_ptr(), [2usize].as_ptr(), 2, re.as_ptr(), im.as_ptr(), &mut op) };
    assert_eq!(st, ModspecStatus::Ok, "{}", last_error());
    op
}

#[test]
fn diagonalize_through_handles() {
    let op = m2_operator();
    let (mut points, mut len) = (0, 0);
    assert_eq!(unsafe { modspec_operator_shape(op, &mut points, &mut len) }, ModspecStatus::Ok);
    assert_eq!((points, len), (1, 2));

    let mut dec = ptr::null_mut();
    assert_eq!(unsafe { modspec_diagonalize(op, 1.0, 0, &mut dec) }, ModspecStatus::Ok);
    let (mut pos, mut neg) = (0, 0);
    assert_eq!(unsafe { modspec_decomposition_terms(dec, &mut pos, &mut neg) }, ModspecStatus::Ok);
    assert_eq!((pos, neg), (2, 0));
    let mut passed = 0;
    assert_eq!(unsafe { modspec_decomposition_certified(dec, &mut passed) }, ModspecStatus::Ok);
    assert_eq!(passed, 1);

    let mut vals = [0.0; 2];
    let mut written = 0;
    let st = unsafe { modspec_decomposition_eigenvalues(dec, 0, 0, vals.as_mut_ptr(), 2, &mut written) };
    assert_eq!(st, ModspecStatus::Ok);
    assert_eq!(written, 2);
    assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 4.0).abs() < 1e-12, "{vals:?}");

    let st = unsafe { modspec_decomposition_eigenvalues(dec, 1, 0, vals.as_mut_ptr(), 1, &mut written) };
    assert_eq!(st, ModspecStatus::BufferTooSmall);
    assert_eq!(written, 2);

    unsafe {
        modspec_decomposition_free(dec);
        modspec_operator_free(op);
    }
}

#[test]
fn errors_map_to_codes() {
    let mut op = ptr::null_mut();
    let re = [1.0, 2.0, 0.0, 1.0];
    let im = [0.0; 4];
    let st = unsafe { modspec_operator_new(1, [1.0].as_ptr(), [1usize].as_ptr(), 2, re.as_ptr(), im.as_ptr(), &mut op) };
    assert_eq!(st, ModspecStatus::NotHermitian);
    assert!(last_error().contains("Hermitian"));
    assert!(op.is_null());

    let st = unsafe { modspec_operator_new(1, [0.5].as_ptr(), [1usize].as_ptr(), 1, [1.0].as_ptr(), [0.0].as_ptr(), &mut op) };
    assert_eq!(st, ModspecStatus::InvalidArgument);

    let st = unsafe { modspec_operator_new(1, ptr::null(), [1usize].as_ptr(), 1, [1.0].as_ptr(), [0.0].as_ptr(), &mut op) };
    assert_eq!(st, ModspecStatus::NullPointer);

    let path = CString::new("/nonexistent/op.txt").unwrap();
    assert_eq!(unsafe { modspec_operator_from_file(path.as_ptr(), &mut op) }, ModspecStatus::Io);

    let op = m2_operator();
    let mut dec = ptr::null_mut();
    assert_eq!(unsafe { modspec_diagonalize(op, 2.0, 0, &mut dec) }, ModspecStatus::InvalidArgument);
    unsafe { modspec_operator_free(op) };

    unsafe {
        modspec_operator_free(ptr::null_mut());
        modspec_decomposition_free(ptr::null_mut());
    }
}

#[test]
fn file_loading_reports_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.op");
    std::fs::write(&f, "modspec-operator 1\nencoding hex\n").unwrap();
    let path = CString::new(f.to_str().unwrap()).unwrap();
    let mut op = ptr::null_mut();
    assert_eq!(unsafe { modspec_operator_from_file(path.as_ptr(), &mut op) }, ModspecStatus::Parse);
    assert!(last_error().contains("byte 28"), "{}", last_error());
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/modspec.h")).unwrap();
    for name in [
        "modspec_last_error",
        "modspec_version",
        "modspec_operator_new",
        "modspec_operator_from_file",
        "modspec_operator_free",
        "modspec_operator_shape",
        "modspec_diagonalize",
        "modspec_decomposition_free",
        "modspec_decomposition_terms",
        "modspec_decomposition_certified",
        "modspec_decomposition_eigenvalues",
        "typedef struct ModspecOperator ModspecOperator",
        "MODSPEC_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles the C smoke program against the header and the shared library.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let so = lib_dir.join("libmodspec_ffi.so");
    if !so.exists() {
        eprintln!("{} not built; skipping", so.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lmodspec_ffi", "-lm", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
