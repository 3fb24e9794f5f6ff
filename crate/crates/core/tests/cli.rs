use std::path::Path;
use std::process::{Command, Output};

use modspec::algebra::ParameterGrid;
use modspec::diag::ModuleOperator;
use modspec::io::{write_operator_file, Encoding, OperatorFieldFile};
use modspec::linalg::{c, CMat};

fn modspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modspec")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_single_fiber(path: &Path, dim: usize, len: usize, diag: &[f64], enc: Encoding) {
    let g = ParameterGrid::new(vec![0.0], vec![1.0], vec![dim]).unwrap();
    let k = ModuleOperator::new(&g, len, vec![CMat::from_diagonal(&diag.iter().map(|&v| c(v)).collect::<Vec<_>>().into())]).unwrap();
    write_operator_file(path, &OperatorFieldFile::from_operator(&k, enc)).unwrap();
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn diagonal_input_recovers_its_entries() {
    let dir = tempfile::tempdir().unwrap();
    let g = ParameterGrid::new(vec![0.0, 1.0], vec![0.5, 0.5], vec![1, 1]).unwrap();
    let k = ModuleOperator::scalar_diagonal(&g, &[5.0, 3.0, 2.0]);
    let input = dir.path().join("k.op");
    write_operator_file(&input, &OperatorFieldFile::from_operator(&k, Encoding::Decimal)).unwrap();
    let out = dir.path().join("out");
    let o = modspec(&["diagonalize", path_str(&input), "--output", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let csv = std::fs::read_to_string(out.join("eigenvalues.csv")).unwrap();
    let vals: Vec<f64> = csv
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(vals.len(), 6);
    for (v, want) in vals.chunks(2).zip([5.0, 3.0, 2.0]) {
        assert!(v.iter().all(|x| (x - want).abs() < 1e-14), "{v:?}");
    }
    assert!(std::fs::read_to_string(out.join("report.txt")).unwrap().contains("certificates PASS"));
}

#[test]
fn example35_flag_reports_dual_only() {
    let o = modspec(&["diagonalize", "--example35", "12"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("tail-profile verdict: H*-only at this truncation"));
}

#[test]
fn corrupted_payload_exits_2_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("k.op");
    write_single_fiber(&input, 1, 2, &[1.0, 2.0], Encoding::Base64);
    let mut text = std::fs::read_to_string(&input).unwrap();
    let at = text.find("block 0 ").unwrap() + 10;
    text.replace_range(at..at + 1, "*");
    std::fs::write(&input, text).unwrap();
    let o = modspec(&["diagonalize", path_str(&input)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("byte {at}")), "{}", stderr(&o));
}

#[test]
fn missing_file_exits_2() {
    let o = modspec(&["quadform", "/nonexistent/k.op"]);
    assert_eq!(o.status.code(), Some(2));
}

fn quadform_value(o: &Output, key: &str) -> f64 {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(key))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| panic!("{key} missing in {}", stdout(o)))
}

#[test]
fn quadform_on_diag_3_1() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.op");
    write_single_fiber(&input, 1, 2, &[3.0, 1.0], Encoding::Decimal);
    let o = modspec(&["quadform", path_str(&input)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!((quadform_value(&o, "Q*") - 3.0).abs() < 1e-9);
    assert!(quadform_value(&o, "projection defect") <= 1e-6);
}

#[test]
fn quadform_on_m2_matches_kyfan() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.op");
    write_single_fiber(&input, 2, 2, &[4.0, 3.0, 2.0, 1.0], Encoding::Decimal);
    let o = modspec(&["quadform", path_str(&input)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    // Normalized trace of the top two eigenvalues.
    let oracle = (4.0 + 3.0) / 2.0;
    assert!((quadform_value(&o, "Q*") - oracle).abs() < 1e-8);
    assert!((quadform_value(&o, "tau(lambda_1)") - oracle).abs() < 1e-10);
}

#[test]
fn quadform_refuses_zero_operator() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("z.op");
    write_single_fiber(&input, 1, 2, &[0.0, 0.0], Encoding::Decimal);
    let o = modspec(&["quadform", path_str(&input)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

fn butterfly(dir: &Path, coeffs: &str, tag: &str, extra: &[&str]) -> (Output, String, String) {
    let cf = dir.join(format!("{tag}.coef"));
    std::fs::write(&cf, coeffs).unwrap();
    let csv = dir.join(format!("{tag}.csv"));
    let rep = dir.join(format!("{tag}.gaps"));
    let mut args = vec![
        "butterfly",
        path_str(&cf),
        "--theta-min",
        "0.3",
        "--theta-max",
        "0.5",
        "--steps",
        "5",
        "--q-max",
        "8",
        "--osc-dim",
        "12",
        "--output",
        path_str(&csv),
        "--report",
        path_str(&rep),
    ];
    args.extend_from_slice(extra);
    let o = modspec(&args);
    (o, std::fs::read_to_string(&csv).unwrap_or_default(), std::fs::read_to_string(&rep).unwrap_or_default())
}

#[test]
fn butterfly_with_empty_potential_sits_on_levels() {
    let dir = tempfile::tempdir().unwrap();
    let (o, csv, rep) = butterfly(dir.path(), "# no coefficients\n", "empty", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(csv.starts_with(modspec::io::SWEEP_HEADER));
    let mut rows = 0;
    for line in csv.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let theta: f64 = f[0].parse().unwrap();
        let e: f64 = f[3].parse().unwrap();
        let i = ((e / theta + 1.0) / 2.0).round();
        assert!((e - (2.0 * i - 1.0) * theta).abs() < 1e-12, "{line}");
        rows += 1;
    }
    assert!(rows > 0);
    assert!(!rep.is_empty());
    assert!(rep.lines().all(|l| l.ends_with("PASS")), "{rep}");
}

#[test]
fn butterfly_small_potential_passes_and_large_is_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    // θ_min snaps to 1/3: Σ|w| = 0.8/3.
    let w = 0.8 / 3.0 / 4.0;
    let small = format!("1,0,{w},0\n-1,0,{w},0\n0,1,{w},0\n0,-1,{w},0\n");
    let (o, _, rep) = butterfly(dir.path(), &small, "small", &[]);
    assert_eq!(o.status.code(), Some(0), "{rep}");
    assert!(rep.lines().all(|l| l.ends_with("PASS")), "{rep}");

    let big = 3.0 * 0.5 / 4.0;
    let large = format!("1,0,{big},0\n-1,0,{big},0\n0,1,{big},0\n0,-1,{big},0\n");
    let (o, _, rep) = butterfly(dir.path(), &large, "large", &[]);
    assert!(!rep.contains("FAIL"), "{rep}");
    assert!(rep.contains("NOT-APPLICABLE"));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn butterfly_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let coeffs = "1,1,0.02,0.01\n-1,-1,0.02,-0.01\n";
    let (_, a, _) = butterfly(dir.path(), coeffs, "a", &[]);
    let (_, b, _) = butterfly(dir.path(), coeffs, "b", &[]);
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn malformed_coefficients_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _, _) = butterfly(dir.path(), "1,0,zero,0\n", "bad", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("byte"));
}

#[test]
fn gaps_subcommand_reports_each_theta() {
    let dir = tempfile::tempdir().unwrap();
    let cf = dir.path().join("w.coef");
    std::fs::write(&cf, "1,0,0.05,0\n-1,0,0.05,0\n").unwrap();
    let o = modspec(&["gaps", path_str(&cf), "--theta", "0.3333333333333333", "0.4", "--osc-dim", "12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn example35_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ex.op");
    let o = modspec(&["example35", "--levels", "6", "--write", path_str(&f), "--encoding", "base64"]);
    assert_eq!(o.status.code(), Some(0));
    let o = modspec(&["diagonalize", path_str(&f)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn thread_cap_is_honoured() {
    let o = Command::new(env!("CARGO_BIN_EXE_modspec"))
        .args(["example35", "--levels", "4"])
        .env("MODSPEC_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).is_empty());
}
