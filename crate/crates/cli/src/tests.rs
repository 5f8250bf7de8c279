//! Whole command lines through `run_command_with`, on small configs.

use std::path::{Path, PathBuf};

use crate::output::read_solution;
use crate::{run_command_with, RunConfig};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn invoke(args: &[&std::ffi::OsStr]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once(std::ffi::OsStr::new("capillary")).chain(args.iter().copied());
    let code = run_command_with(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn bare(args: &[&str]) -> Output {
    invoke(&args.iter().map(std::ffi::OsStr::new).collect::<Vec<_>>())
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    let mut argv: Vec<&std::ffi::OsStr> = args.iter().map(std::ffi::OsStr::new).collect();
    argv.extend(["--threads", "2", "--config"].map(std::ffi::OsStr::new));
    argv.push(config.as_os_str());
    argv.push("--output-dir".as_ref());
    argv.push(out.as_os_str());
    invoke(&argv)
}

const FLAT: &str = r#"
[metric]
preset = "euclidean"
dim = 2
[domain]
shape = "disk"
radius = 1.0
h = 0.2
[problem]
psi = "s"
phi = "0"
"#;

const DISK: &str = r#"
seed = 4
[metric]
preset = "euclidean"
dim = 2
[domain]
shape = "disk"
radius = 1.0
h = 0.2
[problem]
psi = "1 + s"
phi = "0.3"
[certificates]
center = [0.3, 0.0]
radius = 0.5
"#;

fn u_column(csv: &str) -> Vec<f64> {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == "u").unwrap();
    csv.lines().skip(1).map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn forced_zero_solution_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "flat.toml", FLAT);
    let out = run(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(out.code, 0, "{}", out.stderr);
    let csv = std::fs::read_to_string(dir.path().join("out/solution.csv")).unwrap();
    assert!(csv.starts_with("vertex_id,x1,x2,u,W,d_gamma_boundary\n"));
    assert!(u_column(&csv).iter().all(|u| u.abs() < 1e-10));
    let report = std::fs::read_to_string(dir.path().join("out/report.jsonl")).unwrap();
    for line in report.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["name", "bound", "observed", "margin", "trace", "passed"] {
            assert!(v.get(key).is_some(), "missing {key} in {line}");
        }
    }
}

#[test]
fn out_of_range_and_misspelled_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), "dtau.toml", &format!("{FLAT}\n[solver]\ndtau = 2.0\n"));
    let out = run(&["solve"], &cfg, &out_dir);
    assert_eq!(out.code, (2));
    let cfg = write_config(dir.path(), "typo.toml", &FLAT.replace("psi =", "pzi ="));
    let out = run(&["solve"], &cfg, &out_dir);
    assert_eq!(out.code, (2));
    let err = &out.stderr;
    assert!(err.contains("pzi"), "{err}");
    let line: serde_json::Value = serde_json::from_str(err.lines().next().unwrap()).unwrap();
    assert_eq!(line["error"], "config");
    let missing = bare(&["solve"]);
    assert_eq!(missing.code, (2));
    let unknown = bare(&["frobnicate"]);
    assert_eq!(unknown.code, (2));
}

#[test]
fn structural_violations_are_config_errors_and_stalls_are_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), "sin.toml", &FLAT.replace("psi = \"s\"", "psi = \"sin(s)\""));
    assert_eq!(run(&["solve"], &cfg, &out_dir).code, (2));
    // angle data outside (-1, 1) fails validation too
    let cfg = write_config(dir.path(), "phi.toml", &FLAT.replace("phi = \"0\"", "phi = \"1.5\""));
    assert_eq!(run(&["solve"], &cfg, &out_dir).code, (2));
    // one Newton iteration per step cannot reach the tolerance: the path stalls
    let stall = format!("{DISK}\n[solver]\nmax_newton = 1\ndtau_min = 0.05\n");
    let cfg = write_config(dir.path(), "stall.toml", &stall);
    let out = run(&["solve"], &cfg, &out_dir);
    assert_eq!(out.code, (1));
    let err = &out.stderr;
    assert!(err.contains("\"solver\"") && err.contains("stalled"), "{err}");
}

#[test]
fn solve_verify_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "disk.toml", DISK);
    let out_dir = dir.path().join("out");
    assert_eq!(run(&["solve"], &cfg_path, &out_dir).code, (0));
    let csv_path = out_dir.join("solution.csv");
    let before = std::fs::read(&csv_path).unwrap();

    let verify = run(&["verify"], &cfg_path, &out_dir);
    assert_eq!(verify.code, 0, "{}", verify.stderr);
    let stdout = &verify.stdout;
    assert!(stdout.contains("lemma-1i"), "{stdout}");
    assert!(stdout.contains("PASS height"), "{stdout}");

    let export = run(&["export"], &cfg_path, &out_dir);
    assert_eq!(export.code, (0));
    let vtk = std::fs::read_to_string(out_dir.join("solution.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version"));
    assert!(vtk.contains("SCALARS u"));
    assert!(vtk.contains("SCALARS d_gamma_boundary"));
    assert_eq!(std::fs::read(&csv_path).unwrap(), before);

    // re-import is bit-identical to the written values
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let mesh = cfg.mesh(0).unwrap();
    let u = read_solution(&csv_path, &mesh).unwrap();
    let text = String::from_utf8(before).unwrap();
    for (a, b) in u.values().iter().zip(u_column(&text)) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let mesh_text = std::fs::read(out_dir.join("mesh.txt")).unwrap();
    let reread = capillary::Mesh::read_text(&mesh_text[..]).unwrap();
    assert_eq!(reread.vertices(), mesh.vertices());
}

#[test]
fn mms_table_shows_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[metric]
preset = "euclidean"
dim = 2
[domain]
shape = "disk"
radius = 1.0
h = 0.2
[problem]
psi = "s"
phi = "0"
[mms]
u_exact = "sqrt(4 - x1^2 - x2^2)"
"#;
    let cfg = write_config(dir.path(), "mms.toml", body);
    let out = run(&["mms"], &cfg, &dir.path().join("out"));
    assert_eq!(out.code, 0, "{}", out.stderr);
    let stdout = &out.stdout;
    let rows: Vec<Vec<&str>> = stdout
        .lines()
        .skip(1)
        .take(3)
        .map(|l| l.split_whitespace().collect())
        .collect();
    for row in &rows[1..] {
        let order: f64 = row[2].parse().unwrap();
        assert!((order - 2.0).abs() < 0.25, "{stdout}");
    }
    assert!(stdout.contains("PASS mms-linf"), "{stdout}");
}

#[test]
fn mms_without_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "flat.toml", FLAT);
    assert_eq!(run(&["mms"], &cfg, &dir.path().join("out")).code, (2));
    assert_eq!(run(&["oracle1d"], &cfg, &dir.path().join("out")).code, (2));
}

#[test]
fn oracle_cross_validation_on_interval() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[metric]
preset = "euclidean"
dim = 1
[domain]
shape = "interval"
cells = 64
[problem]
psi = "1 + s"
phi = "0.2"
[oracle]
m_dense = 1024
"#;
    let cfg = write_config(dir.path(), "line.toml", body);
    let out = run(&["oracle1d"], &cfg, &dir.path().join("out"));
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("PASS oracle-agreement"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "disk.toml", DISK);
    let out_dir = dir.path().join("out");
    let mut argv: Vec<&std::ffi::OsStr> = ["solve", "--seed", "99", "--threads", "1", "--config"]
        .map(std::ffi::OsStr::new)
        .to_vec();
    argv.extend([cfg.as_os_str(), "--output-dir".as_ref(), out_dir.as_os_str()]);
    let out = invoke(&argv);
    assert_eq!(out.code, (0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("continuation.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 99);
}
