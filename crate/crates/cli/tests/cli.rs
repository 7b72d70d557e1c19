use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stokes_recovery::recovery::{recovery_errors, solve_background};
use stokes_recovery::{ExactSolution, Mesh, Session};
use tempfile::TempDir;

const GOLDEN: &str = include_str!("golden/table_n2.csv");

/// The well-conditioned rows of the coarse reference table, all three Gram modes.
const TABLE_N2: &str = r#"
output = "out"
solution = "case2"

[domain]
kind = "unit_square"
n = 2

[recovery]
mode = ["plain", "jacobi", "jacobi_threshold"]

[measurements]
pairs = [[4, 0], [16, 0], [0, 4], [4, 4], [16, 4], [0, 16], [4, 16], [16, 16]]
"#;

fn recover(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_recover"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) -> String {
    let out = recover(args, &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn coarse_table_matches_golden_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TABLE_N2);
    run_ok(&["table", cfg.to_str().unwrap()]);
    let csv = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(csv, GOLDEN);

    let rows = csv_rows(&csv);
    let col = |name: &str| rows[0].iter().position(|c| c == name).unwrap();
    let first = &rows[1];
    assert_eq!((first[col("m_u")].as_str(), first[col("m_p")].as_str(), first[col("mode")].as_str()), ("4", "0", "plain"));
    let cond: f64 = first[col("cond_G")].parse().unwrap();
    assert!((cond / 1.02e3).max(1.02e3 / cond) < 3.0, "cond_G {cond}");
    assert!(!dir.path().join("out/fields").exists());
}

#[test]
fn runs_are_deterministic_and_reproducible_from_the_manifest() {
    let dir = TempDir::new().unwrap();
    let text = TABLE_N2.replace("[[4, 0], [16, 0], [0, 4], [4, 4], [16, 4], [0, 16], [4, 16], [16, 16]]", "[[4, 4], [16, 16]]");
    let cfg = write_config(dir.path(), &text);
    run_ok(&["run", cfg.to_str().unwrap()]);
    let first = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_text"].as_str().unwrap(), text);
    assert_eq!(manifest["tables"][0]["rows"].as_array().unwrap().len(), 6);
    let field = manifest["tables"][0]["rows"][5]["field"].as_str().unwrap();
    let dump = fs::read_to_string(dir.path().join("out").join(field)).unwrap();
    assert!(dump.starts_with("x,y,u1,u2,p\n"));

    let again = TempDir::new().unwrap();
    let cfg2 = write_config(again.path(), manifest["config_text"].as_str().unwrap());
    run_ok(&["run", cfg2.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(again.path().join("out/results.csv")).unwrap(), first);
}

#[test]
fn empty_measurement_set_reports_the_background_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &TABLE_N2.replace("[[4, 0], [16, 0], [0, 4], [4, 4], [16, 4], [0, 16], [4, 16], [16, 16]]", "[[0, 0]]"));
    run_ok(&["table", cfg.to_str().unwrap()]);
    let rows = csv_rows(&fs::read_to_string(dir.path().join("out/results.csv")).unwrap());
    assert_eq!(rows.len(), 4);

    let session = Session::new(Mesh::unit_square(2).unwrap(), &[1]).unwrap();
    let d = &session.disc;
    let (bg, _) = solve_background(&d.mesh, &d.layout, &d.ops, Some(&d.k0), &ExactSolution::Case2, 1e-9).unwrap();
    let e = recovery_errors(&d.mesh, &d.layout, &ExactSolution::Case2, &bg).unwrap();
    for row in &rows[1..] {
        assert_eq!(row[8], "0");
        let err: f64 = row[11].parse().unwrap();
        assert!((err - e.err).abs() <= 1e-5 * e.err, "{err} vs {}", e.err);
    }
}

#[test]
fn unknown_solution_fails_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &TABLE_N2.replace("solution = \"case2\"", "solution = \"kovasznay\""));
    let out = recover(&["run", cfg.to_str().unwrap()], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`solution`") && err.contains("kovasznay"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failures_are_labeled() {
    let dir = TempDir::new().unwrap();
    let text = TABLE_N2.replace("[measurements]", "[qoi]\ndrag_lift = 7\n\n[measurements]");
    let cfg = write_config(dir.path(), &text);
    let out = recover(&["table", cfg.to_str().unwrap()], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `quantities of interest`"), "{err}");
}

#[test]
fn measured_values_without_exact_solution() {
    let dir = TempDir::new().unwrap();
    let data = "kind,component,cx,cy,r,value\ngaussian,1,0.3,0.3,0.1,0.01\ngaussian,2,0.3,0.3,0.1,-0.02\ngaussian,3,0.6,0.6,0.1,0.005\n";
    fs::write(dir.path().join("data.csv"), data).unwrap();
    let text = "output = \"out\"\nsolution = \"none\"\n[domain]\nkind = \"unit_square\"\nn = 1\n[measurements]\nfile = \"data.csv\"\n[qoi]\ndrag_lift = 1\n";
    let cfg = write_config(dir.path(), text);
    run_ok(&["table", cfg.to_str().unwrap()]);
    let rows = csv_rows(&fs::read_to_string(dir.path().join("out/results.csv")).unwrap());
    assert_eq!(rows[0].last().unwrap(), "c_L");
    assert_eq!(&rows[1][..2], &["1".to_string(), "1".to_string()]);
    assert_eq!(&rows[1][9..12], &[String::new(), String::new(), String::new()]);
    assert!(rows[1][12].parse::<f64>().unwrap().is_finite());
}

#[test]
fn mesh_commands_round_trip() {
    let dir = TempDir::new().unwrap();
    let mesh = dir.path().join("hole.mesh");
    let summary = run_ok(&["mesh", "gen", "--kind", "square-with-hole", "--n", "1", "--radius", "0.08", "-o", mesh.to_str().unwrap()]);
    let s: serde_json::Value = serde_json::from_str(summary.trim()).unwrap();
    assert_eq!((s["cells"].as_u64(), s["holes"].as_u64()), (Some(160), Some(1)));

    let copy = dir.path().join("copy.mesh");
    let imported = run_ok(&["mesh", "import", mesh.to_str().unwrap(), "-o", copy.to_str().unwrap()]);
    assert_eq!(imported, summary);
    assert_eq!(fs::read_to_string(&copy).unwrap(), fs::read_to_string(&mesh).unwrap());

    let cfg = write_config(dir.path(), &TABLE_N2);
    let exported = dir.path().join("square.mesh");
    run_ok(&["mesh", "export", cfg.to_str().unwrap(), "--n", "2", "-o", exported.to_str().unwrap()]);
    assert_eq!(Mesh::read(&exported).unwrap().cell_count(), 16);

    fs::write(dir.path().join("bad.mesh"), "mesh 2\nvertices x\n").unwrap();
    let out = recover(&["mesh", "import", dir.path().join("bad.mesh").to_str().unwrap()], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn thread_variable_is_validated() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &TABLE_N2.replace("[[4, 0], [16, 0], [0, 4], [4, 4], [16, 4], [0, 16], [4, 16], [16, 16]]", "[[4, 0]]"));
    let bad = recover(&["table", cfg.to_str().unwrap()], &[("RECOVER_THREADS", "zero")]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("RECOVER_THREADS"));
    let ok = recover(&["table", cfg.to_str().unwrap()], &[("RECOVER_THREADS", "2")]);
    assert!(ok.status.success());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["threads"].as_u64(), Some(2));
}
