use std::path::Path;
use std::process::{Command, Output};

use optomech::io::{Table, CSV_HEADER};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optomech"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_duration_is_a_config_error() {
    let out = bin(&["simulate", "--t-end", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_end"));
}

#[test]
fn negative_damping_reports_the_field() {
    let out = bin(&["simulate", "--gamma-a", "-0.1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma_a ≥ 0"));
}

#[test]
fn preset_run_writes_full_table_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fig1b.csv");
    let out = bin(&["simulate", "--preset", "fig1b", "--out", path(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(text.lines().count(), 2002);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig1b.json")).unwrap()).unwrap();
    assert_eq!(side["params"]["g_opt"], 1.4);
    assert_eq!(side["rhs_variant"], "closed");
    assert_eq!(side["outcome"], "completed");
    assert!(side["stats"]["accepted"].as_u64().unwrap() > 0);
    assert!(side["code_version"].is_string());
}

#[test]
fn thermal_relaxation_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("relax.csv");
    let out = bin(&[
        "simulate", "--g-opt", "0", "--rabi", "0", "--nbar-b", "2", "--gamma-b", "0.1", "--out",
        path(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let t = Table::read(&csv).unwrap();
    let times = t.column("t").unwrap();
    let nb = t.column("n_b").unwrap();
    for (t, n) in times.iter().zip(&nb) {
        let (t, n) = (t.unwrap(), n.unwrap());
        assert!((n - 2.0 * (1.0 - (-0.1 * t).exp())).abs() < 1e-6);
    }
    assert_eq!(t.column("g2_a").unwrap()[5], None);
}

#[test]
fn replay_reproduces_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = bin(&["simulate", "--preset", "fig2b", "--t-end", "7.5", "--n-samples", "301", "--out", path(&a)]);
    assert_eq!(out.status.code(), Some(0));
    let out = bin(&["simulate", "--replay", path(&dir.path().join("a.json")), "--out", path(&b)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn compare_identical_and_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let d = dir.path().join("d.csv");
    for (p, extra) in [(&a, "0.6"), (&b, "0.6"), (&c, "0.61")] {
        let out = bin(&["simulate", "--t-end", "2", "--n-samples", "21", "--rabi", extra, "--out", path(p)]);
        assert_eq!(out.status.code(), Some(0));
    }
    let out = bin(&["simulate", "--t-end", "2", "--n-samples", "11", "--out", path(&d)]);
    assert_eq!(out.status.code(), Some(0));
    let out = bin(&["compare", path(&a), path(&b)]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().skip(1).all(|l| l.ends_with(",0")), "{stdout}");
    assert_eq!(bin(&["compare", path(&a), path(&c)]).status.code(), Some(3));
    assert_eq!(bin(&["compare", path(&a), path(&d)]).status.code(), Some(1));
}

#[test]
fn oracle_rejects_unit_cutoff() {
    let out = bin(&["oracle", "--n-cut-a", "1", "--t-end", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_dark_state_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dark.csv");
    let out = bin(&[
        "oracle", "--rabi", "0", "--t-end", "2", "--n-samples", "5", "--n-cut-a", "3", "--n-cut-b",
        "3", "--no-convergence", "--out", path(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = Table::read(&csv).unwrap();
    assert_eq!(t.header.join(","), CSV_HEADER);
    for (k, h) in t.header.iter().enumerate().skip(1) {
        for row in &t.rows {
            if h.starts_with("g2") {
                assert_eq!(row[k], None);
            } else {
                assert_eq!(row[k], Some(0.0), "{h}");
            }
        }
    }
}

#[test]
fn oracle_writes_convergence_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("weak.csv");
    let out = bin(&[
        "oracle", "--g-opt", "0.3", "--rabi", "0.1", "--gamma-a", "0.01", "--t-end", "2",
        "--n-samples", "21", "--n-cut-a", "4", "--n-cut-b", "6", "--out", path(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("weak.json")).unwrap()).unwrap();
    let conv = &side["oracle"]["convergence"];
    assert_eq!(conv["cutoffs"][1]["n_cut_a"], 8);
    assert_eq!(conv["threshold"], 1e-6);
    assert!(conv["under_resolved"].is_boolean());
    assert_eq!(side["kind"], "oracle");
}

#[test]
fn sweep_writes_files_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "sweep", "--preset", "fig4a", "--t-end", "3", "--n-samples", "31", "--param", "delta_c",
        "--values", "0.0,1.3,2.5,4.0", "--out-dir", path(dir.path()), "--jobs", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
    let entries = index["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    assert_eq!(entries[2]["value"], 2.5);
    for (k, panel) in ["fig4a", "fig4b", "fig4c", "fig4d"].iter().enumerate() {
        let csv = dir.path().join(format!("delta_c_{k}.csv"));
        let single = dir.path().join(format!("{panel}.csv"));
        let out = bin(&["simulate", "--preset", panel, "--t-end", "3", "--n-samples", "31", "--out", path(&single)]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&single).unwrap());
    }
}

#[test]
fn sweep_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    assert_eq!(bin(&["sweep", "--param", "g_opt", "--values", "", "--out-dir", d]).status.code(), Some(1));
    assert_eq!(bin(&["sweep", "--param", "warp", "--values", "1", "--out-dir", d]).status.code(), Some(1));
}

#[test]
fn list_presets_prints_every_panel() {
    let out = bin(&["list-presets"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 19);
    assert!(text.lines().any(|l| l.starts_with("fig3b") && l.contains("nbar_b=2")));
}

#[test]
fn preset_command_reports_claims() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let out = bin(&["preset", "fig4d", "--out", path(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PASS fig4d"));
    assert_eq!(bin(&["preset", "fig0x"]).status.code(), Some(1));
}
