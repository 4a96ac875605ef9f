use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use geoflow_cli::output::{write_snapshot, SNAPSHOT_HEADER_BYTES};
use geoflow_cli::{main_with, read_snapshot};
use geoflow_core::{build_initial_data, EmbeddedTarget, Metric, Scenario, TargetKind};
use proptest::prelude::*;
use serde_json::Value;

fn geoflow(args: &[&str]) -> i32 {
    main_with(std::iter::once("geoflow").chain(args.iter().copied()))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn listed(m: &Value) -> BTreeSet<String> {
    m["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
}

fn on_disk(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect()
}

fn small_run(out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["run", "--grid", "32", "--dt", "1e-3", "--t-final", "0.01", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    geoflow(&args)
}

#[test]
fn run_writes_declared_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(small_run(&out, &["--snapshot-every", "4", "--diagnostics-every", "3"]), 0);
    let m = manifest(&out);
    assert_eq!(m["status"], "completed");
    assert_eq!(m["command"], "run");
    assert_eq!(m["target"], "s2");
    assert_eq!(m["config"]["scheme"], "rk4-project");
    assert_eq!(m["summary"]["steps_taken"], 10);
    assert_eq!(listed(&m), on_disk(&out));
    assert_eq!(
        listed(&m),
        ["diagnostics.csv", "state_0.f64", "state_4.f64", "state_8.f64", "state_10.f64"].iter().map(|s| s.to_string()).collect()
    );
    assert!(!out.join(".manifest.json.tmp").exists());

    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,energy,nk,tube_defect_pre,step_rejections");
    assert_eq!(lines.len(), 1 + 5);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 5);
        for c in &cells[..4] {
            let mantissa = c.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|ch| ch.is_ascii_digit()).count(), 17, "{c}");
            c.parse::<f64>().unwrap();
        }
        cells[4].parse::<usize>().unwrap();
    }
    let times: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(times.len(), 5);
    assert!((times[4] - 0.01).abs() < 1e-15);
}

#[test]
fn zero_step_run_has_single_row() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(geoflow(&["run", "--grid", "32", "--t-final", "0", "--out", dir.path().to_str().unwrap()]), 0);
    let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.0000000000000000e0,"));
    assert_eq!(manifest(dir.path())["summary"]["steps_taken"], 0);
}

#[test]
fn runs_are_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let extra = ["--target", "s6", "--scenario", "random-smooth", "--seed", "11", "--epsilon", "0.01", "--scheme", "imex-spectral", "--snapshot-every", "5"];
    assert_eq!(small_run(&a, &extra), 0);
    assert_eq!(small_run(&b, &extra), 0);
    let files = listed(&manifest(&a));
    assert_eq!(files, listed(&manifest(&b)));
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn snapshot_layout_matches_final_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("snap");
    let args = ["run", "--target", "t2", "--grid", "16,8", "--dt", "1e-3", "--t-final", "0.01", "--snapshot-every", "10"];
    assert_eq!(geoflow(&[&args[..], &["--out", out.to_str().unwrap()]].concat()), 0);
    let bytes = fs::read(out.join("state_10.f64")).unwrap();
    assert_eq!(&bytes[..4], b"GEOF");
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    assert_eq!((word(1), word(2), word(3), word(4), word(5)), (1, 2, 16, 8, 4));
    assert_eq!(&bytes[24..32], &[0u8; 8]);
    assert_eq!(bytes.len(), SNAPSHOT_HEADER_BYTES + 16 * 8 * 4 * 8);
    let snap = read_snapshot(&out.join("state_10.f64")).unwrap();
    assert_eq!(snap.sizes, vec![16, 8]);
    assert_eq!(snap.ambient_dim, 4);
    for p in snap.data.chunks(4) {
        assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(geoflow(&["run", "--scheme", "imex-spectral", "--epsilon", "0", "--out", out]), 2);
    assert_eq!(geoflow(&["run", "--no-such-flag"]), 2);
    assert_eq!(geoflow(&["run", "--target", "s6", "--scenario", "spin-wave", "--out", out]), 2);
    assert_eq!(geoflow(&["run", "--metric", "conformal:0.1", "--scheme", "duhamel", "--epsilon", "0.1", "--out", out]), 2);
    assert_eq!(geoflow(&["gauge-report", "--target", "s6", "--grid", "16,16", "--out", out]), 2);
    assert_eq!(geoflow(&["continuation", "--eps-list", "0.01,0.02", "--out", out]), 2);
    assert_eq!(geoflow(&["dispersion", "--target", "s6", "--out", out]), 2);
    assert_eq!(geoflow(&["frobnicate"]), 2);
    assert_eq!(geoflow(&["--help"]), 0);
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    assert_eq!(small_run(&blocker.join("sub"), &[]), 3);
    assert_eq!(geoflow(&["run", "--config", dir.path().join("missing.toml").to_str().unwrap()]), 3);
}

#[test]
fn numerical_abort_exits_4_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abort");
    let code = geoflow(&[
        "run", "--grid", "64", "--scenario", "random-smooth", "--band", "8", "--seed", "1", "--scheme", "duhamel",
        "--epsilon", "1e-3", "--dt", "1e-3", "--t-final", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 4);
    let m = manifest(&out);
    assert_eq!(m["status"], "aborted");
    assert!(m["abort_reason"].as_str().is_some());
    assert_eq!(listed(&m), on_disk(&out));
    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn config_file_with_cli_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("cfg");
    fs::write(
        &cfg,
        format!(
            "target = \"s6\"\nscenario = \"s6-hopf-like\"\ngrid = [32]\ndt = 1e-3\nt-final = 0.005\nseed = 3\nout = \"{}\"\n",
            out.display()
        ),
    )
    .unwrap();
    assert_eq!(geoflow(&["run", "--config", cfg.to_str().unwrap(), "--t-final", "0.002"]), 0);
    let m = manifest(&out);
    assert_eq!(m["target"], "s6");
    assert_eq!(m["config"]["scenario"]["name"], "s6-hopf-like");
    assert_eq!(m["config"]["t_final"], 0.002);
    assert_eq!(m["summary"]["steps_taken"], 2);

    fs::write(&cfg, "colour = \"red\"\n").unwrap();
    assert_eq!(geoflow(&["run", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn report_subcommands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("gauge");
    assert_eq!(geoflow(&["gauge-report", "--target", "s6", "--grid", "256", "--seed", "2", "--out", g.to_str().unwrap()]), 0);
    let m = manifest(&g);
    assert_eq!(listed(&m), on_disk(&g));
    assert_eq!(m["summary"]["degenerate"], false);
    let slope = m["summary"]["slope_gain"].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 0.2, "{slope}");
    let table = fs::read_to_string(g.join("gauge_modes.csv")).unwrap();
    assert!(table.starts_with("mode,gain,gain_sq,residual,first_order\n"));

    let k = dir.path().join("kahler");
    assert_eq!(geoflow(&["gauge-report", "--target", "s2", "--grid", "64", "--out", k.to_str().unwrap()]), 0);
    assert_eq!(manifest(&k)["summary"]["degenerate"], true);

    let d = dir.path().join("disp");
    assert_eq!(
        geoflow(&["dispersion", "--grid", "64", "--dt", "1e-3", "--t-final", "0.5", "--diagnostics-every", "10", "--k-mode", "2", "--out", d.to_str().unwrap()]),
        0
    );
    let s = &manifest(&d)["summary"];
    let (fit, discrete) = (s["omega_fit"].as_f64().unwrap(), s["omega_discrete"].as_f64().unwrap());
    assert!((fit - discrete).abs() < 1e-6 * discrete, "{fit} vs {discrete}");

    let c = dir.path().join("cont");
    assert_eq!(
        geoflow(&["continuation", "--grid", "32", "--dt", "1e-3", "--t-final", "0.1", "--eps-list", "0.02,0.01", "--out", c.to_str().unwrap()]),
        0
    );
    let m = manifest(&c);
    assert_eq!(m["summary"]["monotone"], true);
    assert_eq!(fs::read_to_string(c.join("continuation.csv")).unwrap().lines().count(), 3);
}

#[test]
fn binary_exit_codes_and_thread_cap() {
    let bin = env!("CARGO_BIN_EXE_geoflow");
    let st = Command::new(bin).arg("selftest").env("GEOFLOW_THREADS", "2").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let text = String::from_utf8(st.stdout).unwrap();
    assert!(text.lines().count() >= 7 && !text.contains("FAIL"));
    let bad = Command::new(bin).arg("selftest").env("GEOFLOW_THREADS", "zero").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let usage = Command::new(bin).args(["run", "--epsilon", "0", "--scheme", "duhamel"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn snapshot_round_trip(seed in any::<u64>(), t in 0usize..3, n0 in 4usize..20, n1 in prop_oneof![Just(0usize), 4usize..12], band in 1usize..4) {
        let kind = [TargetKind::Sphere2, TargetKind::Sphere6, TargetKind::FlatTorus2][t];
        let sizes: Vec<usize> = if n1 == 0 { vec![n0] } else { vec![n0, n1] };
        let m = Arc::new(Metric::flat(&sizes).unwrap());
        let u = build_initial_data(&Scenario::RandomSmooth { seed, band }, m, EmbeddedTarget::from_kind(kind)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.f64");
        write_snapshot(&path, &u).unwrap();
        let back = read_snapshot(&path).unwrap();
        prop_assert_eq!(back.sizes, sizes);
        prop_assert_eq!(back.ambient_dim, u.ambient_dim());
        let same = back.data.iter().zip(u.points()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same && back.data.len() == u.points().len());
    }
}
