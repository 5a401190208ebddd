//! End-to-end checks of the binary: outputs, determinism, config handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phaseseg"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("phaseseg-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_run_args<'a>(out_dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "--synth",
        "circles",
        "--size",
        "24",
        "--levels",
        "0.3,0.8",
        "--components",
        "3",
        "--refine",
        "1",
        "--max-steps",
        "12",
        "--out",
        out_dir,
    ];
    args.extend_from_slice(extra);
    args
}

fn parse_metrics(dir: &Path) -> Vec<(String, String)> {
    let text = fs::read_to_string(dir.join("metrics.txt")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (k, v) = l.split_once('=').expect("metrics lines are key = value");
            (k.trim().to_string(), v.trim().to_string())
        })
        .collect()
}

#[test]
fn default_run_produces_all_outputs() {
    let dir = tmp_dir("outputs");
    let dir_s = dir.to_str().unwrap();
    run_ok(&small_run_args(dir_s, &[]));
    for name in [
        "config.resolved",
        "metrics.txt",
        "diagnostics.log",
        "composite.pgm",
        "rounded_composite.pgm",
        "remainder.pgm",
        "component_0.pgm",
        "component_1.pgm",
        "component_2.pgm",
    ] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    let metrics = parse_metrics(&dir);
    let get = |k: &str| {
        metrics
            .iter()
            .find(|(key, _)| key == k)
            .unwrap_or_else(|| panic!("{k} missing"))
            .1
            .clone()
    };
    assert_eq!(get("components"), "3");
    let steps: usize = get("steps").parse().unwrap();
    assert!(steps >= 1);
    // every c entry parses and lies in [0, 1]
    for i in 0..3 {
        let c: f64 = get(&format!("c_{i}_0")).parse().unwrap();
        assert!((0.0..=1.0).contains(&c));
    }
    // diagnostics stream is line-delimited key=value records
    let diag = fs::read_to_string(dir.join("diagnostics.log")).unwrap();
    assert_eq!(diag.lines().count(), steps);
    for line in diag.lines() {
        assert!(line.starts_with("step="), "bad record: {line}");
        assert!(line.contains(" energy="));
    }
}

#[test]
fn reruns_are_bit_identical_and_config_regenerates() {
    let dir_a = tmp_dir("det-a");
    let dir_b = tmp_dir("det-b");
    let dir_c = tmp_dir("det-c");
    run_ok(&small_run_args(dir_a.to_str().unwrap(), &["--seed", "3"]));
    run_ok(&small_run_args(dir_b.to_str().unwrap(), &["--seed", "3"]));

    let metrics_a = fs::read(dir_a.join("metrics.txt")).unwrap();
    let metrics_b = fs::read(dir_b.join("metrics.txt")).unwrap();
    assert_eq!(metrics_a, metrics_b, "reruns must produce identical metrics");
    for raster in ["composite.pgm", "rounded_composite.pgm", "remainder.pgm"] {
        assert_eq!(
            fs::read(dir_a.join(raster)).unwrap(),
            fs::read(dir_b.join(raster)).unwrap(),
            "{raster} differs between reruns"
        );
    }

    // the emitted resolved config alone regenerates the same outputs
    let resolved = dir_a.join("config.resolved");
    let out = bin()
        .args([
            "--config",
            resolved.to_str().unwrap(),
            "--out",
            dir_c.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        metrics_a,
        fs::read(dir_c.join("metrics.txt")).unwrap(),
        "config.resolved did not regenerate the run"
    );
}

#[test]
fn file_input_roundtrip() {
    let dir = tmp_dir("input");
    // two-tone strip written as an 8-bit pgm by hand
    let mut pgm: Vec<u8> = b"P5\n8 4\n255\n".to_vec();
    for row in 0..4 {
        for col in 0..8 {
            let _ = row;
            pgm.push(if col < 4 { 40 } else { 210 });
        }
    }
    let input = dir.join("strip.pgm");
    fs::write(&input, &pgm).unwrap();
    run_ok(&[
        "--input",
        input.to_str().unwrap(),
        "--components",
        "2",
        "--refine",
        "2",
        "--max-steps",
        "15",
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    let metrics = parse_metrics(&dir.join("out"));
    let c: Vec<f64> = (0..2)
        .map(|i| {
            metrics
                .iter()
                .find(|(k, _)| k == &format!("c_{i}_0"))
                .unwrap()
                .1
                .parse()
                .unwrap()
        })
        .collect();
    let (lo, hi) = (c[0].min(c[1]), c[0].max(c[1]));
    assert!((lo - 40.0 / 255.0).abs() <= 0.02, "{lo}");
    assert!((hi - 210.0 / 255.0).abs() <= 0.02, "{hi}");
}

#[test]
fn rejects_bad_configurations() {
    // indivisible coarsening
    let dir = tmp_dir("rejects");
    let out = bin()
        .args([
            "--synth",
            "circles",
            "--size",
            "33",
            "--components",
            "2",
            "--refine",
            "0",
            "--coarsen",
            "2",
            "--max-steps",
            "1",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("divisible"), "stderr: {err}");

    // unknown config key is named
    let cfg = dir.join("bad.conf");
    fs::write(&cfg, "synth = circles\nbananas = 7\n").unwrap();
    let out = bin().args(["--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key: bananas"), "stderr: {err}");

    // sigma and lambda are mutually exclusive
    let out = bin()
        .args([
            "--synth",
            "circles",
            "--components",
            "2",
            "--sigma",
            "30",
            "--lambda",
            "30",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mutually exclusive"), "stderr: {err}");

    // a missing component count is reported by name
    let out = bin()
        .args(["--synth", "circles", "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--components"));
}

#[test]
fn out_of_band_sigma_warns_but_runs() {
    let dir = tmp_dir("sigma");
    let out = run_ok(&small_run_args(
        dir.to_str().unwrap(),
        &["--sigma", "150", "--max-steps", "2"],
    ));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sigma"), "expected a band warning, got: {err}");
}
