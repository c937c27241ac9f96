use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn spcsfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spcsfm")).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn succeed(args: &[&str]) -> Output {
    let out = spcsfm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// A small scene, noise-free unless `noisy`.
fn small_config(dir: &Path, noisy: bool) -> String {
    let noise = if noisy { "" } else { "[noise]\npixel_sigma = 0.0\nbrightness_sigma = 0.0\nsun_sigma = 0.0\n\n" };
    // Exact keypoints only select the epipolar model over the planar one
    // when the keypoint sigma is small.
    let bootstrap = if noisy {
        "essential_threshold_px = 3.0\ntriangulation_threshold_px = 3.0\n"
    } else {
        "keypoint_sigma_px = 0.01\n"
    };
    let text = format!("[scene]\ngrid_size = 40\n\n{noise}[bootstrap]\n{bootstrap}");
    let p = path(dir, "run.toml");
    fs::write(&p, text).unwrap();
    p
}

/// Last cost of the trace in a run log.
fn final_cost(log: &str) -> f64 {
    let trace = log.split("# step cost").nth(1).expect("cost trace section");
    let last = trace.lines().filter(|l| !l.trim().is_empty()).last().expect("at least one cost");
    last.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn noise_free_solve_reaches_zero_cost() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = small_config(d, false);
    succeed(&["simulate", "--config", &config, "--out", &path(d, "sim")]);
    succeed(&["solve", &path(d, "sim"), "--config", &config, "--no-smoothness", "--out", &path(d, "solution")]);
    let log = fs::read_to_string(d.join("solution/run_log.txt")).unwrap();
    let cost = final_cost(&log);
    assert!(cost < 1e-10, "final cost {cost}");
    for name in ["landmarks.ply", "poses.txt", "sun.txt", "config.toml"] {
        assert!(d.join("solution").join(name).exists(), "{name} missing");
    }
    // Calibrated runs write no per-image calibration.
    assert!(!d.join("solution/calibration.txt").exists());
}

#[test]
fn uncalibrated_solve_writes_calibration() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = small_config(d, false);
    succeed(&["simulate", "--config", &config, "--calibrated", "false", "--out", &path(d, "sim")]);
    succeed(&["solve", &path(d, "sim"), "--config", &config, "--calibrated", "false", "--out", &path(d, "solution")]);
    let text = fs::read_to_string(d.join("solution/calibration.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count(), 29);
}

#[test]
fn missing_measurements_are_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = spcsfm(&["solve", &path(dir.path(), "nowhere"), "--out", &path(dir.path(), "solution")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("measurements.txt"));
}

#[test]
fn zero_views_config_is_a_config_error_with_a_location() {
    let dir = TempDir::new().unwrap();
    let config = path(dir.path(), "run.toml");
    fs::write(&config, "# bad\n\n[scene]\nnum_views = 0\n").unwrap();
    let out = spcsfm(&["simulate", "--config", &config, "--out", &path(dir.path(), "sim")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run.toml:4:1"), "{err}");
}

#[test]
fn unknown_keys_and_bad_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let config = path(dir.path(), "run.toml");
    fs::write(&config, "[scene]\nnum_veiws = 3\n").unwrap();
    let out = spcsfm(&["simulate", "--config", &config, "--out", &path(dir.path(), "sim")]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(spcsfm(&["simulate", "--model", "phong", "--out", "x"]).status.code(), Some(1));
    assert_eq!(spcsfm(&["--help"]).status.code(), Some(0));
}

#[test]
fn truth_against_itself_evaluates_to_zero() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = small_config(d, true);
    succeed(&["simulate", "--config", &config, "--out", &path(d, "sim")]);
    let truth = path(d, "sim/truth");
    succeed(&["evaluate", &truth, &truth, "--measurements", &path(d, "sim"), "--out", &path(d, "eval")]);
    let summary = fs::read_to_string(d.join("eval/summary.csv")).unwrap();
    let mut rows = summary.lines();
    assert_eq!(rows.next(), Some("metric,count,mean,median,p95"));
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        let count: usize = fields[1].parse().unwrap();
        assert!(count > 0, "{row}");
        // Photometric error is relative to noisy measurements, not zero.
        if fields[0] == "photometric_error" {
            continue;
        }
        for f in &fields[2..] {
            let v: f64 = f.parse().unwrap();
            assert!(v.abs() < 1e-9, "{row}");
        }
    }
}

#[test]
fn disjoint_ids_are_a_data_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = small_config(d, true);
    succeed(&["simulate", "--config", &config, "--out", &path(d, "sim")]);
    // Renumber every landmark of a copy of the truth.
    let other = d.join("other");
    fs::create_dir(&other).unwrap();
    for name in ["poses.txt", "sun.txt"] {
        fs::copy(d.join("sim/truth").join(name), other.join(name)).unwrap();
    }
    let ply = fs::read_to_string(d.join("sim/truth/landmarks.ply")).unwrap();
    let (header, body) = ply.split_once("end_header\n").unwrap();
    let shifted: String = body
        .lines()
        .map(|l| {
            let (rest, id) = l.rsplit_once(' ').unwrap();
            format!("{rest} {}\n", id.parse::<u32>().unwrap() + 1_000_000)
        })
        .collect();
    fs::write(other.join("landmarks.ply"), format!("{header}end_header\n{shifted}")).unwrap();
    let out = spcsfm(&["evaluate", &path(d, "other"), &path(d, "sim/truth"), "--out", &path(d, "eval")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("share no landmark ids"));
}

#[test]
fn same_seed_simulates_identical_files() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = small_config(d, true);
    for run in ["a", "b", "c"] {
        let seed = if run == "c" { "8" } else { "7" };
        succeed(&["simulate", "--config", &config, "--seed", seed, "--out", &path(d, run)]);
    }
    let files = ["measurements.txt", "sun_measurements.txt", "config.toml", "truth/landmarks.ply", "truth/poses.txt", "truth/sun.txt"];
    for name in files {
        assert_eq!(fs::read(d.join("a").join(name)).unwrap(), fs::read(d.join("b").join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(d.join("a/measurements.txt")).unwrap(), fs::read(d.join("c/measurements.txt")).unwrap());
}
