use std::path::Path;
use std::process::{Command, Output};

use drivecal::benchmarking::{fit_xeb_with, DecayOffsets, XebConvention};
use drivecal_cli::config::ExperimentConfig;
use drivecal_cli::experiment::xeb_lengths;
use drivecal_cli::output::{curve_from_csv, curve_to_csv, sha256_hex, CURVE_HEADER};

const BIN: &str = env!("CARGO_BIN_EXE_drivecal");

fn drivecal(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap()
}

const SMALL_PB: &str = "schema_version = 1\nseed = 5\n[bench]\nsequences = 6\nmax_length = 64\nbootstrap = 10\n";

#[test]
fn validate_reports_field_paths_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "ok.toml", "schema_version = 1\n");
    let ok = drivecal(d, &["validate", "--config", "ok.toml"]);
    assert_eq!(ok.status.code(), Some(0));

    write(d, "bad.toml", "schema_version = 1\n[line]\nmax_deviation_deg = 80\n[bench]\nsequences = 0\n");
    let bad = drivecal(d, &["validate", "--config", "bad.toml"]);
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8(bad.stderr).unwrap();
    assert!(err.contains("line.max_deviation_deg") && err.contains("bench.sequences"), "{err}");

    write(d, "syntax.toml", "schema_version = 1\nbogus = 1\n");
    let syntax = drivecal(d, &["validate", "--config", "syntax.toml"]);
    assert_eq!(syntax.status.code(), Some(2));
    assert!(String::from_utf8(syntax.stderr).unwrap().contains("line 2"));

    write(d, "version.toml", "schema_version = 9\n");
    assert_eq!(drivecal(d, &["validate", "--config", "version.toml"]).status.code(), Some(2));
    assert_eq!(drivecal(d, &["--threads", "0", "validate", "--config", "ok.toml"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "no-pi.toml", "schema_version = 1\n[calibrate]\nangles = [90.0]\n");
    let out = drivecal(d, &["calibrate", "response-curve", "--config", "no-pi.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("[npulse-cal]"));
    assert_eq!(drivecal(d, &["validate", "--config", "missing.toml"]).status.code(), Some(3));
}

#[test]
fn identical_configs_give_identical_records_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "pb.toml", SMALL_PB);
    for (out, threads) in [("a", "1"), ("b", "4")] {
        let o = drivecal(d, &["bench", "pb", "--config", "pb.toml", "--out", out, "--threads", threads, "--profile", "fast"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["result.json", "summary.csv", "config.toml", "curves/rb.csv", "curves/leakage.csv"] {
        assert_eq!(read(&d.join("a"), f), read(&d.join("b"), f), "{f}");
    }
    // a different seed changes the record
    let o = drivecal(d, &["bench", "pb", "--config", "pb.toml", "--out", "c", "--seed", "6", "--profile", "fast"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(read(&d.join("a"), "result.json"), read(&d.join("c"), "result.json"));
}

#[test]
fn manifest_lists_every_output_with_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "pb.toml", SMALL_PB);
    assert_eq!(drivecal(d, &["bench", "pb", "--config", "pb.toml", "--out", "o", "--profile", "fast"]).status.code(), Some(0));
    let o = d.join("o");
    let manifest: serde_json::Value = serde_json::from_slice(&read(&o, "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "bench pb");
    assert!(manifest["started_at"].as_str().unwrap() <= manifest["finished_at"].as_str().unwrap());
    let files = manifest["files"].as_array().unwrap();
    let listed: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for f in ["config.toml", "result.json", "summary.csv", "curves/rb.csv", "curves/pb-purity.csv"] {
        assert!(listed.contains(&f), "{f} missing from {listed:?}");
    }
    for f in files {
        let bytes = read(&o, f["path"].as_str().unwrap());
        assert_eq!(f["sha256"], sha256_hex(&bytes));
        assert_eq!(f["bytes"], bytes.len());
    }
    // the stored config reproduces the run
    let config = String::from_utf8(read(&o, "config.toml")).unwrap();
    assert_eq!(manifest["config_sha256"], sha256_hex(config.as_bytes()));
    write(d, "again.toml", &config);
    assert_eq!(drivecal(d, &["bench", "pb", "--config", "again.toml", "--out", "p"]).status.code(), Some(0));
    assert_eq!(read(&o, "result.json"), read(&d.join("p"), "result.json"));
}

#[test]
fn curve_files_refit_to_the_recorded_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "xeb.toml", "schema_version = 1\nseed = 8\n[bench]\nsequences = 40\nmax_length = 128\nbootstrap = 10\n");
    assert_eq!(drivecal(d, &["bench", "xeb", "--config", "xeb.toml", "--out", "o", "--profile", "fast"]).status.code(), Some(0));
    let o = d.join("o");
    let text = |f: &str| String::from_utf8(read(&o, f)).unwrap();
    let record: serde_json::Value = serde_json::from_str(&text("result.json")).unwrap();
    let b = &record["benchmark"];
    let fidelity = curve_from_csv(&text("curves/xeb-fidelity.csv")).unwrap();
    let purity = curve_from_csv(&text("curves/xeb-sqrt-purity.csv")).unwrap();
    assert_eq!(curve_to_csv(&fidelity), text("curves/xeb-fidelity.csv"));
    assert!(text("curves/xeb-fidelity.csv").starts_with(CURVE_HEADER));
    let held = DecayOffsets { sequence: Some(0.0), purity: Some(0.0) };
    let (f, p) = fit_xeb_with(&fidelity, &purity, 1, XebConvention::Standard, held).unwrap();
    assert!((f.derived_error.value - b["e"]["value"].as_f64().unwrap()).abs() <= 1e-12);
    assert!((p.derived_error.value - b["e_inc"]["value"].as_f64().unwrap()).abs() <= 1e-12);
}

#[test]
fn free_offsets_are_selectable() {
    let cfg = ExperimentConfig::parse("schema_version = 1\n[bench]\nsequence_offset = \"free\"\npurity_offset = 0.1\n").unwrap();
    assert_eq!(cfg.bench.sequence_offset.held(), None);
    assert_eq!(cfg.bench.purity_offset.held(), Some(0.1));
    assert_eq!(ExperimentConfig::parse("schema_version = 1\n").unwrap().bench.sequence_offset.held(), Some(0.0));
    let out_of_range = ExperimentConfig::parse("schema_version = 1\n[bench]\npurity_offset = 3.0\n").unwrap();
    assert!(out_of_range.validate().is_err());
}

#[test]
fn xeb_grid_is_dense_at_long_lengths() {
    assert_eq!(xeb_lengths(512), [1, 2, 4, 8, 16, 32, 64, 96, 128, 160, 192, 224, 256, 288, 320, 352, 384, 416, 448, 480, 512]);
    assert_eq!(xeb_lengths(8), [1, 2, 3, 4, 5, 6, 7, 8]);
    for max in 1..200 {
        let l = xeb_lengths(max);
        assert!(l.windows(2).all(|w| w[0] < w[1]) && *l.last().unwrap() == max, "{max}: {l:?}");
    }
}

#[test]
fn npulse_on_a_linear_line_needs_no_correction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "lin.toml",
        "schema_version = 1\nseed = 2\n[line]\nkind = \"linear\"\n[backend]\nkind = \"depolarizing\"\n[calibrate]\nangles = [180.0, 90.0]\n",
    );
    let o = drivecal(d, &["calibrate", "npulse", "--config", "lin.toml", "--out", "o", "--profile", "fast"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let record: serde_json::Value = serde_json::from_slice(&read(&d.join("o"), "result.json")).unwrap();
    for r in record["calibration"]["results"].as_array().unwrap() {
        assert!(r["epsilon"].as_f64().unwrap().abs() < 0.05, "{r}");
    }
}

#[test]
fn random_xeb_with_polynomial_scaling_is_coherence_limited() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse("schema_version = 1\nseed = 19\n").unwrap();
    let command = drivecal_cli::Command::Bench(drivecal_cli::BenchProtocol::Xeb);
    let out = drivecal_cli::execute(cfg, command, None, Some(drivecal_cli::Profile::Paper), dir.path()).unwrap();
    let e = out.benchmark.unwrap().e;
    // XEB reports 3/4 of the average infidelity; T1 = 60.9 µs, T2e = 67.3 µs over 15 ns
    let t = 15e-9;
    let limit = 0.75 * (0.5 - (-t / 60.9e-6_f64).exp() / 6.0 - (-t / 67.3e-6_f64).exp() / 3.0);
    assert!(e.value > limit / 1.5 && e.value < 1.5 * limit, "E {} vs {limit}", e.value);
}

#[test]
fn pulse_overrides_are_validated_and_applied() {
    let bad = ExperimentConfig::parse("schema_version = 1\n[pulse]\ntruncation = -1.0\nsample_period = 1e-6\n").unwrap();
    let paths: Vec<String> = bad.validate().unwrap_err().into_iter().map(|e| e.path).collect();
    assert!(paths.contains(&"pulse.truncation".to_string()) && paths.contains(&"pulse.sample_period".to_string()), "{paths:?}");
    let cfg = ExperimentConfig::parse("schema_version = 1\n[pulse]\nduration = 25e-9\ntruncation = 3.0\ndrag = 0.0\n").unwrap();
    cfg.validate().unwrap();
    let setup = drivecal_cli::experiment::Setup::from_config(&cfg, drivecal_cli::Profile::Fast).unwrap();
    assert_eq!((setup.shape.duration, setup.shape.truncation, setup.shape.drag_coefficient), (25e-9, 3.0, 0.0));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            drivecal_cli::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
