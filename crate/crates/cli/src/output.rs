//! Result record, curve files and manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use drivecal::benchmarking::DecayCurve;

use crate::error::CliError;
use crate::experiment::{angle_label, RunOutput};

pub const CURVE_HEADER: &str = "length,mean,std,n_sequences";
pub const RESULT_FILE: &str = "result.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn curve_to_csv(curve: &DecayCurve<f64>) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for i in 0..curve.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            curve.lengths[i],
            fmt17(curve.means[i]),
            fmt17(curve.stds[i]),
            curve.n_sequences[i]
        ));
    }
    s
}

pub fn curve_from_csv(text: &str) -> Result<DecayCurve<f64>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty curve file")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.join(",") != CURVE_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut curve = DecayCurve::default();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(format!("row {}: expected 4 fields", i + 1));
        }
        let bad = |what: &str| format!("row {}: bad {what}", i + 1);
        curve.push(
            f[0].parse().map_err(|_| bad("length"))?,
            f[1].parse().map_err(|_| bad("mean"))?,
            f[2].parse().map_err(|_| bad("std"))?,
            f[3].parse().map_err(|_| bad("n_sequences"))?,
        );
    }
    Ok(curve)
}

/// `quantity,value,sigma` rows for the headline numbers.
pub fn summary_csv(out: &RunOutput) -> String {
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    if let Some(c) = &out.calibration {
        rows.push(("rabi_a_pi_mv".into(), c.rabi_a_pi, f64::NAN));
        for r in &c.results {
            let l = angle_label(r.target_deg);
            let last = r.history.last().expect("calibration has at least one pass");
            rows.push((format!("epsilon_deg_{l}"), r.epsilon, last.fit.epsilon_sigma));
            rows.push((format!("initial_epsilon_deg_{l}"), r.initial_epsilon(), r.history[0].fit.epsilon_sigma));
            rows.push((format!("amplitude_mv_{l}"), r.amplitude_after, f64::NAN));
        }
        if let Some(curve) = &c.response_curve {
            rows.push(("model_a".into(), curve.model.a, f64::NAN));
            rows.push(("model_b".into(), curve.model.b, f64::NAN));
            rows.push(("model_residual_max_deg".into(), curve.residual_max, f64::NAN));
        }
    }
    if let Some(b) = &out.benchmark {
        rows.push(("n_bar".into(), b.n_bar, f64::NAN));
        rows.push(("E".into(), b.e.value, b.e.sigma()));
        if let Some(e) = &b.e_inc {
            rows.push(("E_inc".into(), e.value, e.sigma()));
        }
        if let Some(e) = &b.e_coh {
            rows.push(("E_coh".into(), e.value, e.sigma()));
        }
        if let Some(l) = &b.leakage {
            rows.push(("L".into(), l.leakage.value, l.leakage.sigma()));
        }
    }
    if let Some(s) = &out.sim {
        for (name, p) in ["p_g", "p_e", "p_f"].iter().zip(s.populations) {
            rows.push((name.to_string(), p, f64::NAN));
        }
    }
    let mut text = String::from("quantity,value,sigma\n");
    for (q, v, s) in rows {
        let sigma = if s.is_nan() { String::new() } else { fmt17(s) };
        text.push_str(&format!("{q},{},{sigma}\n", fmt17(v)));
    }
    text
}

fn response_csv(out: &RunOutput) -> Option<String> {
    let curve = out.calibration.as_ref()?.response_curve.as_ref()?;
    let mut s = String::from("amplitude_ratio,angle_deg,deviation_deg\n");
    s.push_str(&format!("{},{},{}\n", fmt17(0.0), fmt17(0.0), fmt17(0.0)));
    for (&(x, th), &(_, dev)) in curve.points.iter().zip(&curve.deviations[1..]) {
        s.push_str(&format!("{},{},{}\n", fmt17(x), fmt17(th), fmt17(dev)));
    }
    Some(s)
}

pub fn result_json(out: &RunOutput) -> String {
    let mut s = serde_json::to_string_pretty(out).expect("result record serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub started_at: String,
    pub finished_at: String,
    pub files: Vec<ManifestEntry>,
}

fn write(dir: &Path, rel: &str, content: &str, files: &mut Vec<ManifestEntry>) -> Result<(), CliError> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
    files.push(ManifestEntry { path: rel.to_string(), sha256: sha256_hex(content.as_bytes()), bytes: content.len() as u64 });
    Ok(())
}

/// Writes every output plus the manifest; returns the manifest path.
pub fn write_outputs(
    dir: &Path,
    out: &RunOutput,
    config_text: &str,
    command: &str,
    started_at: String,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    write(dir, "config.toml", config_text, &mut files)?;
    write(dir, RESULT_FILE, &result_json(out), &mut files)?;
    write(dir, SUMMARY_FILE, &summary_csv(out), &mut files)?;
    for (name, curve) in out.decay_curves() {
        write(dir, &format!("curves/{name}.csv"), &curve_to_csv(&curve), &mut files)?;
    }
    if let Some(text) = response_csv(out) {
        write(dir, "curves/response-curve.csv", &text, &mut files)?;
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_sha256: out.config_sha256.clone(),
        started_at,
        finished_at: now_rfc3339(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0e-4, -7.123456789012345e-12, 0.0] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
    }

    #[test]
    fn empty_curve_is_header_only() {
        let text = curve_to_csv(&DecayCurve::default());
        assert_eq!(text, format!("{CURVE_HEADER}\n"));
        assert!(curve_from_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn curve_round_trip_is_exact() {
        let mut c = DecayCurve::default();
        c.push(1, 0.987654321987654, 0.0123, 30);
        c.push(16, 1.0 / 3.0, 1e-17, 30);
        let back = curve_from_csv(&curve_to_csv(&c)).unwrap();
        assert_eq!(back, c);
        assert!(curve_from_csv("length,mean\n").is_err());
    }
}
