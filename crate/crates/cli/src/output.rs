use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use transtate_core::ensemble::TransmissionCurve;

use crate::CliError;

pub const CSV_HEADER: &str = "E,pair,p_mc,p_err,p_analytic,Y,Y_isolated,Y_cross";
pub const CSV_FILE: &str = "transmission.csv";
pub const JSON_FILE: &str = "report.json";
pub const CHECKS_FILE: &str = "checks.json";
pub const FAILURE_FILE: &str = "failure.json";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per grid energy and channel pair; `pair` is `a-b` with 0-based
/// channel indices of space 1 and space 2.
pub fn curve_csv(curve: &TransmissionCurve) -> String {
    let mut out = String::with_capacity(curve.points.len() * curve.channels_1 * curve.channels_2 * 160);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in &curve.points {
        for a in 0..curve.channels_1 {
            for b in 0..curve.channels_2 {
                let i = curve.pair_index(a, b);
                let _ = writeln!(
                    out,
                    "{},{a}-{b},{},{},{},{},{},{}",
                    fmt_f64(p.energy),
                    fmt_f64(p.p_mc[i].mean),
                    fmt_f64(p.p_mc[i].std_error),
                    fmt_f64(p.p_analytic[i]),
                    fmt_f64(p.y),
                    fmt_f64(p.y_isolated),
                    fmt_f64(p.y_cross),
                );
            }
        }
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}
