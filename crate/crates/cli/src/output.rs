//! Files written by the commands: trace and certificate CSVs, run manifests
//! and log-log SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use descentlab::certificates::CertificateTrace;
use descentlab::record::RunRecord;
use serde::Serialize;

use crate::error::{io_err, CliError};

pub const TRACE_HEADER: [&str; 8] = [
    "t",
    "F",
    "F_gap",
    "grad_norm_sq",
    "dist_sq",
    "eta",
    "oracle_grads",
    "oracle_prox",
];

pub const CERTIFICATE_HEADER: [&str; 7] = ["t", "D", "Delta", "E", "omega", "slack", "bound"];

/// Shortest round-trip text; exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_trace(path: &Path, run: &RunRecord) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER).map_err(csv_err(path))?;
    for row in &run.rows {
        w.write_record([
            row.t.to_string(),
            fmt_f64(row.value),
            fmt_opt(row.gap),
            fmt_f64(row.grad_norm_sq),
            fmt_opt(row.dist_sq),
            fmt_opt(row.eta),
            (row.oracle.grads + row.oracle.component_grads).to_string(),
            row.oracle.prox.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Certificate rows; tree certificates get a trailing `path` column.
pub fn write_certificate(path: &Path, trace: &CertificateTrace) -> Result<(), CliError> {
    let with_path = trace.rows.iter().any(|r| r.path.is_some());
    let mut w = csv_writer(path)?;
    let mut header: Vec<&str> = CERTIFICATE_HEADER.to_vec();
    if with_path {
        header.push("path");
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for row in &trace.rows {
        let mut rec = vec![
            row.t.to_string(),
            fmt_f64(row.d),
            fmt_f64(row.delta),
            fmt_f64(row.e),
            fmt_f64(row.omega),
            fmt_f64(row.slack),
            fmt_opt(row.bound),
        ];
        if with_path {
            let p = row.path.as_deref().unwrap_or(&[]);
            rec.push(p.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "));
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn git_describe(dir: &Path) -> String {
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(dir)
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub run_hash: String,
    pub seed: Option<u64>,
    pub git_describe: String,
    pub wall_time: f64,
    pub timestamp: u64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, run_hash: String, seed: Option<u64>, git: String) -> Self {
        Manifest {
            command: command.to_string(),
            config_hash,
            run_hash,
            seed,
            git_describe: git,
            wall_time: 0.0,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(path)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Standalone log-log line chart; nonpositive points are skipped.
pub fn loglog_svg(title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, s)| {
            s.iter()
                .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
                .map(|(x, y)| (x.log10(), y.log10()))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, x1) = (x0.floor(), x1.ceil().max(x0.floor() + 1.0));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, (left + w - right) / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for d in (x0 as i32)..=(x1 as i32) {
        let x = px(d as f64);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{top}" x2="{x:.1}" y2="{}" stroke="#ddd"/>"##, h - bottom);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">1e{d}</text>"#, h - bottom + 15.0);
    }
    for d in (y0 as i32)..=(y1 as i32) {
        let y = py(d as f64);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, w - right);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{d}</text>"#, left - 5.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, (left + w - right) / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0,
        escape(y_label)
    );
    for (i, ((label, _), p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if p.len() > 1 {
            let coords: Vec<String> = p.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = top + 15.0 * i as f64 + 10.0;
        let lx = w - right + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 25.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 0.1, 1.0 / 3.0, 1e-20, 123456.789, -2.5e-7, 1e300] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(1e-20), "1e-20");
    }

    #[test]
    fn chart_has_one_polyline_per_series() {
        let series = vec![
            ("a".to_string(), (1..50).map(|t| (t as f64, 1.0 / t as f64)).collect()),
            ("b<c".to_string(), (1..50).map(|t| (t as f64, 0.0)).collect()),
        ];
        let svg = loglog_svg("demo", "gap", &series);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
