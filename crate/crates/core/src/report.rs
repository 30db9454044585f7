//! CSV tables and static SVG plots. Output bytes depend only on the inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{CompareRow, DepthSweep, ToyResult, TrajectoryDump};

pub const DEPTH_SWEEP_CSV: &str = "depth_sweep.csv";
pub const TOY_CSV: &str = "toy.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const COMPARE_CSV: &str = "compare.csv";
pub const DEPTH_SWEEP_SVG: &str = "depth_sweep.svg";
pub const TRAJECTORY_SVG: &str = "trajectory.svg";

fn header(seed: u64, columns: &str) -> String {
    format!("# seed: {seed}\n{columns}\n")
}

pub fn depth_sweep_csv(seed: u64, sweep: &DepthSweep) -> String {
    let mut out = header(seed, "L,mean_rho,inv_rho");
    for p in &sweep.points {
        let _ = writeln!(out, "{},{},{}", p.depth, p.mean_rho, p.inv_rho());
    }
    out
}

pub fn toy_csv(seed: u64, results: &[ToyResult]) -> String {
    let mut out = header(seed, "seed,k,accuracy");
    for r in results {
        for run in &r.runs {
            let _ = writeln!(out, "{},{},{}", run.seed, run.k, run.accuracy);
        }
    }
    out
}

pub fn trajectory_csv(seed: u64, dump: &TrajectoryDump) -> String {
    let mut out = header(seed, "layer,sample_id,q1,q2,label");
    for (l, layer) in dump.layers.iter().enumerate() {
        for (i, (q1, q2)) in layer.iter().enumerate() {
            let _ = writeln!(out, "{l},{i},{q1},{q2},{}", dump.labels[i]);
        }
    }
    out
}

pub fn compare_csv(seed: u64, rows: &[CompareRow]) -> String {
    let mut out = header(seed, "arch,k,test_error");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.architecture, r.architecture.order(), r.test_error());
    }
    out
}

/// One polyline of a line plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Result<Self> {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for &(x, y) in points {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::contract("plot coordinates must be finite"));
            }
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if f.x0 > f.x1 {
            return Err(Error::contract("nothing to plot"));
        }
        if f.x0 == f.x1 {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if f.y0 == f.y1 {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        Ok(f)
    }

    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let px = MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN);
        let py = H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN);
        (px, py)
    }
}

fn open_svg(title: &str, x_label: &str, y_label: &str, frame: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (l, b, r, t) = (MARGIN, H - MARGIN, W - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (v, x, y, anchor) in [
        (frame.x0, l, b + 15.0, "start"),
        (frame.x1, r, b + 15.0, "end"),
        (frame.y0, l - 5.0, b, "end"),
        (frame.y1, l - 5.0, t + 10.0, "end"),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{v:.3}</text>"#
        );
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(frame: &Frame, points: &[(f64, f64)], color: &str, width: f64) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|&p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>\n",
        coords.join(" ")
    )
}

/// One polyline per series, on shared axes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::contract("line plot needs at least one point"));
    }
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter()))?;
    let mut s = open_svg(title, x_label, y_label, &frame);
    for (i, ser) in series.iter().enumerate() {
        if ser.points.is_empty() {
            continue;
        }
        s.push_str(&polyline(&frame, &ser.points, &ser.color, 2.0));
        for &p in &ser.points {
            let (x, y) = frame.map(p);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#, ser.color);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 15.0 * (i as f64 + 1.0),
            ser.color,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

const CLASS_COLORS: [&str; 2] = ["#1f5fbf", "#c0392b"];

/// Phase-space plot: one faint polyline per sample through its layers,
/// final positions marked.
pub fn phase_space_plot(title: &str, dump: &TrajectoryDump) -> Result<String> {
    if dump.layers.is_empty() || dump.layers[0].is_empty() {
        return Err(Error::contract("empty trajectory"));
    }
    let frame = Frame::fit(dump.layers.iter().flat_map(|l| l.iter()))?;
    let mut s = open_svg(title, "position q1", "velocity q2", &frame);
    for (i, &label) in dump.labels.iter().enumerate() {
        let path: Vec<(f64, f64)> = dump.layers.iter().map(|l| l[i]).collect();
        let color = CLASS_COLORS[label % CLASS_COLORS.len()];
        s.push_str(&polyline(&frame, &path, color, 0.6));
        let (x, y) = frame.map(*path.last().expect("non-empty"));
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn depth_sweep_svg(sweep: &DepthSweep) -> Result<String> {
    let series = Series {
        name: "1 / mean rho".into(),
        color: "#1f5fbf".into(),
        points: sweep.points.iter().map(|p| (p.depth as f64, p.inv_rho())).collect(),
    };
    let fit = Series {
        name: "least squares".into(),
        color: "#888888".into(),
        points: [sweep.points.first(), sweep.points.last()]
            .into_iter()
            .flatten()
            .map(|p| (p.depth as f64, sweep.fit.intercept + sweep.fit.slope * p.depth as f64))
            .collect(),
    };
    line_plot("inverse perturbation ratio vs depth", "blocks L", "1 / rho", &[series, fit])
}

/// Writes `(file name, contents)` pairs under `dir`, creating it if needed.
pub fn emit(dir: impl AsRef<Path>, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if files.is_empty() {
        return Err(Error::contract("no artifacts to write"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
