//! Static PNG figures rendered from results tables alone.
//!
//! Images carry no text. Each `<kind>.png` has a `<kind>.json` sidecar with
//! the axis meaning, series names, colours and plotted values, so a figure
//! can be read (or re-drawn elsewhere) without guessing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::results::{parse_metric, ResultRow};
use crate::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlotKind {
    AccuracyCurve,
    Heatmap,
    Flatness,
    Calibration,
    Corruption,
    ClientSize,
}

impl PlotKind {
    pub const ALL: [PlotKind; 6] = [
        Self::AccuracyCurve,
        Self::Heatmap,
        Self::Flatness,
        Self::Calibration,
        Self::Corruption,
        Self::ClientSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AccuracyCurve => "accuracy_curve",
            Self::Heatmap => "heatmap",
            Self::Flatness => "flatness",
            Self::Calibration => "calibration",
            Self::Corruption => "corruption",
            Self::ClientSize => "client_size",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown plot kind `{s}`"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub color: [u8; 3],
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Half-height of error bars, when present.
    pub err: Option<Vec<f64>>,
}

/// Sidecar description of a chart with numeric or categorical x.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartSpec {
    pub kind: String,
    pub x_label: String,
    pub y_label: String,
    /// Category names when x values are category indices.
    pub categories: Option<Vec<String>>,
    pub series: Vec<Series>,
}

/// Sidecar description of heatmap panels placed left to right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapSpec {
    pub kind: String,
    pub panels: Vec<HeatmapPanel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapPanel {
    pub name: String,
    /// Pixel position of cell `(0, 0)`'s top-left corner.
    pub origin: [u32; 2],
    pub cell: u32,
    /// Row-normalized values, rows are the true class in head order.
    pub values: Vec<Vec<f64>>,
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

const WIDTH: u32 = 640;
const HEIGHT: u32 = 420;
const MARGIN: f64 = 40.0;

struct Canvas {
    img: RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Canvas {
    fn new(x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let mut c = Self {
            img: RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255])),
            x_range: widen(x_range),
            y_range: widen(y_range),
        };
        for i in 0..=4 {
            let y = c.y_range.0 + (c.y_range.1 - c.y_range.0) * i as f64 / 4.0;
            let (x0, py) = c.to_px(c.x_range.0, y);
            let (x1, _) = c.to_px(c.x_range.1, y);
            c.line(x0, py, x1, py, [225, 225, 225], 1);
        }
        let (ox, oy) = c.to_px(c.x_range.0, c.y_range.0);
        let (ex, ey) = c.to_px(c.x_range.1, c.y_range.1);
        c.line(ox, oy, ex, oy, [0, 0, 0], 1);
        c.line(ox, oy, ox, ey, [0, 0, 0], 1);
        c
    }

    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let (w, h) = (WIDTH as f64 - 2.0 * MARGIN, HEIGHT as f64 - 2.0 * MARGIN);
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        (MARGIN + fx * w, HEIGHT as f64 - MARGIN - fy * h)
    }

    fn dot(&mut self, x: f64, y: f64, color: [u8; 3], radius: i64) {
        for dx in -radius..=radius {
            for dy in -radius..=radius {
                let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
                if px >= 0 && py >= 0 && (px as u32) < WIDTH && (py as u32) < HEIGHT {
                    self.img.put_pixel(px as u32, py as u32, Rgb(color));
                }
            }
        }
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3], radius: i64) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let f = i as f64 / steps as f64;
            self.dot(x0 + f * (x1 - x0), y0 + f * (y1 - y0), color, radius - 1);
        }
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
        let (xa, xb) = (x0.min(x1).round() as u32, x0.max(x1).round() as u32);
        let (ya, yb) = (y0.min(y1).round() as u32, y0.max(y1).round() as u32);
        for x in xa..xb.min(WIDTH) {
            for y in ya..yb.min(HEIGHT) {
                self.img.put_pixel(x, y, Rgb(color));
            }
        }
    }

    fn series(&mut self, s: &Series) {
        let pts: Vec<(f64, f64)> = s.x.iter().zip(&s.y).map(|(&x, &y)| self.to_px(x, y)).collect();
        for w in pts.windows(2) {
            self.line(w[0].0, w[0].1, w[1].0, w[1].1, s.color, 2);
        }
        for (i, &(px, py)) in pts.iter().enumerate() {
            self.dot(px, py, s.color, 3);
            if let Some(err) = &s.err {
                let (_, top) = self.to_px(s.x[i], s.y[i] + err[i]);
                let (_, bottom) = self.to_px(s.x[i], s.y[i] - err[i]);
                self.line(px, top, px, bottom, s.color, 1);
            }
        }
    }
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| FedError::format(path, e))
}

fn save_sidecar<T: Serialize>(spec: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(spec).expect("sidecar serializes");
    std::fs::write(path, text).map_err(|e| FedError::io(path, e))
}

/// Per-seed rows grouped by series name (method, plus dataset when several
/// datasets are mixed).
fn by_series(rows: &[ResultRow]) -> BTreeMap<String, Vec<&ResultRow>> {
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    let mut out: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_summary()) {
        let name = if datasets.len() > 1 {
            format!("{} / {}", r.method, r.dataset)
        } else {
            r.method.clone()
        };
        out.entry(name).or_default().push(r);
    }
    out
}

/// Mean over seeds of each `(task, metric)` among `rows` matching `name`.
fn seed_mean<'a>(rows: &[&'a ResultRow], name: &str) -> BTreeMap<(usize, Option<&'a str>), f64> {
    let mut acc: BTreeMap<(usize, Option<&str>), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let (m, arg) = parse_metric(&r.metric);
        if m == name {
            let e = acc.entry((r.task, arg)).or_default();
            e.0 += r.value;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn color(i: usize) -> [u8; 3] {
    PALETTE[i % PALETTE.len()]
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn chart(spec: ChartSpec, y_range: Option<(f64, f64)>, dir: &Path, report: &mut PlotReport) -> Result<()> {
    if spec.series.iter().all(|s| s.x.is_empty()) {
        report.warnings.push(format!("{}: no rows to plot, skipped", spec.kind));
        return Ok(());
    }
    let x_range = range(spec.series.iter().flat_map(|s| s.x.iter().copied()));
    let y_range = y_range.unwrap_or_else(|| {
        let (lo, hi) = range(spec.series.iter().flat_map(|s| {
            let e = s.err.clone().unwrap_or_else(|| vec![0.0; s.y.len()]);
            s.y.iter().zip(e).flat_map(|(y, e)| [y - e, y + e]).collect::<Vec<_>>()
        }));
        (lo.min(0.0), hi * 1.05)
    });
    let mut canvas = Canvas::new(x_range, y_range);
    for s in &spec.series {
        canvas.series(s);
    }
    let png = dir.join(format!("{}.png", spec.kind));
    save_png(&canvas.img, &png)?;
    save_sidecar(&spec, &dir.join(format!("{}.json", spec.kind)))?;
    report.written.push(png);
    Ok(())
}

fn accuracy_curve(rows: &[ResultRow], dir: &Path, report: &mut PlotReport) -> Result<()> {
    let series = by_series(rows)
        .into_iter()
        .enumerate()
        .map(|(i, (name, rs))| {
            let m = seed_mean(&rs, "avg_acc");
            Series {
                name,
                color: color(i),
                x: m.keys().map(|k| k.0 as f64).collect(),
                y: m.values().copied().collect(),
                err: None,
            }
        })
        .filter(|s| !s.x.is_empty())
        .collect();
    let spec = ChartSpec {
        kind: PlotKind::AccuracyCurve.name().into(),
        x_label: "task".into(),
        y_label: "average accuracy over seen tasks".into(),
        categories: None,
        series,
    };
    chart(spec, Some((0.0, 1.0)), dir, report)
}

fn flatness(rows: &[ResultRow], dir: &Path, report: &mut PlotReport) -> Result<()> {
    let series = by_series(rows)
        .into_iter()
        .enumerate()
        .map(|(i, (name, rs))| {
            let mean = seed_mean(&rs, "flatness");
            let se = seed_mean(&rs, "flatness_se");
            let mut pts: Vec<(f64, f64, f64)> = mean
                .iter()
                .filter_map(|(&(t, arg), &v)| {
                    let sigma: f64 = arg?.parse().ok()?;
                    Some((sigma, v, se.get(&(t, arg)).copied().unwrap_or(0.0)))
                })
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name,
                color: color(i),
                x: pts.iter().map(|p| p.0).collect(),
                y: pts.iter().map(|p| p.1).collect(),
                err: Some(pts.iter().map(|p| p.2).collect()),
            }
        })
        .filter(|s| !s.x.is_empty())
        .collect();
    let spec = ChartSpec {
        kind: PlotKind::Flatness.name().into(),
        x_label: "perturbation sigma".into(),
        y_label: "mean cross-entropy over all tasks".into(),
        categories: None,
        series,
    };
    chart(spec, None, dir, report)
}

fn client_size(rows: &[ResultRow], dir: &Path, report: &mut PlotReport) -> Result<()> {
    // Runs are told apart by their `n_clients` row; AIA is averaged per
    // (series, client count).
    let mut points: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for (name, rs) in by_series(rows) {
        let mut clients_of_seed: BTreeMap<&str, u64> = BTreeMap::new();
        for r in rs.iter().filter(|r| r.metric == "n_clients") {
            clients_of_seed.insert(r.seed.as_str(), r.value as u64);
        }
        for r in rs.iter().filter(|r| r.metric == "aia") {
            if let Some(&n) = clients_of_seed.get(r.seed.as_str()) {
                points.entry(name.clone()).or_default().entry(n).or_default().push(r.value);
            }
        }
    }
    let series = points
        .into_iter()
        .enumerate()
        .map(|(i, (name, by_n))| Series {
            name,
            color: color(i),
            x: by_n.keys().map(|&n| n as f64).collect(),
            y: by_n.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect(),
            err: None,
        })
        .collect();
    let spec = ChartSpec {
        kind: PlotKind::ClientSize.name().into(),
        x_label: "number of clients".into(),
        y_label: "average incremental accuracy".into(),
        categories: None,
        series,
    };
    chart(spec, Some((0.0, 1.0)), dir, report)
}

fn corruption(rows: &[ResultRow], dir: &Path, report: &mut PlotReport) -> Result<()> {
    let groups = by_series(rows);
    let means: Vec<(String, BTreeMap<(usize, Option<&str>), f64>)> =
        groups.iter().map(|(n, rs)| (n.clone(), seed_mean(rs, "corruption"))).collect();
    let categories: Vec<String> = means
        .iter()
        .flat_map(|(_, m)| m.keys().filter_map(|k| k.1.map(str::to_string)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if categories.is_empty() {
        report.warnings.push("corruption: no rows to plot, skipped".into());
        return Ok(());
    }
    let k = means.len() as f64;
    let mut canvas = Canvas::new((-0.5, categories.len() as f64 - 0.5), (0.0, 1.0));
    let mut series = Vec::new();
    for (i, (name, m)) in means.iter().enumerate() {
        let mut s = Series {
            name: name.clone(),
            color: color(i),
            x: Vec::new(),
            y: Vec::new(),
            err: None,
        };
        for (c, cat) in categories.iter().enumerate() {
            if let Some((_, &v)) = m.iter().find(|(key, _)| key.1 == Some(cat.as_str())) {
                let x0 = c as f64 - 0.4 + 0.8 * i as f64 / k;
                let (px0, py) = canvas.to_px(x0, v);
                let (px1, base) = canvas.to_px(x0 + 0.8 / k, 0.0);
                canvas.rect(px0, py, px1 - 1.0, base, s.color);
                s.x.push(c as f64);
                s.y.push(v);
            }
        }
        series.push(s);
    }
    let spec = ChartSpec {
        kind: PlotKind::Corruption.name().into(),
        x_label: "corruption (category index)".into(),
        y_label: "accuracy averaged over tasks".into(),
        categories: Some(categories),
        series,
    };
    let png = dir.join("corruption.png");
    save_png(&canvas.img, &png)?;
    save_sidecar(&spec, &dir.join("corruption.json"))?;
    report.written.push(png);
    Ok(())
}

/// Reliability diagram: per-bin accuracy (bars) against the diagonal, one
/// bar group per bin, pooled over seeds by sample count.
fn calibration(rows: &[ResultRow], dir: &Path, report: &mut PlotReport) -> Result<()> {
    let mut series = Vec::new();
    for (i, (name, rs)) in by_series(rows).into_iter().enumerate() {
        let mut bins: BTreeMap<usize, (f64, f64, f64)> = BTreeMap::new();
        let mut counts: BTreeMap<(&str, usize), f64> = BTreeMap::new();
        for r in &rs {
            if let ("calib_count", Some(b)) = parse_metric(&r.metric) {
                counts.insert((r.seed.as_str(), b.parse().unwrap_or(usize::MAX)), r.value);
            }
        }
        for r in &rs {
            let (m, arg) = parse_metric(&r.metric);
            let Some(b) = arg.and_then(|a| a.parse::<usize>().ok()) else { continue };
            let n = counts.get(&(r.seed.as_str(), b)).copied().unwrap_or(0.0);
            let e = bins.entry(b).or_default();
            match m {
                "calib_acc" => e.0 += n * r.value,
                "calib_conf" => e.1 += n * r.value,
                "calib_count" => e.2 += n,
                _ => {}
            }
        }
        let n_bins = bins.keys().max().map_or(0, |b| b + 1);
        let mut s = Series {
            name,
            color: color(i),
            x: Vec::new(),
            y: Vec::new(),
            err: None,
        };
        for (b, (acc, _, n)) in bins {
            if n > 0.0 {
                s.x.push((b as f64 + 0.5) / n_bins as f64);
                s.y.push(acc / n);
            }
        }
        series.push(s);
    }
    if series.iter().all(|s| s.x.is_empty()) {
        report.warnings.push("calibration: no rows to plot, skipped".into());
        return Ok(());
    }
    let mut canvas = Canvas::new((0.0, 1.0), (0.0, 1.0));
    let (x0, y0) = canvas.to_px(0.0, 0.0);
    let (x1, y1) = canvas.to_px(1.0, 1.0);
    canvas.line(x0, y0, x1, y1, [160, 160, 160], 1);
    let k = series.len() as f64;
    for (i, s) in series.iter().enumerate() {
        let width = s.x.first().map_or(0.0, |x| 2.0 * x.min(1.0 - x)).max(1.0 / 15.0) / k;
        for (&x, &y) in s.x.iter().zip(&s.y) {
            let left = x - width * k / 2.0 + width * i as f64;
            let (px0, py) = canvas.to_px(left, y);
            let (px1, base) = canvas.to_px(left + width, 0.0);
            canvas.rect(px0, py, px1 - 1.0, base, s.color);
        }
    }
    let spec = ChartSpec {
        kind: PlotKind::Calibration.name().into(),
        x_label: "confidence (bin centre)".into(),
        y_label: "accuracy in bin".into(),
        categories: None,
        series,
    };
    let png = dir.join("calibration.png");
    save_png(&canvas.img, &png)?;
    save_sidecar(&spec, &dir.join("calibration.json"))?;
    report.written.push(png);
    Ok(())
}

/// Confusion heatmaps, one panel per series, white (0) to dark blue (1).
fn heatmap(rows: &[ResultRow], dir: &Path, report: &mut PlotReport) -> Result<()> {
    let mut panels = Vec::new();
    for (name, rs) in by_series(rows) {
        let seeds: BTreeSet<&str> = rs.iter().map(|r| r.seed.as_str()).collect();
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for r in &rs {
            if let ("confusion", Some(arg)) = parse_metric(&r.metric) {
                if let Some((i, j)) = arg.split_once(',') {
                    if let (Ok(i), Ok(j)) = (i.trim().parse(), j.trim().parse()) {
                        *cells.entry((i, j)).or_default() += r.value;
                    }
                }
            }
        }
        if cells.is_empty() {
            continue;
        }
        let k = cells.keys().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
        let mut values = vec![vec![0.0; k]; k];
        for ((i, j), v) in cells {
            values[i][j] = v / seeds.len() as f64;
        }
        panels.push(HeatmapPanel {
            name,
            origin: [0, 0],
            cell: 0,
            values,
        });
    }
    if panels.is_empty() {
        report.warnings.push("heatmap: no confusion rows, skipped".into());
        return Ok(());
    }
    let gap = 16u32;
    let side = 360u32;
    let width = gap + panels.len() as u32 * (side + gap);
    let mut img = RgbImage::from_pixel(width, side + 2 * gap, Rgb([255, 255, 255]));
    for (p, panel) in panels.iter_mut().enumerate() {
        let k = panel.values.len() as u32;
        panel.cell = (side / k).max(1);
        panel.origin = [gap + p as u32 * (side + gap), gap];
        for (i, row) in panel.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let v = v.clamp(0.0, 1.0);
                let shade = |white: f64, dark: f64| (white + (dark - white) * v).round() as u8;
                let c = Rgb([shade(255.0, 8.0), shade(255.0, 48.0), shade(255.0, 107.0)]);
                for dx in 0..panel.cell {
                    for dy in 0..panel.cell {
                        let x = panel.origin[0] + j as u32 * panel.cell + dx;
                        let y = panel.origin[1] + i as u32 * panel.cell + dy;
                        img.put_pixel(x, y, c);
                    }
                }
            }
        }
    }
    let png = dir.join("heatmap.png");
    save_png(&img, &png)?;
    save_sidecar(
        &HeatmapSpec {
            kind: PlotKind::Heatmap.name().into(),
            panels,
        },
        &dir.join("heatmap.json"),
    )?;
    report.written.push(png);
    Ok(())
}

/// Renders each requested kind from `rows` into `out_dir`. Kinds whose
/// rows are missing are skipped with a warning, never an error.
pub fn emit_plots(rows: &[ResultRow], kinds: &[PlotKind], out_dir: &Path) -> Result<PlotReport> {
    let mut report = PlotReport::default();
    if rows.iter().all(ResultRow::is_summary) {
        report.warnings.push("results table has no per-seed rows; nothing to plot".into());
        return Ok(report);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| FedError::io(out_dir, e))?;
    for kind in kinds {
        match kind {
            PlotKind::AccuracyCurve => accuracy_curve(rows, out_dir, &mut report)?,
            PlotKind::Heatmap => heatmap(rows, out_dir, &mut report)?,
            PlotKind::Flatness => flatness(rows, out_dir, &mut report)?,
            PlotKind::Calibration => calibration(rows, out_dir, &mut report)?,
            PlotKind::Corruption => corruption(rows, out_dir, &mut report)?,
            PlotKind::ClientSize => client_size(rows, out_dir, &mut report)?,
        }
    }
    Ok(report)
}
