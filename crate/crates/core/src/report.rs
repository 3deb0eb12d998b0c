//! Tabular reports (CSV with a JSON mirror) and static SVG figures.
//!
//! Numbers are rounded to 12 significant digits before printing so that
//! reports are stable across platforms and last-bit noise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::corpus::csv_field;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        let r = round_sig(x);
        if r != 0.0 && (r.abs() < 1e-5 || r.abs() >= 1e15) {
            format!("{r:e}")
        } else {
            format!("{r}")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Num(f64),
    Bool(bool),
    Missing,
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&String> for Cell {
    fn from(s: &String) -> Self {
        Cell::Text(s.clone())
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<f32> for Cell {
    fn from(x: f32) -> Self {
        Cell::Num(x as f64)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl<C: Into<Cell>> From<Option<C>> for Cell {
    fn from(x: Option<C>) -> Self {
        x.map_or(Cell::Missing, Into::into)
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => csv_field(s),
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => format_number(*x),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(i) => Value::from(*i),
            Cell::Num(x) => serde_json::Number::from_f64(round_sig(*x)).map_or(Value::Null, Value::Number),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Missing => Value::Null,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    /// Array of objects keyed by the CSV column names.
    pub fn to_json_value(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> =
                        self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("JSON values serialize");
                s.push('\n');
                s
            }
        }
    }

    /// Writes `<dir>/<stem>.<ext>` and returns the path.
    pub fn write(&self, dir: &Path, stem: &str, format: Format) -> Result<PathBuf> {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        write_text(&path, &self.render(format))?;
        Ok(path)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Serializes `value` as pretty JSON with numbers rounded like table cells.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let v = serde_json::to_value(value).map_err(|e| Error::Invariant(format!("serialize: {e}")))?;
    let mut s = serde_json::to_string_pretty(&round_json(v)).expect("JSON values serialize");
    s.push('\n');
    write_text(path, &s)
}

fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x)))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Cluster colors in palette order; further clusters cycle through the
/// secondary list.
pub const PALETTE: [(&str, &str); 5] = [
    ("purple", "#7b3294"),
    ("green", "#1b9e77"),
    ("yellow", "#e6ab02"),
    ("red", "#d7191c"),
    ("blue", "#2c7bb6"),
];
const EXTRA: [&str; 5] = ["#636363", "#a6611a", "#f781bf", "#80cdc1", "#404040"];

pub fn color(i: usize) -> &'static str {
    if i < PALETTE.len() {
        PALETTE[i].1
    } else {
        EXTRA[(i - PALETTE.len()) % EXTRA.len()]
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn f2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Tick values covering `[lo, hi]` at a 1/2/5 step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// An 800×600 plot with one data area.
pub struct Plot {
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

const W: f64 = 800.0;
const H: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

impl Plot {
    /// Axis ranges padded by 5% on each side.
    pub fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            let (lo, hi) = if lo.is_finite() && hi.is_finite() {
                (lo, hi)
            } else {
                (0.0, 1.0)
            };
            let d = if hi > lo {
                (hi - lo) * 0.05
            } else {
                lo.abs().max(1.0) * 0.05
            };
            (lo - d, hi + d)
        };
        let mut p = Self {
            body: String::new(),
            x: pad(x),
            y: pad(y),
        };
        p.frame(title, x_label, y_label);
        p
    }

    fn sx(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn sy(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn frame(&mut self, title: &str, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#000\"/>",
            f2(x0),
            f2(y0),
            f2(x1 - x0),
            f2(y1 - y0)
        );
        for t in ticks(self.x.0, self.x.1) {
            let px = self.sx(t);
            let _ = writeln!(
                self.body,
                "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#000\"/><text x=\"{0}\" y=\"{3}\" font-size=\"12\" text-anchor=\"middle\">{4}</text>",
                f2(px),
                f2(y1),
                f2(y1 + 5.0),
                f2(y1 + 20.0),
                format_number(t)
            );
        }
        for t in ticks(self.y.0, self.y.1) {
            let py = self.sy(t);
            let _ = writeln!(
                self.body,
                "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#000\"/><text x=\"{3}\" y=\"{4}\" font-size=\"12\" text-anchor=\"end\">{5}</text>",
                f2(x0 - 5.0),
                f2(py),
                f2(x0),
                f2(x0 - 8.0),
                f2(py + 4.0),
                format_number(t)
            );
        }
        let _ = write!(
            self.body,
            "<text x=\"{}\" y=\"30\" font-size=\"18\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"20\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>\n",
            f2(W / 2.0),
            esc(title),
            f2((x0 + x1) / 2.0),
            f2(H - 20.0),
            esc(x_label),
            f2((y0 + y1) / 2.0),
            f2((y0 + y1) / 2.0),
            esc(y_label)
        );
    }

    pub fn point(&mut self, x: f64, y: f64, fill: &str) {
        if !(x.is_finite() && y.is_finite()) {
            return;
        }
        let _ = writeln!(
            self.body,
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            f2(self.sx(x)),
            f2(self.sy(y)),
            fill
        );
    }

    pub fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), stroke: &str, dashed: bool) {
        let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            self.body,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"{}/>",
            f2(self.sx(x0)),
            f2(self.sy(y0)),
            f2(self.sx(x1)),
            f2(self.sy(y1)),
            stroke,
            dash
        );
    }

    /// Axis-aligned rectangle between two data-space corners.
    pub fn rect(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), fill: &str) {
        let (a, b) = (self.sx(x0.min(x1)), self.sx(x0.max(x1)));
        let (c, d) = (self.sy(y0.max(y1)), self.sy(y0.min(y1)));
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#000\" stroke-width=\"0.5\"/>",
            f2(a),
            f2(c),
            f2(b - a),
            f2(d - c),
            fill
        );
    }

    /// Text anchored at pixel coordinates inside the canvas.
    pub fn label(&mut self, px: f64, py: f64, text: &str, fill: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>",
            f2(px),
            f2(py),
            fill,
            esc(text)
        );
    }

    /// Legend entries stacked in the top-right corner of the data area.
    pub fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (name, fill)) in entries.iter().enumerate() {
            let y = TOP + 15.0 + 16.0 * i as f64;
            let _ = writeln!(
                self.body,
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>",
                f2(W - RIGHT - 160.0),
                f2(y - 9.0),
                fill
            );
            self.label(W - RIGHT - 145.0, y, name, "#000");
        }
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\" width=\"800\" height=\"600\">\n\
             <rect width=\"800\" height=\"600\" fill=\"#fff\"/>\n{}</svg>\n",
            self.body
        )
    }
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Scatter of log10 size against E with the least-squares line.
pub fn impact_scatter_svg(points: &[(f64, f64)], slope: f64, intercept: f64) -> String {
    let xr = range(points.iter().map(|p| p.0));
    let yr = range(points.iter().map(|p| p.1));
    let mut plot = Plot::new(
        "Expected job impact vs city size",
        "log10 total employment",
        "E",
        xr,
        yr,
    );
    for &(x, y) in points {
        plot.point(x, y, color(0));
    }
    plot.line(
        (xr.0, intercept + slope * xr.0),
        (xr.1, intercept + slope * xr.1),
        color(3),
        false,
    );
    plot.finish()
}

/// One labelled bar of the occupation-shift chart.
pub struct ShiftBar {
    pub label: String,
    pub delta_pct: f64,
    /// Index into the four quadrant colors.
    pub quadrant: usize,
}

pub const QUADRANTS: [&str; 4] = [
    "resilient, increases",
    "resilient, decreases",
    "susceptible, increases",
    "susceptible, decreases",
];

/// Horizontal bars of δ per occupation with an inset of quadrant totals.
pub fn shift_bars_svg(title: &str, bars: &[ShiftBar], totals: &[(String, f64)]) -> String {
    let n = bars.len().max(1) as f64;
    let xr = range(bars.iter().map(|b| b.delta_pct).chain([0.0]));
    let mut plot = Plot::new(
        title,
        "contribution to impact difference (%)",
        "occupation rank",
        xr,
        (0.0, n),
    );
    for (i, b) in bars.iter().enumerate() {
        let y = n - i as f64;
        plot.rect((0.0, y - 0.9), (b.delta_pct, y - 0.1), color(b.quadrant));
    }
    plot.line((0.0, 0.0), (0.0, n), "#000", false);
    let entries: Vec<(String, &str)> = QUADRANTS
        .iter()
        .enumerate()
        .map(|(i, q)| (q.to_string(), color(i)))
        .collect();
    plot.legend(&entries);
    for (i, (name, v)) in totals.iter().enumerate() {
        plot.label(
            LEFT + 10.0,
            TOP + 20.0 + 16.0 * i as f64,
            &format!("{name}: {}%", format_number(*v)),
            "#000",
        );
    }
    plot.finish()
}

pub struct LogLogSeriesSvg<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
}

/// Log-log scatter per cluster with fitted lines and a dashed slope-1 line.
pub fn loglog_svg(series: &[LogLogSeriesSvg<'_>], reference: [(f64, f64); 2]) -> String {
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(
        series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain([reference[0].1, reference[1].1]),
    );
    let mut plot = Plot::new(
        "Employment scaling by job cluster",
        "log10 city size",
        "log10 workers",
        xr,
        yr,
    );
    for (i, s) in series.iter().enumerate() {
        for &(x, y) in &s.points {
            plot.point(x, y, color(i));
        }
        plot.line(
            (xr.0, s.intercept + s.slope * xr.0),
            (xr.1, s.intercept + s.slope * xr.1),
            color(i),
            false,
        );
    }
    plot.line(reference[0], reference[1], "#000", true);
    let entries: Vec<(String, &str)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                format!("{} (β = {})", s.name, format_number((s.slope * 100.0).round() / 100.0)),
                color(i),
            )
        })
        .collect();
    plot.legend(&entries);
    plot.finish()
}

/// 2-D PCA scatter colored by cluster index.
pub fn pca_svg(points: &[(f64, f64, usize)], clusters: &[String]) -> String {
    let xr = range(points.iter().map(|p| p.0));
    let yr = range(points.iter().map(|p| p.1));
    let mut plot = Plot::new("Occupations by skill profile", "PC1", "PC2", xr, yr);
    for &(x, y, c) in points {
        plot.point(x, y, color(c));
    }
    let entries: Vec<(String, &str)> = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("cluster {c}"), color(i)))
        .collect();
    plot.legend(&entries);
    plot.finish()
}

/// Box per parameter: whiskers at the 2.5/97.5 percentiles, box at the
/// quartiles, bar at the median.
pub struct BoxStats {
    pub label: String,
    pub p025: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p975: f64,
}

pub fn box_chart_svg(title: &str, x_label: &str, y_label: &str, boxes: &[BoxStats], baseline: Option<f64>) -> String {
    let n = boxes.len().max(1) as f64;
    let yr = range(boxes.iter().flat_map(|b| [b.p025, b.p975]).chain(baseline));
    let mut plot = Plot::new(title, x_label, y_label, (0.0, n), yr);
    for (i, b) in boxes.iter().enumerate() {
        let c = i as f64 + 0.5;
        plot.line((c, b.p025), (c, b.p975), "#000", false);
        plot.rect((c - 0.3, b.q1), (c + 0.3, b.q3), color(i % PALETTE.len()));
        plot.line((c - 0.3, b.median), (c + 0.3, b.median), "#000", false);
        let px = plot.sx(c) - 12.0;
        plot.label(px, H - BOTTOM - 8.0, &b.label, "#000");
    }
    if let Some(y) = baseline {
        plot.line((0.0, y), (n, y), color(3), true);
    }
    plot.finish()
}
