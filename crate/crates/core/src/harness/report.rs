//! Result tables and CSV/SVG artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bands::Band;
use crate::error::{Error, Result};
use crate::fnspace::Curve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub values: Vec<f64>,
}

/// Labeled numeric rows with a metadata block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ReportTable {
    pub fn new(columns: Vec<String>) -> Self {
        ReportTable {
            columns,
            ..Default::default()
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                got: values.len(),
            });
        }
        self.rows.push(ReportRow {
            label: label.into(),
            values,
        });
        Ok(())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.metadata.insert(key.to_string(), v);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Value at (`row label`, `column name`).
    pub fn get(&self, label: &str, column: &str) -> Option<f64> {
        let j = self.column_index(column)?;
        self.row(label).map(|r| r.values[j])
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("label");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.label);
            for v in &r.values {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_csv_string())
    }

    pub fn write_metadata_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.metadata).map_err(|e| Error::Config(e.to_string()))?;
        write_file(path.as_ref(), &s)
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Output formats for [`emit_outputs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

/// Anything [`emit_outputs`] can render.
#[derive(Debug, Clone, Copy)]
pub enum Artifact<'a> {
    Table(&'a ReportTable),
    Band(&'a Band),
    Bands {
        bands: &'a [Band],
        overlays: &'a [(&'a str, &'a Curve)],
    },
}

pub fn emit_outputs(artifact: Artifact<'_>, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    match (artifact, format) {
        (Artifact::Table(t), Format::Csv) => t.write_csv(path),
        (Artifact::Table(t), Format::Svg) => write_file(path, &table_svg(t)),
        (Artifact::Band(b), Format::Csv) => b.write_csv(path),
        (Artifact::Band(b), Format::Svg) => write_file(path, &bands_svg(std::slice::from_ref(b), &[])),
        (Artifact::Bands { bands, .. }, Format::Csv) => {
            let b = bands.first().ok_or_else(|| Error::invalid("no bands to write"))?;
            b.write_csv(path)
        }
        (Artifact::Bands { bands, overlays }, Format::Svg) => write_file(path, &bands_svg(bands, overlays)),
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn polyline(&self, xs: &[f64], ys: &[f64], color: &str, dash: bool, class: &str) -> String {
        let mut pts = String::new();
        for (x, y) in xs.iter().zip(ys) {
            if y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", self.px(*x), self.py(*y));
            }
        }
        let dash = if dash { " stroke-dasharray=\"5,3\"" } else { "" };
        format!(
            "<polyline class=\"{class}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
            pts.trim_end()
        )
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v.filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * (1.0 + lo.abs());
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        escape(title)
    )
}

fn axes(f: &Frame) -> String {
    let mut s = format!(
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (v, x, y, anchor) in [
        (f.x0, PAD, H - PAD + 15.0, "start"),
        (f.x1, W - PAD, H - PAD + 15.0, "end"),
        (f.y0, PAD - 4.0, H - PAD, "end"),
        (f.y1, PAD - 4.0, PAD + 10.0, "end"),
    ] {
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"{anchor}\">{v:.3}</text>"
        );
    }
    s
}

fn legend(entries: &[(String, &str)]) -> String {
    let mut s = String::new();
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = PAD + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\" text-anchor=\"end\">{}</text>",
            W - PAD - 6.0,
            escape(name)
        );
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Center, envelope and overlay curves of one or more bands.
pub fn bands_svg(bands: &[Band], overlays: &[(&str, &Curve)]) -> String {
    let mut xs_all = Vec::new();
    let mut ys_all = Vec::new();
    for b in bands {
        xs_all.extend_from_slice(b.center().grid().points());
        ys_all.extend(b.lower().values().iter().chain(b.upper().values()).copied());
    }
    for (_, c) in overlays {
        xs_all.extend_from_slice(c.grid().points());
        ys_all.extend_from_slice(c.values());
    }
    let f = Frame::new(xs_all.iter().copied(), ys_all.iter().copied());
    let mut s = header("simultaneous bands");
    s.push_str(&axes(&f));
    let mut names = Vec::new();
    if let Some(b) = bands.first() {
        let t = b.center().grid().points();
        s.push_str(&f.polyline(t, b.center().values(), "black", false, "center"));
    }
    for (i, b) in bands.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let t = b.center().grid().points();
        s.push_str(&f.polyline(t, b.lower().values(), color, false, "lower"));
        s.push_str(&f.polyline(t, b.upper().values(), color, false, "upper"));
        names.push((format!("{:?} {:.0}%", b.kind(), 100.0 * (1.0 - b.alpha())), color));
    }
    for (i, (name, c)) in overlays.iter().enumerate() {
        let color = PALETTE[(bands.len() + i) % PALETTE.len()];
        s.push_str(&f.polyline(c.grid().points(), c.values(), color, true, "overlay"));
        names.push((name.to_string(), color));
    }
    s.push_str(&legend(&names));
    s.push_str("</svg>\n");
    s
}

/// One line per column against the row index.
pub fn table_svg(t: &ReportTable) -> String {
    let xs: Vec<f64> = (0..t.rows.len()).map(|i| i as f64).collect();
    let ys = t.rows.iter().flat_map(|r| r.values.iter().copied());
    let f = Frame::new(xs.iter().copied(), ys);
    let mut s = header("report");
    s.push_str(&axes(&f));
    let mut names = Vec::new();
    for (j, c) in t.columns.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let ys: Vec<f64> = t.rows.iter().map(|r| r.values[j]).collect();
        s.push_str(&f.polyline(&xs, &ys, color, false, "series"));
        names.push((c.clone(), color));
    }
    for (i, r) in t.rows.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{}</text>",
            f.px(i as f64),
            H - PAD + 28.0,
            escape(&r.label)
        );
    }
    s.push_str(&legend(&names));
    s.push_str("</svg>\n");
    s
}
