//! Self-contained SVG figures and the JSON of everything they draw.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, BarcodeRow, EvalError, EvalReport, Pca, Result};
use crate::Label;

const POS_COLOR: &str = "#d62728";
const NEG_COLOR: &str = "#1f77b4";
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSeries {
    pub model: String,
    pub auc: f64,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSeries {
    pub model: String,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PcaScatter {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub labels: Vec<Label>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaScatter {
    /// First two components of `pca` coloured by `labels`.
    pub fn from_pca(pca: &Pca, labels: &[Label]) -> Self {
        let p = &pca.projection;
        let col = |c: usize| -> Vec<f64> {
            if c < p.cols() {
                p.iter_rows().map(|r| r[c]).collect()
            } else {
                vec![0.0; p.rows()]
            }
        };
        Self {
            x: col(0),
            y: col(1),
            labels: labels.to_vec(),
            explained_variance_ratio: pca.explained_variance_ratio.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub roc: Vec<RocSeries>,
    pub confusion: Vec<ConfusionSeries>,
    pub pca: PcaScatter,
    pub barcode: Vec<BarcodeRow>,
}

struct Svg {
    buf: String,
}

impl Svg {
    fn new(w: f64, h: f64) -> Self {
        let mut buf = String::new();
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
        );
        let _ = writeln!(buf, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        Self { buf }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.buf, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#);
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: bool) {
        let dash = if dash { r#" stroke-dasharray="4 4""# } else { "" };
        let _ = writeln!(
            self.buf,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"{dash}/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.buf,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"/>"#,
            coords.join(" ")
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.buf, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}" fill-opacity="0.7"/>"#);
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Square plotting area with unit axes and ticks at 0, 0.25, ..., 1.
struct Axes {
    left: f64,
    top: f64,
    size: f64,
}

impl Axes {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (self.left + x * self.size, self.top + (1.0 - y) * self.size)
    }

    fn draw(&self, svg: &mut Svg, xlabel: &str, ylabel: &str, ticks: bool) {
        let (x0, y0) = self.map(0.0, 0.0);
        let (x1, y1) = self.map(1.0, 1.0);
        svg.line(x0, y0, x1, y0, "black", false);
        svg.line(x0, y0, x0, y1, "black", false);
        if ticks {
            for i in 0..=4 {
                let t = f64::from(i) / 4.0;
                let (tx, _) = self.map(t, 0.0);
                let (_, ty) = self.map(0.0, t);
                svg.line(tx, y0, tx, y0 + 5.0, "black", false);
                svg.text(tx, y0 + 18.0, 11.0, "middle", &format!("{t:.2}"));
                svg.line(x0 - 5.0, ty, x0, ty, "black", false);
                svg.text(x0 - 8.0, ty + 4.0, 11.0, "end", &format!("{t:.2}"));
            }
        }
        svg.text((x0 + x1) / 2.0, y0 + 38.0, 13.0, "middle", xlabel);
        let _ = writeln!(
            svg.buf,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            x0 - 45.0,
            (y0 + y1) / 2.0,
            x0 - 45.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }
}

fn roc_svg(series: &[RocSeries]) -> String {
    let mut svg = Svg::new(560.0, 520.0);
    let ax = Axes {
        left: 70.0,
        top: 40.0,
        size: 400.0,
    };
    svg.text(270.0, 24.0, 15.0, "middle", "ROC curves");
    ax.draw(&mut svg, "False positive rate", "True positive rate", true);
    let (a, b) = (ax.map(0.0, 0.0), ax.map(1.0, 1.0));
    svg.line(a.0, a.1, b.0, b.1, "#999999", true);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.fpr.iter().zip(&s.tpr).map(|(&x, &y)| ax.map(x, y)).collect();
        svg.polyline(&pts, color);
        let ly = 330.0 + 18.0 * i as f64;
        svg.line(290.0, ly - 4.0, 310.0, ly - 4.0, color, false);
        svg.text(316.0, ly, 12.0, "start", &format!("{} (AUC = {:.3})", s.model, s.auc));
    }
    svg.finish()
}

fn confusion_svg(c: &ConfusionSeries) -> String {
    let mut svg = Svg::new(420.0, 400.0);
    svg.text(210.0, 26.0, 15.0, "middle", &format!("Confusion matrix: {}", c.model));
    // rows: actual negative, actual positive; columns: predicted negative, predicted positive
    let cells = [[c.tn, c.fp], [c.fn_, c.tp]];
    let max = cells.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let (left, top, cell) = (120.0, 70.0, 130.0);
    for (r, row) in cells.iter().enumerate() {
        for (col, &v) in row.iter().enumerate() {
            let shade = 255.0 - 200.0 * v as f64 / max;
            let fill = format!("rgb({0:.0},{0:.0},255)", shade);
            let (x, y) = (left + col as f64 * cell, top + r as f64 * cell);
            svg.rect(x, y, cell, cell, &fill);
            svg.text(x + cell / 2.0, y + cell / 2.0 + 8.0, 24.0, "middle", &v.to_string());
        }
    }
    for (i, name) in ["Negative", "Positive"].iter().enumerate() {
        let mid = top + cell * (i as f64 + 0.5);
        svg.text(left - 10.0, mid + 4.0, 12.0, "end", name);
        svg.text(left + cell * (i as f64 + 0.5), top + 2.0 * cell + 20.0, 12.0, "middle", name);
    }
    svg.text(left + cell, top + 2.0 * cell + 42.0, 13.0, "middle", "Predicted");
    svg.text(left - 10.0, top - 12.0, 13.0, "end", "Actual");
    svg.finish()
}

fn range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn pca_svg(p: &PcaScatter) -> String {
    let mut svg = Svg::new(560.0, 520.0);
    let ax = Axes {
        left: 70.0,
        top: 40.0,
        size: 400.0,
    };
    svg.text(270.0, 24.0, 15.0, "middle", "PCA projection of embeddings");
    let pct = |i: usize| p.explained_variance_ratio.get(i).map_or(0.0, |v| v * 100.0);
    ax.draw(&mut svg, &format!("PC1 ({:.1}%)", pct(0)), &format!("PC2 ({:.1}%)", pct(1)), false);
    let (x0, x1) = range(&p.x);
    let (y0, y1) = range(&p.y);
    for ((&x, &y), l) in p.x.iter().zip(&p.y).zip(&p.labels) {
        let (sx, sy) = ax.map((x - x0) / (x1 - x0), (y - y0) / (y1 - y0));
        svg.circle(sx, sy, 3.0, if l.is_positive() { POS_COLOR } else { NEG_COLOR });
    }
    svg.circle(490.0, 60.0, 4.0, POS_COLOR);
    svg.text(500.0, 64.0, 12.0, "start", "positive");
    svg.circle(490.0, 80.0, 4.0, NEG_COLOR);
    svg.text(500.0, 84.0, 12.0, "start", "negative");
    svg.finish()
}

fn barcode_svg(rows: &[BarcodeRow]) -> String {
    let width = rows.first().map_or(0, |r| r.intensities.len());
    let (left, top, row_h) = (30.0, 40.0, 4.0);
    let mut svg = Svg::new(left + width as f64 + 20.0, top + row_h * rows.len() as f64 + 20.0);
    svg.text(left, 24.0, 15.0, "start", "Embedding barcode (red: positive, blue: negative)");
    for (i, r) in rows.iter().enumerate() {
        let y = top + row_h * i as f64;
        svg.rect(left - 14.0, y, 10.0, row_h, if r.label.is_positive() { POS_COLOR } else { NEG_COLOR });
        for (j, &v) in r.intensities.iter().enumerate() {
            let g = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round();
            svg.rect(left + j as f64, y, 1.0, row_h, &format!("rgb({g:.0},{g:.0},{g:.0})"));
        }
    }
    svg.finish()
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes `roc_all.svg`, one `confusion_<model>.svg` per report, `pca.svg`,
/// `barcode.svg` and `series.json` into `out_dir`.
pub fn emit_plots(reports: &[EvalReport], pca: &PcaScatter, barcode: &[BarcodeRow], out_dir: &Path) -> Result<PlotSeries> {
    if reports.is_empty() {
        return Err(EvalError::InvalidArgument("no reports to plot".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let series = PlotSeries {
        roc: reports
            .iter()
            .map(|r| RocSeries {
                model: r.model_kind.display_name().to_string(),
                auc: r.roc.auc,
                fpr: r.roc.fpr.clone(),
                tpr: r.roc.tpr.clone(),
            })
            .collect(),
        confusion: reports
            .iter()
            .map(|r| ConfusionSeries {
                model: r.model_kind.display_name().to_string(),
                tp: r.confusion.tp,
                fp: r.confusion.fp,
                tn: r.confusion.tn,
                fn_: r.confusion.fn_,
            })
            .collect(),
        pca: pca.clone(),
        barcode: barcode.to_vec(),
    };
    write(&out_dir.join("roc_all.svg"), &roc_svg(&series.roc))?;
    for (r, c) in reports.iter().zip(&series.confusion) {
        write(&out_dir.join(format!("confusion_{}.svg", r.model_kind.name())), &confusion_svg(c))?;
    }
    write(&out_dir.join("pca.svg"), &pca_svg(&series.pca))?;
    write(&out_dir.join("barcode.svg"), &barcode_svg(&series.barcode))?;
    write(&out_dir.join("series.json"), &serde_json::to_string(&series)?)?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::report_from_scores;
    use crate::models::ClassifierKind;

    fn reports() -> Vec<EvalReport> {
        let ids: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let y = [Label::Positive, Label::Negative, Label::Positive, Label::Negative];
        ClassifierKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let s = [0.9, 0.2 + 0.1 * i as f64, 0.65, 0.1];
                report_from_scores(k, 0.5, &s, &y, &ids).unwrap()
            })
            .collect()
    }

    #[test]
    fn figure_inventory_and_series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pca = PcaScatter {
            x: vec![0.0, 1.0],
            y: vec![1.0, -1.0],
            labels: vec![Label::Positive, Label::Negative],
            explained_variance_ratio: vec![0.7, 0.2],
        };
        let bar = vec![BarcodeRow {
            clip_id: "c0".into(),
            label: Label::Positive,
            intensities: vec![0.0, 0.5, 1.0],
        }];
        let series = emit_plots(&reports(), &pca, &bar, dir.path()).unwrap();
        let confusion = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("confusion_"))
            .count();
        assert_eq!(confusion, 5);
        for f in ["roc_all.svg", "pca.svg", "barcode.svg"] {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        }
        let roc = std::fs::read_to_string(dir.path().join("roc_all.svg")).unwrap();
        assert!(roc.contains("AUC = "));
        let back: PlotSeries = serde_json::from_str(&std::fs::read_to_string(dir.path().join("series.json")).unwrap()).unwrap();
        assert_eq!(back, series);
    }

    #[test]
    fn empty_reports_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plots(&[], &PcaScatter::default(), &[], dir.path()).is_err());
    }
}
