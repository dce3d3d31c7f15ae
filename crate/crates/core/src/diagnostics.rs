//! Residual maps, block-aggregated residual maps and outlier maps, as data
//! and as SVG/CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::macropca::MacroPcaResult;
use crate::matrix::{format_number, IncompleteMatrix};

/// Residuals beyond this are drawn at full intensity.
pub const DEFAULT_R_MAX: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellCategory {
    Missing,
    Regular,
    PosOutlier,
    NegOutlier,
}

impl CellCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Missing => "missing",
            Self::Regular => "regular",
            Self::PosOutlier => "pos_outlier",
            Self::NegOutlier => "neg_outlier",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub category: CellCategory,
    /// 0 for regular and missing cells, in `(0, 1]` for outliers.
    pub intensity: f64,
    /// Fraction of missing cells (0 or 1 for single cells).
    pub missing_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotate {
    Values,
    Residuals,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualMap {
    pub nrows: usize,
    pub ncols: usize,
    /// Row-major grid of cells (or blocks).
    pub cells: Vec<MapCell>,
    /// Gray level per row (or row block): 0 white, 1 black.
    pub row_circles: Vec<f64>,
    /// Optional per-cell text, row-major.
    pub annotations: Option<Vec<Option<String>>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `(rows_per_block, cols_per_block)` when aggregated.
    pub block: Option<(usize, usize)>,
    pub cutoff: f64,
    pub r_max: f64,
}

/// Intensity of a residual: 0 up to the cutoff, linear up to `r_max`, then 1.
pub fn residual_intensity(r: f64, cutoff: f64, r_max: f64) -> f64 {
    let a = r.abs();
    if a <= cutoff {
        0.0
    } else if a >= r_max {
        1.0
    } else {
        (a - cutoff) / (r_max - cutoff)
    }
}

pub fn classify_residual(r: Option<f64>, cutoff: f64, r_max: f64) -> MapCell {
    match r {
        None => MapCell { category: CellCategory::Missing, intensity: 0.0, missing_fraction: 1.0 },
        Some(r) if r.abs() <= cutoff => MapCell { category: CellCategory::Regular, intensity: 0.0, missing_fraction: 0.0 },
        Some(r) => MapCell {
            category: if r > 0.0 { CellCategory::PosOutlier } else { CellCategory::NegOutlier },
            intensity: residual_intensity(r, cutoff, r_max),
            missing_fraction: 0.0,
        },
    }
}

/// Gray level of a row circle: 0 up to `c_od`, 1 from `3 c_od`.
pub fn circle_gray(od: f64, c_od: f64) -> f64 {
    if od.is_nan() {
        return 0.0;
    }
    if c_od <= 0.0 {
        return if od > 0.0 { 1.0 } else { 0.0 };
    }
    ((od / c_od - 1.0) / 2.0).clamp(0.0, 1.0)
}

fn sorted_mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Aggregate a set of cells into one block cell: the most frequent outlying
/// category (positive on ties) with the mean intensity of its cells;
/// regular when nothing is outlying; missing when everything is.
pub fn aggregate_cells(cells: &[MapCell]) -> MapCell {
    let total: f64 = cells.iter().map(|c| c.missing_fraction).sum();
    let missing_fraction = if cells.is_empty() { 0.0 } else { total / cells.len() as f64 };
    let of = |cat| cells.iter().filter(|c| c.category == cat).map(|c| c.intensity).collect::<Vec<f64>>();
    let pos = of(CellCategory::PosOutlier);
    let neg = of(CellCategory::NegOutlier);
    let (category, intensity) = if pos.is_empty() && neg.is_empty() {
        if cells.iter().all(|c| c.category == CellCategory::Missing) {
            (CellCategory::Missing, 0.0)
        } else {
            (CellCategory::Regular, 0.0)
        }
    } else if pos.len() >= neg.len() {
        (CellCategory::PosOutlier, sorted_mean(pos))
    } else {
        (CellCategory::NegOutlier, sorted_mean(neg))
    };
    MapCell { category, intensity, missing_fraction }
}

fn default_labels(n: usize, prefix: &str) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Options of [`ResidualMap::from_result`].
#[derive(Clone, Debug)]
pub struct MapOptions {
    pub block: Option<(usize, usize)>,
    pub annotate: Annotate,
    pub r_max: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { block: None, annotate: Annotate::None, r_max: DEFAULT_R_MAX }
    }
}

impl ResidualMap {
    /// Cell-level map from standardized residuals and orthogonal distances.
    /// `values` supplies annotations in `Annotate::Values` mode and the
    /// labels when it carries names.
    pub fn from_parts(
        residuals: &IncompleteMatrix,
        od: &[f64],
        c_od: f64,
        values: Option<&IncompleteMatrix>,
        annotate: Annotate,
        r_max: f64,
    ) -> Result<Self> {
        let (n, d) = (residuals.nrows(), residuals.ncols());
        if od.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: od.len() });
        }
        if let Some(v) = values {
            if v.nrows() != n || v.ncols() != d {
                return Err(Error::DimensionMismatch { expected: n * d, found: v.nrows() * v.ncols() });
            }
        }
        let cutoff = dist::cell_cutoff(0.99);
        if !(r_max > cutoff) {
            return Err(Error::InvalidParameter(format!("r_max must exceed the cell cutoff {cutoff}")));
        }
        let mut cells = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                cells.push(classify_residual(residuals.get(i, j), cutoff, r_max));
            }
        }
        let annotations = match annotate {
            Annotate::None => None,
            Annotate::Residuals => Some(
                (0..n)
                    .flat_map(|i| (0..d).map(move |j| (i, j)))
                    .map(|(i, j)| residuals.get(i, j).map(|r| format!("{r:.1}")))
                    .collect(),
            ),
            Annotate::Values => {
                let v = values.ok_or_else(|| Error::InvalidParameter("value annotations need the data".into()))?;
                Some(
                    (0..n)
                        .flat_map(|i| (0..d).map(move |j| (i, j)))
                        .map(|(i, j)| v.get(i, j).map(format_number))
                        .collect(),
                )
            }
        };
        let names = |m: Option<&IncompleteMatrix>| m.and_then(|m| m.row_names().map(|r| r.to_vec()));
        let row_labels = names(values).or_else(|| names(Some(residuals))).unwrap_or_else(|| default_labels(n, ""));
        let col_labels = values
            .and_then(|v| v.col_names().map(|c| c.to_vec()))
            .or_else(|| residuals.col_names().map(|c| c.to_vec()))
            .unwrap_or_else(|| default_labels(d, "V"));
        Ok(Self {
            nrows: n,
            ncols: d,
            cells,
            row_circles: od.iter().map(|&o| circle_gray(o, c_od)).collect(),
            annotations,
            row_labels,
            col_labels,
            block: None,
            cutoff,
            r_max,
        })
    }

    /// Map of a fit. `data` is the input matrix (values and names).
    pub fn from_result(result: &MacroPcaResult, data: Option<&IncompleteMatrix>, opts: &MapOptions) -> Result<Self> {
        let mut map =
            Self::from_parts(&result.residuals, &result.od, result.model.cutoff_od, data, opts.annotate, opts.r_max)?;
        if data.is_none() {
            if let Some(c) = &result.model.col_names {
                map.col_labels = c.clone();
            }
        }
        match opts.block {
            Some((rb, cb)) => map.blocked(rb, cb),
            None => Ok(map),
        }
    }

    pub fn cell(&self, i: usize, j: usize) -> &MapCell {
        &self.cells[i * self.ncols + j]
    }

    /// Aggregate into blocks of `rb x cb` cells (partial blocks at the edges).
    pub fn blocked(&self, rb: usize, cb: usize) -> Result<Self> {
        if rb == 0 || cb == 0 || rb > self.nrows || cb > self.ncols {
            return Err(Error::InvalidParameter(format!(
                "block {rb}x{cb} does not fit a {}x{} map",
                self.nrows, self.ncols
            )));
        }
        let (bn, bd) = (self.nrows.div_ceil(rb), self.ncols.div_ceil(cb));
        let mut cells = Vec::with_capacity(bn * bd);
        for bi in 0..bn {
            for bj in 0..bd {
                let members: Vec<MapCell> = (bi * rb..((bi + 1) * rb).min(self.nrows))
                    .flat_map(|i| (bj * cb..((bj + 1) * cb).min(self.ncols)).map(move |j| (i, j)))
                    .map(|(i, j)| *self.cell(i, j))
                    .collect();
                cells.push(aggregate_cells(&members));
            }
        }
        let row_circles =
            (0..bn).map(|bi| sorted_mean(self.row_circles[bi * rb..((bi + 1) * rb).min(self.nrows)].to_vec())).collect();
        let span = |labels: &[String], b: usize, size: usize, count: usize| -> Vec<String> {
            (0..count)
                .map(|t| {
                    let (a, z) = (t * b, ((t + 1) * b).min(size) - 1);
                    if a == z {
                        labels[a].clone()
                    } else {
                        format!("{}-{}", labels[a], labels[z])
                    }
                })
                .collect()
        };
        Ok(Self {
            nrows: bn,
            ncols: bd,
            cells,
            row_circles,
            annotations: None,
            row_labels: span(&self.row_labels, rb, self.nrows, bn),
            col_labels: span(&self.col_labels, cb, self.ncols, bd),
            block: Some((rb, cb)),
            cutoff: self.cutoff,
            r_max: self.r_max,
        })
    }

    /// Long-format CSV: `row,col,category,intensity,missing_fraction,circle`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,category,intensity,missing_fraction,circle\n");
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                let c = self.cell(i, j);
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    csv_field(&self.row_labels[i]),
                    csv_field(&self.col_labels[j]),
                    c.category.as_str(),
                    format_number(c.intensity),
                    format_number(c.missing_fraction),
                    format_number(self.row_circles[i])
                );
            }
        }
        s
    }

    pub fn to_svg(&self) -> String {
        svg::residual_map(self)
    }

    pub fn render_svg(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    Regular,
    GoodLeverage,
    Orthogonal,
    BadLeverage,
}

impl Quadrant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Regular => "regular",
            Self::GoodLeverage => "good_leverage",
            Self::Orthogonal => "orthogonal",
            Self::BadLeverage => "bad_leverage",
        }
    }
}

pub fn quadrant(sd: f64, od: f64, c_sd: f64, c_od: f64) -> Quadrant {
    match (sd <= c_sd, od <= c_od) {
        (true, true) => Quadrant::Regular,
        (false, true) => Quadrant::GoodLeverage,
        (true, false) => Quadrant::Orthogonal,
        (false, false) => Quadrant::BadLeverage,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierPoint {
    pub sd: f64,
    pub od: f64,
    pub quadrant: Quadrant,
    /// Set for the labelled extreme points.
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierMap {
    pub points: Vec<OutlierPoint>,
    pub cutoff_sd: f64,
    pub cutoff_od: f64,
    pub row_labels: Vec<String>,
}

impl OutlierMap {
    /// Classify every point and label the `label_top` points with the
    /// largest od (then sd).
    pub fn from_parts(
        sd: &[f64],
        od: &[f64],
        c_sd: f64,
        c_od: f64,
        row_labels: Option<&[String]>,
        label_top: usize,
    ) -> Result<Self> {
        let n = sd.len();
        if od.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: od.len() });
        }
        let labels = row_labels.map(|l| l.to_vec()).unwrap_or_else(|| default_labels(n, ""));
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: labels.len() });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| od[b].total_cmp(&od[a]).then(sd[b].total_cmp(&sd[a])).then(a.cmp(&b)));
        let mut labelled = vec![false; n];
        for &i in order.iter().take(label_top) {
            labelled[i] = true;
        }
        let points = (0..n)
            .map(|i| OutlierPoint {
                sd: sd[i],
                od: od[i],
                quadrant: quadrant(sd[i], od[i], c_sd, c_od),
                label: labelled[i].then(|| labels[i].clone()),
            })
            .collect();
        Ok(Self { points, cutoff_sd: c_sd, cutoff_od: c_od, row_labels: labels })
    }

    pub fn from_result(result: &MacroPcaResult, row_labels: Option<&[String]>, label_top: usize) -> Result<Self> {
        Self::from_parts(
            &result.sd,
            &result.od,
            dist::score_distance_cutoff(result.model.k),
            result.model.cutoff_od,
            row_labels,
            label_top,
        )
    }

    /// CSV: `row,sd,od,quadrant`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,sd,od,quadrant\n");
        for (p, l) in self.points.iter().zip(&self.row_labels) {
            let _ = writeln!(s, "{},{},{},{}", csv_field(l), format_number(p.sd), format_number(p.od), p.quadrant.as_str());
        }
        s
    }

    pub fn to_svg(&self) -> String {
        svg::outlier_map(self)
    }

    pub fn render_svg(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}

mod svg {
    use std::fmt::Write as _;

    use super::{CellCategory, MapCell, OutlierMap, Quadrant, ResidualMap};

    type Rgb = (f64, f64, f64);

    const WHITE: Rgb = (255.0, 255.0, 255.0);
    const YELLOW: Rgb = (255.0, 255.0, 0.0);
    const LIGHT_ORANGE: Rgb = (255.0, 190.0, 90.0);
    const RED: Rgb = (200.0, 0.0, 0.0);
    const LIGHT_PURPLE: Rgb = (205.0, 170.0, 255.0);
    const DARK_BLUE: Rgb = (0.0, 0.0, 139.0);

    fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
        (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, a.2 + (b.2 - a.2) * t)
    }

    fn hex(c: Rgb) -> String {
        let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        format!("#{:02x}{:02x}{:02x}", q(c.0), q(c.1), q(c.2))
    }

    pub(super) fn cell_color(c: &MapCell) -> String {
        let base = match c.category {
            CellCategory::Missing => WHITE,
            CellCategory::Regular => YELLOW,
            CellCategory::PosOutlier => mix(LIGHT_ORANGE, RED, c.intensity),
            CellCategory::NegOutlier => mix(LIGHT_PURPLE, DARK_BLUE, c.intensity),
        };
        hex(mix(base, WHITE, c.missing_fraction.clamp(0.0, 1.0)))
    }

    fn gray(g: f64) -> String {
        let v = 255.0 * (1.0 - g.clamp(0.0, 1.0));
        hex((v, v, v))
    }

    fn esc(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
    }

    fn num(v: f64) -> String {
        let r = (v * 100.0).round() / 100.0;
        if r == r.trunc() {
            format!("{}", r as i64)
        } else {
            format!("{r}")
        }
    }

    pub(super) fn residual_map(m: &ResidualMap) -> String {
        let cw = if m.ncols * 14 > 1600 { (1600 / m.ncols).max(2) } else { 14 };
        let ch = if m.nrows * 14 > 1600 { (1600 / m.nrows).max(2) } else { 14 };
        let label_w = 8 * m.row_labels.iter().map(|l| l.chars().count()).max().unwrap_or(1).min(24) + 10;
        let label_h = 8 * m.col_labels.iter().map(|l| l.chars().count()).max().unwrap_or(1).min(24) + 10;
        let grid_w = cw * m.ncols;
        let grid_h = ch * m.nrows;
        let circle_x = label_w + grid_w + ch.max(8);
        let legend_y = label_h + grid_h + 20;
        let width = circle_x + ch.max(8) + 20;
        let height = legend_y + 50;
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
        let show_labels = ch >= 8;
        for (j, l) in m.col_labels.iter().enumerate() {
            if cw >= 8 {
                let x = label_w + j * cw + cw / 2;
                let _ = writeln!(
                    s,
                    r#"<text x="{x}" y="{}" font-size="10" transform="rotate(-90 {x} {})">{}</text>"#,
                    label_h - 4,
                    label_h - 4,
                    esc(l)
                );
            }
        }
        for i in 0..m.nrows {
            let y = label_h + i * ch;
            if show_labels {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
                    label_w - 4,
                    y + ch - 3,
                    esc(&m.row_labels[i])
                );
            }
            for j in 0..m.ncols {
                let c = m.cell(i, j);
                let _ = writeln!(
                    s,
                    r#"<rect class="cell" x="{}" y="{y}" width="{cw}" height="{ch}" fill="{}" stroke="{}" stroke-width="0.3"/>"#,
                    label_w + j * cw,
                    cell_color(c),
                    if cw >= 6 { "#808080" } else { "none" }
                );
                if let Some(Some(text)) = m.annotations.as_ref().map(|a| &a[i * m.ncols + j]) {
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" font-size="{}" text-anchor="middle">{}</text>"#,
                        label_w + j * cw + cw / 2,
                        y + ch - ch / 4,
                        (ch as f64 * 0.6).max(4.0),
                        esc(text)
                    );
                }
            }
            let r = (ch as f64 / 2.0 - 1.0).max(1.0);
            let _ = writeln!(
                s,
                r#"<circle class="row" cx="{circle_x}" cy="{}" r="{}" fill="{}" stroke="black" stroke-width="0.5"/>"#,
                num(y as f64 + ch as f64 / 2.0),
                num(r),
                gray(m.row_circles[i])
            );
        }
        let legend = [
            ("missing", cell_color(&MapCell { category: CellCategory::Missing, intensity: 0.0, missing_fraction: 1.0 })),
            ("regular", cell_color(&MapCell { category: CellCategory::Regular, intensity: 0.0, missing_fraction: 0.0 })),
            ("r > cutoff", cell_color(&MapCell { category: CellCategory::PosOutlier, intensity: 0.5, missing_fraction: 0.0 })),
            ("r < -cutoff", cell_color(&MapCell { category: CellCategory::NegOutlier, intensity: 0.5, missing_fraction: 0.0 })),
        ];
        for (t, (name, color)) in legend.iter().enumerate() {
            let x = 10 + t * 110;
            let _ = writeln!(
                s,
                r##"<rect class="legend" x="{x}" y="{legend_y}" width="14" height="14" fill="{color}" stroke="#808080"/>"##
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{name}</text>"#, x + 18, legend_y + 11);
        }
        let _ = writeln!(
            s,
            r#"<text x="10" y="{}" font-size="11">cell cutoff {} ; full color at |r| = {}</text>"#,
            legend_y + 32,
            num(m.cutoff),
            num(m.r_max)
        );
        s.push_str("</svg>\n");
        s
    }

    fn ticks(max: f64) -> Vec<f64> {
        if !(max > 0.0) {
            return vec![0.0];
        }
        let raw = max / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        (0..).map(|t| t as f64 * step).take_while(|v| *v <= max + 1e-12).collect()
    }

    pub(super) fn outlier_map(m: &OutlierMap) -> String {
        let (w, h, left, top, pw, ph) = (640.0, 480.0, 70.0, 30.0, 540.0, 390.0);
        let finite = |f: fn(&super::OutlierPoint) -> f64| {
            m.points.iter().map(f).filter(|v| v.is_finite()).fold(0.0f64, f64::max)
        };
        let xmax = (finite(|p| p.sd).max(m.cutoff_sd) * 1.1).max(1e-12);
        let ymax = (finite(|p| p.od).max(m.cutoff_od) * 1.1).max(1e-12);
        let px = |v: f64| left + pw * (v.min(xmax) / xmax);
        let py = |v: f64| top + ph - ph * (v.min(ymax) / ymax);
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in ticks(xmax) {
            let x = num(px(t));
            let _ = writeln!(s, r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#, top + ph, top + ph + 4.0);
            let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, top + ph + 16.0, num(t));
        }
        for t in ticks(ymax) {
            let y = num(py(t));
            let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{left}" y2="{y}" stroke="black"/>"#, left - 4.0);
            let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="10" text-anchor="end">{}</text>"#, left - 6.0, num(t));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">Score distance</text>"#,
            left + pw / 2.0,
            h - 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">Orthogonal distance</text>"#,
            top + ph / 2.0,
            top + ph / 2.0
        );
        let cx = num(px(m.cutoff_sd));
        let cy = num(py(m.cutoff_od));
        let _ = writeln!(
            s,
            r#"<line class="cutoff" x1="{cx}" y1="{top}" x2="{cx}" y2="{}" stroke="red" stroke-dasharray="5,3"/>"#,
            top + ph
        );
        let _ = writeln!(
            s,
            r#"<line class="cutoff" x1="{left}" y1="{cy}" x2="{}" y2="{cy}" stroke="red" stroke-dasharray="5,3"/>"#,
            left + pw
        );
        for p in &m.points {
            let fill = match p.quadrant {
                Quadrant::Regular => "#404040",
                Quadrant::GoodLeverage => "#1f77b4",
                Quadrant::Orthogonal => "#ff7f0e",
                Quadrant::BadLeverage => "#d62728",
            };
            let (x, y) = (num(px(p.sd)), num(py(p.od)));
            let _ = writeln!(s, r#"<circle class="point" cx="{x}" cy="{y}" r="3" fill="{fill}"/>"#);
            if let Some(l) = &p.label {
                let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="10">{}</text>"#, num(px(p.sd) + 5.0), esc(l));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
