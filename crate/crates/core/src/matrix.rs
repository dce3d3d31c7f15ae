//! Incomplete (masked) data matrices, CSV ingestion/emission and robust
//! per-column standardization.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::univariate;

/// Dense column-major matrix with an explicit observation mask.
///
/// Missing cells hold `NaN` in `values`; observed cells are always finite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IncompleteMatrix {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    row_names: Option<Vec<String>>,
    col_names: Option<Vec<String>>,
}

impl IncompleteMatrix {
    /// Build from column-major values and mask. Cells with `mask == false`
    /// are normalized to `NaN`.
    pub fn new(nrows: usize, ncols: usize, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if nrows == 0 || ncols == 0 {
            return Err(Error::Empty(format!("matrix of shape {nrows}x{ncols}")));
        }
        let len = nrows * ncols;
        if values.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: values.len() });
        }
        if mask.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: mask.len() });
        }
        for (idx, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if m {
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: idx % nrows,
                        col: idx / nrows,
                        token: v.to_string(),
                    });
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self { nrows, ncols, values, mask, row_names: None, col_names: None })
    }

    /// Build from row-major optional values (`None` = missing).
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut values = vec![f64::NAN; nrows * ncols];
        let mut mask = vec![false; nrows * ncols];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Ragged { row: i, found: row.len(), expected: ncols });
            }
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    values[j * nrows + i] = *v;
                    mask[j * nrows + i] = true;
                }
            }
        }
        Self::new(nrows, ncols, values, mask)
    }

    /// Fully observed matrix; non-finite entries become missing.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let values: Vec<f64> = m.as_slice().to_vec();
        let mask = values.iter().map(|v| v.is_finite()).collect();
        Self::new(m.nrows(), m.ncols(), values, mask)
    }

    pub fn with_row_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.nrows {
            return Err(Error::DimensionMismatch { expected: self.nrows, found: names.len() });
        }
        self.row_names = Some(names);
        Ok(self)
    }

    pub fn with_col_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.ncols {
            return Err(Error::DimensionMismatch { expected: self.ncols, found: names.len() });
        }
        self.col_names = Some(names);
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row_names(&self) -> Option<&[String]> {
        self.row_names.as_deref()
    }

    pub fn col_names(&self) -> Option<&[String]> {
        self.col_names.as_deref()
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nrows && j < self.ncols);
        j * self.nrows + i
    }

    /// Observed value at `(i, j)`, or `None` if missing.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.idx(i, j);
        self.mask[k].then_some(self.values[k])
    }

    /// Raw stored value (`NaN` when missing).
    #[inline]
    pub fn raw(&self, i: usize, j: usize) -> f64 {
        self.values[self.idx(i, j)]
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[self.idx(i, j)]
    }

    /// Set an observed value. Non-finite values mark the cell missing.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        if v.is_finite() {
            self.values[k] = v;
            self.mask[k] = true;
        } else {
            self.values[k] = f64::NAN;
            self.mask[k] = false;
        }
    }

    pub fn set_missing(&mut self, i: usize, j: usize) {
        let k = self.idx(i, j);
        self.values[k] = f64::NAN;
        self.mask[k] = false;
    }

    /// Column `j` as stored (missing cells are `NaN`).
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn column_mask(&self, j: usize) -> &[bool] {
        &self.mask[j * self.nrows..(j + 1) * self.nrows]
    }

    /// Observed values of column `j`, in row order.
    pub fn observed_column(&self, j: usize) -> Vec<f64> {
        self.column(j)
            .iter()
            .zip(self.column_mask(j))
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    /// Row `i` with `NaN` at missing cells.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.ncols).map(|j| self.raw(i, j)).collect()
    }

    pub fn row_mask(&self, i: usize) -> Vec<bool> {
        (0..self.ncols).map(|j| self.is_observed(i, j)).collect()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Dense copy with missing cells replaced by `fill`.
    pub fn to_dmatrix_filled(&self, fill: f64) -> DMatrix<f64> {
        let data = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { fill })
            .collect::<Vec<_>>();
        DMatrix::from_vec(self.nrows, self.ncols, data)
    }

    /// Sub-matrix of the given rows (names carried along).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * self.ncols);
        let mut mask = Vec::with_capacity(n * self.ncols);
        for j in 0..self.ncols {
            for &i in rows {
                values.push(self.raw(i, j));
                mask.push(self.is_observed(i, j));
            }
        }
        let mut out = Self::new(n, self.ncols, values, mask)?;
        out.row_names = self
            .row_names
            .as_ref()
            .map(|names| rows.iter().map(|&i| names[i].clone()).collect());
        out.col_names = self.col_names.clone();
        Ok(out)
    }
}

/// Equality on shape, mask, names and observed values (missing cells
/// compare equal regardless of payload).
impl PartialEq for IncompleteMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.mask == other.mask
            && self.row_names == other.row_names
            && self.col_names == other.col_names
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| !m || a == b)
    }
}

/// Options for CSV ingestion.
#[derive(Clone, Debug)]
pub struct CsvOptions {
    /// Tokens treated as missing (case-sensitive, compared after trimming).
    pub na_tokens: Vec<String>,
    /// First column holds row labels.
    pub row_names: bool,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { na_tokens: vec!["NA".to_string(), String::new()], row_names: false, delimiter: b',' }
    }
}

/// Read a headed CSV file into an [`IncompleteMatrix`].
pub fn read_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<IncompleteMatrix> {
    read_csv_from(File::open(path)?, opts)
}

/// Read a headed CSV stream into an [`IncompleteMatrix`].
pub fn read_csv_from<R: Read>(reader: R, opts: &CsvOptions) -> Result<IncompleteMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(opts.delimiter)
        .from_reader(reader);
    let na: HashSet<&str> = opts.na_tokens.iter().map(String::as_str).collect();
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Empty("CSV file has no header".into())),
    };
    let skip = usize::from(opts.row_names);
    let col_names: Vec<String> = header.iter().skip(skip).map(|s| s.trim().to_string()).collect();
    let ncols = col_names.len();
    if ncols == 0 {
        return Err(Error::Empty("CSV header has no data columns".into()));
    }

    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut row_names = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) && ncols > 1 {
            // blank line
            continue;
        }
        if rec.len() != ncols + skip {
            return Err(Error::Ragged { row: i + 1, found: rec.len(), expected: ncols + skip });
        }
        if opts.row_names {
            row_names.push(rec.get(0).unwrap_or_default().trim().to_string());
        }
        let row = rec
            .iter()
            .skip(skip)
            .enumerate()
            .map(|(j, tok)| parse_cell(tok, &na).ok_or_else(|| Error::Parse {
                row: i + 1,
                col: j + 1,
                token: tok.to_string(),
            }))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("CSV file has no data rows".into()));
    }
    let mut m = IncompleteMatrix::from_rows(&rows)?.with_col_names(col_names)?;
    if opts.row_names {
        m = m.with_row_names(row_names)?;
    }
    Ok(m)
}

/// `Some(None)` for an NA token, `Some(Some(v))` for a finite number,
/// `None` for anything unparseable.
pub fn parse_cell(tok: &str, na: &HashSet<&str>) -> Option<Option<f64>> {
    let t = tok.trim();
    if na.contains(t) {
        return Some(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(Some(v)),
        _ => None,
    }
}

/// Write a matrix as a headed CSV file; missing cells become `na_token`.
pub fn write_csv(m: &IncompleteMatrix, path: impl AsRef<Path>, na_token: &str) -> Result<()> {
    let f = File::create(path)?;
    write_csv_to(m, std::io::BufWriter::new(f), na_token)
}

pub fn write_csv_to<W: Write>(m: &IncompleteMatrix, writer: W, na_token: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let col_names: Vec<String> = match m.col_names() {
        Some(names) => names.to_vec(),
        None => (1..=m.ncols()).map(|j| format!("V{j}")).collect(),
    };
    let mut header = Vec::with_capacity(m.ncols() + 1);
    if m.row_names().is_some() {
        header.push(String::new());
    }
    header.extend(col_names);
    w.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut rec = Vec::with_capacity(header.len());
        if let Some(names) = m.row_names() {
            rec.push(names[i].clone());
        }
        for j in 0..m.ncols() {
            rec.push(match m.get(i, j) {
                Some(v) => format_number(v),
                None => na_token.to_string(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Format with 15 significant digits, trimming trailing zeros.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return "NA".to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_fraction(&s)
    } else {
        let s = format!("{v:.14e}");
        let (mant, e) = s.split_once('e').expect("exponent present");
        format!("{}e{}", trim_fraction(mant), e)
    }
}

fn trim_fraction(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Per-column location and scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStandardization {
    pub locations: Vec<f64>,
    pub scales: Vec<f64>,
    /// Columns with fewer than two distinct observed values or zero robust
    /// scale. They are centered and carried with scale 1.
    pub degenerate_cols: Vec<usize>,
}

impl ColumnStandardization {
    pub fn identity(d: usize) -> Self {
        Self { locations: vec![0.0; d], scales: vec![1.0; d], degenerate_cols: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.locations.len()
    }

    pub fn is_degenerate(&self, j: usize) -> bool {
        self.degenerate_cols.binary_search(&j).is_ok()
    }

    /// Standardize a single row in place (NaN stays NaN).
    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.locations).zip(&self.scales) {
            *v = (*v - m) / s;
        }
    }

    /// Undo standardization of a single row in place.
    pub fn invert_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.locations).zip(&self.scales) {
            *v = m + s * *v;
        }
    }
}

/// Standardize every column with the given location and scale functions.
///
/// `loc` receives the observed values of a column; `scale` receives those
/// values centered at the location.
pub fn standardize_with<L, S>(x: &IncompleteMatrix, loc: L, scale: S) -> (IncompleteMatrix, ColumnStandardization)
where
    L: Fn(&[f64]) -> f64,
    S: Fn(&[f64]) -> f64,
{
    let d = x.ncols();
    let mut locations = Vec::with_capacity(d);
    let mut scales = Vec::with_capacity(d);
    let mut degenerate_cols = Vec::new();
    for j in 0..d {
        let obs = x.observed_column(j);
        let distinct = count_distinct_upto(&obs, 2);
        let m = if obs.is_empty() { 0.0 } else { loc(&obs) };
        let s = if distinct >= 2 {
            let centered: Vec<f64> = obs.iter().map(|v| v - m).collect();
            scale(&centered)
        } else {
            0.0
        };
        locations.push(m);
        if s.is_finite() && s > 0.0 {
            scales.push(s);
        } else {
            scales.push(1.0);
            degenerate_cols.push(j);
        }
    }
    let std = ColumnStandardization { locations, scales, degenerate_cols };
    let z = apply_standardization(x, &std);
    (z, std)
}

/// Standardize with the 1-step M-estimators of location and scale.
pub fn standardize(x: &IncompleteMatrix) -> (IncompleteMatrix, ColumnStandardization) {
    standardize_with(x, univariate::rob_loc, univariate::rob_scale_centered)
}

/// Apply a stored standardization (mask unchanged).
pub fn apply_standardization(x: &IncompleteMatrix, std: &ColumnStandardization) -> IncompleteMatrix {
    let mut z = x.clone();
    for j in 0..x.ncols() {
        let (m, s) = (std.locations[j], std.scales[j]);
        let start = j * x.nrows();
        for v in &mut z.values[start..start + x.nrows()] {
            *v = (*v - m) / s;
        }
    }
    z
}

/// Undo a standardization on observed cells.
pub fn unstandardize(z: &IncompleteMatrix, std: &ColumnStandardization) -> Result<IncompleteMatrix> {
    if z.ncols() != std.dim() {
        return Err(Error::DimensionMismatch { expected: std.dim(), found: z.ncols() });
    }
    let mut x = z.clone();
    for j in 0..z.ncols() {
        let (m, s) = (std.locations[j], std.scales[j]);
        let start = j * z.nrows();
        for v in &mut x.values[start..start + z.nrows()] {
            *v = m + s * *v;
        }
    }
    Ok(x)
}

fn count_distinct_upto(v: &[f64], cap: usize) -> usize {
    let mut seen: Vec<f64> = Vec::with_capacity(cap);
    for &x in v {
        if !seen.contains(&x) {
            seen.push(x);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}
