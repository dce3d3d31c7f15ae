//! DetectDeviatingCells: flags cellwise outliers from robust bivariate
//! predictions, flags suspicious rows, and imputes missing and flagged
//! cells. [`DdcModel::predict`] applies a stored fit to new rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::matrix::{self, ColumnStandardization, IncompleteMatrix};
use crate::par;
use crate::univariate::{self, rob_corr, rob_loc_scale, rob_slope};

/// Tuning of the cellwise detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdcParams {
    /// Coverage probability of the cell cutoff `sqrt(chi2_{1,p})`.
    pub p_cutoff: f64,
    /// Minimal absolute robust correlation for two columns to be connected.
    pub corr_threshold: f64,
    /// Cap on the number of predictor columns per column (`None` = `d - 1`).
    pub max_predictors: Option<usize>,
}

impl Default for DdcParams {
    fn default() -> Self {
        Self { p_cutoff: 0.99, corr_threshold: 0.5, max_predictors: None }
    }
}

impl DdcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_cutoff > 0.0 && self.p_cutoff < 1.0) {
            return Err(Error::InvalidParameter(format!("p_cutoff must lie in (0,1), got {}", self.p_cutoff)));
        }
        if !(0.0..=1.0).contains(&self.corr_threshold) {
            return Err(Error::InvalidParameter(format!(
                "corr_threshold must lie in [0,1], got {}",
                self.corr_threshold
            )));
        }
        Ok(())
    }

    pub fn cutoff(&self) -> f64 {
        dist::cell_cutoff(self.p_cutoff)
    }
}

/// One term of the weighted prediction of a column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub column: usize,
    /// Robust no-intercept slope `b_jl`.
    pub slope: f64,
    /// Weight `w_jl = |cor_jl|`.
    pub weight: f64,
}

/// The reusable part of a DDC fit: everything needed to process new rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdcModel {
    pub params: DdcParams,
    /// Cell cutoff `c_u`.
    pub cutoff: f64,
    pub std: ColumnStandardization,
    /// Per column `j`, the connected set `C_j` with slopes and weights.
    /// The first entry is always `j` itself with slope and weight 1.
    pub predictors: Vec<Vec<Predictor>>,
    /// Deshrinkage factors `a_j`.
    pub deshrink: Vec<f64>,
    /// Robust scales of `z - zhat` per column.
    pub residual_scales: Vec<f64>,
    /// Degenerate or fully missing columns: standalone, never flagged.
    pub skipped_cols: Vec<usize>,
}

/// Output of [`DdcModel::predict`] for a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct DdcRowPrediction {
    /// Missing and flagged cells replaced by their predictions.
    pub imputed: Vec<f64>,
    /// Only missing cells replaced.
    pub na_imputed: Vec<f64>,
    /// Predicted values on the original scale.
    pub predicted: Vec<f64>,
    /// Standardized cell residuals (`NaN` for missing cells).
    pub residuals: Vec<f64>,
    /// Columns flagged as cellwise outliers (sorted).
    pub cell_flags: Vec<usize>,
}

struct StandardizedRow {
    zhat: Vec<f64>,
    residuals: Vec<f64>,
    flags: Vec<usize>,
}

impl DdcModel {
    pub fn dim(&self) -> usize {
        self.std.dim()
    }

    /// Columns in `C_j`, including `j`.
    pub fn connected_set(&self, j: usize) -> Vec<usize> {
        self.predictors[j].iter().map(|p| p.column).collect()
    }

    /// True when `C_j = {j}`.
    pub fn is_standalone(&self, j: usize) -> bool {
        self.predictors[j].len() == 1
    }

    pub fn slope(&self, j: usize, l: usize) -> Option<f64> {
        self.predictors[j].iter().find(|p| p.column == l).map(|p| p.slope)
    }

    pub fn weight(&self, j: usize, l: usize) -> Option<f64> {
        self.predictors[j].iter().find(|p| p.column == l).map(|p| p.weight)
    }

    fn is_skipped(&self, j: usize) -> bool {
        self.skipped_cols.binary_search(&j).is_ok()
    }

    /// Univariately cleaned row: cells beyond the cutoff become `NaN`.
    fn clean_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| if v.abs() > self.cutoff { f64::NAN } else { v }).collect()
    }

    /// Weighted prediction of every cell of a cleaned row, before
    /// deshrinkage. Cells without any available predictor get 0.
    fn raw_prediction(&self, u: &[f64]) -> Vec<f64> {
        self.predictors
            .iter()
            .map(|preds| {
                let (mut num, mut den) = (0.0, 0.0);
                for p in preds {
                    let v = u[p.column];
                    if v.is_finite() {
                        num += p.weight * p.slope * v;
                        den += p.weight;
                    }
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn process_standardized(&self, z: &[f64]) -> StandardizedRow {
        let u = self.clean_row(z);
        let zhat: Vec<f64> = self
            .raw_prediction(&u)
            .iter()
            .zip(&self.deshrink)
            .map(|(p, a)| a * p)
            .collect();
        let mut residuals = vec![f64::NAN; z.len()];
        let mut flags = Vec::new();
        for j in 0..z.len() {
            if z[j].is_finite() {
                let r = (z[j] - zhat[j]) / self.residual_scales[j];
                residuals[j] = r;
                if r.abs() > self.cutoff && !self.is_skipped(j) {
                    flags.push(j);
                }
            }
        }
        StandardizedRow { zhat, residuals, flags }
    }

    /// Apply the fit to a new row (`NaN` = missing).
    pub fn predict(&self, x: &[f64]) -> Result<DdcRowPrediction> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: x.len() });
        }
        let mut z = x.to_vec();
        self.std.apply_row(&mut z);
        let row = self.process_standardized(&z);
        Ok(self.assemble(x, row))
    }

    fn assemble(&self, x: &[f64], row: StandardizedRow) -> DdcRowPrediction {
        let mut predicted = row.zhat;
        self.std.invert_row(&mut predicted);
        let na_imputed: Vec<f64> =
            x.iter().zip(&predicted).map(|(&v, &p)| if v.is_finite() { v } else { p }).collect();
        let mut imputed = na_imputed.clone();
        for &j in &row.flags {
            imputed[j] = predicted[j];
        }
        DdcRowPrediction { imputed, na_imputed, predicted, residuals: row.residuals, cell_flags: row.flags }
    }
}

/// Full output of [`ddc_fit`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DdcResult {
    pub model: DdcModel,
    /// Standardized data `Z`.
    pub z: IncompleteMatrix,
    /// `Z` with univariate outliers set missing.
    pub u: IncompleteMatrix,
    /// Deshrunk predictions of `Z` (no missing values).
    pub zhat: DMatrix<f64>,
    /// Standardized cell residuals `r0` (missing where `X` is missing).
    pub residuals: IncompleteMatrix,
    /// `true` for cells flagged as cellwise outliers.
    pub cell_flags: DMatrix<bool>,
    /// Row outlyingness `T_i` (`NaN` for rows without observed cells).
    pub row_scores: Vec<f64>,
    /// Rows flagged as outlying, sorted.
    pub row_flags: Vec<usize>,
    /// Missing cells imputed.
    pub x_na_imputed: DMatrix<f64>,
    /// Missing and flagged cells imputed.
    pub x_full_imputed: DMatrix<f64>,
}

impl DdcResult {
    /// Flagged cells as sorted `(row, col)` pairs.
    pub fn flagged_cells(&self) -> Vec<(usize, usize)> {
        let (n, d) = self.cell_flags.shape();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..d {
                if self.cell_flags[(i, j)] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Number of flagged cells in each row.
    pub fn flags_per_row(&self) -> Vec<usize> {
        self.cell_flags.row_iter().map(|r| r.iter().filter(|&&f| f).count()).collect()
    }

    pub fn is_row_flagged(&self, i: usize) -> bool {
        self.row_flags.binary_search(&i).is_ok()
    }

    pub fn predict(&self, x: &[f64]) -> Result<DdcRowPrediction> {
        self.model.predict(x)
    }
}

/// Run DetectDeviatingCells on `x`.
pub fn ddc_fit(x: &IncompleteMatrix, params: &DdcParams) -> Result<DdcResult> {
    params.validate()?;
    let (n, d) = (x.nrows(), x.ncols());
    if n < 3 {
        return Err(Error::Degenerate(format!("DDC needs at least 3 rows, got {n}")));
    }
    let cutoff = params.cutoff();

    // Standardization.
    let (z, std) = matrix::standardize(x);
    let skipped_cols = std.degenerate_cols.clone();
    let active: Vec<usize> = (0..d).filter(|j| skipped_cols.binary_search(j).is_err()).collect();
    if active.is_empty() {
        return Err(Error::Degenerate("all columns are constant or missing".into()));
    }
    if d < 2 {
        return Err(Error::Degenerate(format!("DDC needs at least 2 columns, got {d}")));
    }

    // Univariate cleaning.
    let mut u = z.clone();
    for j in 0..d {
        for i in 0..n {
            if let Some(v) = z.get(i, j) {
                if v.abs() > cutoff {
                    u.set_missing(i, j);
                }
            }
        }
    }

    // Bivariate relations between active columns.
    let cor_rows: Vec<Vec<(usize, f64)>> = par::map_slice(&active, |&j| {
        active
            .iter()
            .filter(|&&l| l > j)
            .filter_map(|&l| {
                let c = rob_corr(u.column(j), u.column(l));
                (!c.insufficient).then_some((l, c.value))
            })
            .collect()
    });
    let mut cor = DMatrix::<f64>::zeros(d, d);
    for (&j, row) in active.iter().zip(&cor_rows) {
        for &(l, c) in row {
            cor[(j, l)] = c;
            cor[(l, j)] = c;
        }
    }
    let cap = params.max_predictors.unwrap_or(d.saturating_sub(1));
    let predictors: Vec<Vec<Predictor>> = par::map_range(d, |j| {
        let mut set = vec![Predictor { column: j, slope: 1.0, weight: 1.0 }];
        if skipped_cols.binary_search(&j).is_ok() {
            return set;
        }
        let mut cands: Vec<(usize, f64)> = active
            .iter()
            .filter(|&&l| l != j && cor[(j, l)].abs() >= params.corr_threshold && cor[(j, l)] != 0.0)
            .map(|&l| (l, cor[(j, l)].abs()))
            .collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cands.truncate(cap);
        for (l, w) in cands {
            let b = rob_slope(u.column(j), u.column(l));
            if !b.insufficient {
                set.push(Predictor { column: l, slope: b.value, weight: w });
            }
        }
        set
    });

    let mut model = DdcModel {
        params: params.clone(),
        cutoff,
        std,
        predictors,
        deshrink: vec![1.0; d],
        residual_scales: vec![1.0; d],
        skipped_cols,
    };

    // Raw predictions, then deshrinkage slopes over non-zero-fill cells.
    let raw: Vec<Vec<f64>> = par::map_range(n, |i| model.raw_prediction(&u.row(i)));
    let deshrink: Vec<f64> = par::map_range(d, |j| {
        if model.is_skipped(j) {
            return 1.0;
        }
        let (zs, ps): (Vec<f64>, Vec<f64>) = (0..n)
            .filter(|&i| raw[i][j] != 0.0)
            .filter_map(|i| z.get(i, j).map(|zv| (zv, raw[i][j])))
            .unzip();
        let a = rob_slope(&zs, &ps);
        if a.insufficient || !a.value.is_finite() || a.value == 0.0 {
            1.0
        } else {
            a.value
        }
    });
    model.deshrink = deshrink;

    // Residual scales.
    let residual_scales: Vec<f64> = par::map_range(d, |j| {
        let res: Vec<f64> = (0..n)
            .filter_map(|i| z.get(i, j).map(|zv| zv - model.deshrink[j] * raw[i][j]))
            .collect();
        let s = if res.is_empty() { 0.0 } else { univariate::rob_scale_centered(&res) };
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    });
    model.residual_scales = residual_scales;

    // Per-row residuals, flags and imputations through the prediction path.
    let rows: Vec<(Vec<f64>, DdcRowPrediction)> = par::map_range(n, |i| {
        let processed = model.process_standardized(&z.row(i));
        (processed.zhat.clone(), model.assemble(&x.row(i), processed))
    });

    let mut zhat = DMatrix::zeros(n, d);
    let mut residuals = z.clone();
    let mut cell_flags = DMatrix::from_element(n, d, false);
    let mut x_na_imputed = DMatrix::zeros(n, d);
    let mut x_full_imputed = DMatrix::zeros(n, d);
    for (i, (zh, row)) in rows.iter().enumerate() {
        for j in 0..d {
            zhat[(i, j)] = zh[j];
            residuals.set(i, j, row.residuals[j]);
            x_na_imputed[(i, j)] = row.na_imputed[j];
            x_full_imputed[(i, j)] = row.imputed[j];
        }
        for &j in &row.cell_flags {
            cell_flags[(i, j)] = true;
        }
    }

    // Row outlyingness from the cell residuals.
    let row_scores: Vec<f64> = rows
        .iter()
        .map(|(_, row)| {
            let (sum, cnt) = row
                .residuals
                .iter()
                .enumerate()
                .filter(|(j, r)| r.is_finite() && !model.is_skipped(*j))
                .fold((0.0, 0usize), |(s, c), (_, r)| (s + dist::chi2_cdf(1.0, r * r), c + 1));
            if cnt == 0 {
                f64::NAN
            } else {
                sum / cnt as f64
            }
        })
        .collect();
    let mut row_flags = Vec::new();
    if let Ok(ls) = rob_loc_scale(&row_scores) {
        if ls.scale > 0.0 {
            for (i, t) in row_scores.iter().enumerate() {
                let st = (t - ls.location) / ls.scale;
                if st.is_finite() && st > 0.0 && st * st > cutoff * cutoff {
                    row_flags.push(i);
                }
            }
        }
    }

    Ok(DdcResult {
        model,
        z,
        u,
        zhat,
        residuals,
        cell_flags,
        row_scores,
        row_flags,
        x_na_imputed,
        x_full_imputed,
    })
}
