//! MacroPCA: robust PCA for data with missing values, cellwise and rowwise
//! outliers; the ICPCA baseline; and scoring of new rows against a fitted
//! model.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ddc::{ddc_fit, DdcModel, DdcParams};
use crate::detmcd::{self, McdEstimate};
use crate::dist;
use crate::error::{Error, Result};
use crate::linalg::{self, classical_pca, krzanowski_angle, orthonormality_error};
use crate::matrix::IncompleteMatrix;
use crate::par;
use crate::univariate::{self, unimcd};

/// Version of the serialized model layout.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroPcaParams {
    /// Coverage fraction, `h = ceil(alpha * n)`.
    pub alpha: f64,
    /// Fixed rank; `None` selects it from the explained variance.
    pub k: Option<usize>,
    pub k_max: usize,
    pub cum_var_target: f64,
    pub n_directions: usize,
    pub max_iter: usize,
    pub angle_tol: f64,
    /// Divide each column by a robust scale before fitting.
    pub scale_columns: bool,
    /// Seed of the projection-pursuit direction sampler.
    pub seed: u64,
    pub ddc: DdcParams,
}

impl Default for MacroPcaParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            k: None,
            k_max: 10,
            cum_var_target: 0.8,
            n_directions: 250,
            max_iter: 20,
            angle_tol: 0.005,
            scale_columns: false,
            seed: 0,
            ddc: DdcParams::default(),
        }
    }
}

impl MacroPcaParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.5..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0.5,1), got {}", self.alpha));
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        match self.k {
            Some(0) => return bad("k must be at least 1".into()),
            Some(k) if k > self.k_max => return bad(format!("k={k} exceeds k_max={}", self.k_max)),
            _ => {}
        }
        if !(self.cum_var_target > 0.0 && self.cum_var_target <= 1.0) {
            return bad(format!("cum_var_target must lie in (0,1], got {}", self.cum_var_target));
        }
        if self.n_directions == 0 || self.max_iter == 0 {
            return bad("n_directions and max_iter must be positive".into());
        }
        if !(self.angle_tol > 0.0) {
            return bad(format!("angle_tol must be positive, got {}", self.angle_tol));
        }
        self.ddc.validate()
    }

    pub fn coverage(&self, n: usize) -> usize {
        ((self.alpha * n as f64).ceil() as usize).clamp(1, n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    MacroPca,
    Icpca,
}

/// Fit details kept with the model for auditability.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelNotes {
    /// Eigenvalues of the initial fit, for scree inspection.
    pub scree: Vec<f64>,
    /// Starting estimators tried by DetMCD (empty for ICPCA).
    pub detmcd_starts: Vec<String>,
    pub detmcd_reweight_before_eigen: bool,
    pub detmcd_regularized: bool,
    /// `H*` was too small and `H0` was used instead.
    pub h_star_fallback: bool,
    /// Lower bound of the orthogonal-distance cutoffs (rounding level).
    pub od_floor: f64,
}

/// A fitted PCA model; everything needed to score new rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub schema_version: u32,
    pub method: Method,
    pub params: MacroPcaParams,
    pub k: usize,
    pub center: Vec<f64>,
    /// `d x k`, orthonormal columns. Serialized row by row.
    #[serde(with = "rows")]
    pub loadings: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub residual_scales: Vec<f64>,
    pub cutoff_od: f64,
    pub cutoff_sd: f64,
    /// Cell residual cutoff.
    pub cutoff_cell: f64,
    /// Robust column scales applied before fitting, if requested.
    pub column_scales: Option<Vec<f64>>,
    pub ddc: Option<DdcModel>,
    pub col_names: Option<Vec<String>>,
    pub notes: ModelNotes,
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let v: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = v.first().map_or(0, Vec::len);
        if v.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged loadings matrix"));
        }
        Ok(DMatrix::from_fn(v.len(), ncols, |i, j| v[i][j]))
    }
}

/// Scoring of one new row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowPrediction {
    pub scores: Vec<f64>,
    /// Missing and outlying cells imputed.
    pub x_imputed: Vec<f64>,
    /// Only missing cells imputed.
    pub x_na_imputed: Vec<f64>,
    /// Standardized residuals (`NaN` for missing cells).
    pub residuals: Vec<f64>,
    pub od: f64,
    pub sd: f64,
    pub row_flag: bool,
    pub cell_flags: Vec<usize>,
    /// Reconstruction of `x_imputed` from the subspace, original units.
    pub fitted_imputed: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictOptions {
    pub max_iter: usize,
    /// Stop when no imputed value moves by more than this.
    pub tol: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { max_iter: 20, tol: 1e-8 }
    }
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.center)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let found = v.get("schema_version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if found != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion { found, expected: MODEL_SCHEMA_VERSION });
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn scale_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.column_scales {
            Some(s) => x.iter().zip(s).map(|(v, s)| v / s).collect(),
            None => x.to_vec(),
        }
    }

    fn unscale_row(&self, x: &mut [f64]) {
        if let Some(s) = &self.column_scales {
            x.iter_mut().zip(s).for_each(|(v, s)| *v *= s);
        }
    }

    fn project(&self, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let m = self.center_vector();
        let t = linalg::project_row(x, &m, &self.loadings);
        let fit = linalg::reconstruct(&t, &m, &self.loadings);
        (t, fit)
    }

    /// Score distance of a score vector.
    pub fn score_distance(&self, t: &[f64]) -> f64 {
        t.iter().zip(&self.eigenvalues).map(|(t, l)| t * t / l.max(f64::MIN_POSITIVE)).sum::<f64>().sqrt()
    }

    /// Score a new row (`NaN` = missing) with default options.
    pub fn predict(&self, x: &[f64]) -> Result<RowPrediction> {
        self.predict_with(x, &PredictOptions::default())
    }

    pub fn predict_with(&self, x: &[f64], opts: &PredictOptions) -> Result<RowPrediction> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: x.len() });
        }
        let xs = self.scale_row(x);
        let (mut xt, outlying) = match &self.ddc {
            Some(ddc) => {
                let p = ddc.predict(&xs)?;
                (p.imputed, p.cell_flags)
            }
            None => (xs.iter().zip(&self.center).map(|(&v, &c)| if v.is_finite() { v } else { c }).collect(), vec![]),
        };
        let targets: Vec<usize> = (0..d).filter(|&j| !xs[j].is_finite() || outlying.contains(&j)).collect();
        let mut iterations = 0;
        if !targets.is_empty() {
            for _ in 0..opts.max_iter {
                iterations += 1;
                let (_, fit) = self.project(&xt);
                let mut delta: f64 = 0.0;
                for &j in &targets {
                    delta = delta.max((fit[j] - xt[j]).abs());
                    xt[j] = fit[j];
                }
                if delta < opts.tol {
                    break;
                }
            }
        }
        let xcheck: Vec<f64> = xs.iter().zip(&xt).map(|(&v, &t)| if v.is_finite() { v } else { t }).collect();
        let (t, fit) = self.project(&xcheck);
        let diff: Vec<f64> = xcheck.iter().zip(fit.iter()).map(|(a, b)| a - b).collect();
        let od = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scores: Vec<f64> = t.iter().copied().collect();
        let sd = self.score_distance(&scores);
        let residuals: Vec<f64> = (0..d)
            .map(|j| if xs[j].is_finite() { diff[j] / self.residual_scales[j] } else { f64::NAN })
            .collect();
        let cell_flags = (0..d).filter(|&j| residuals[j].abs() > self.cutoff_cell).collect();
        let (_, fit_imputed) = self.project(&xt);
        let mut fitted_imputed: Vec<f64> = fit_imputed.iter().copied().collect();
        let mut x_imputed = xt;
        let mut x_na_imputed = xcheck;
        self.unscale_row(&mut fitted_imputed);
        self.unscale_row(&mut x_imputed);
        self.unscale_row(&mut x_na_imputed);
        Ok(RowPrediction {
            scores,
            x_imputed,
            x_na_imputed,
            residuals,
            od,
            sd,
            row_flag: od > self.cutoff_od,
            cell_flags,
            fitted_imputed,
            iterations,
        })
    }
}

/// Free-function form of [`PcaModel::predict_with`].
pub fn macropca_predict(x: &[f64], model: &PcaModel, max_iter: usize, tol: f64) -> Result<RowPrediction> {
    model.predict_with(x, &PredictOptions { max_iter, tol })
}

/// Output of a MacroPCA or ICPCA fit.
#[derive(Clone, Debug)]
pub struct MacroPcaResult {
    pub model: PcaModel,
    /// Scores of the NA-imputed data (`n x k`).
    pub scores: DMatrix<f64>,
    /// Fitted values of the NA-imputed data, original units.
    pub predictions: DMatrix<f64>,
    /// Fitted values of each row after imputing its missing and flagged
    /// cells as for a new row, original units.
    pub imputed_predictions: DMatrix<f64>,
    /// Standardized residuals; missing where the input is missing.
    pub residuals: IncompleteMatrix,
    pub od: Vec<f64>,
    pub sd: Vec<f64>,
    /// Data with missing cells imputed, original units.
    pub x_na_imputed: DMatrix<f64>,
    /// Final cell-imputed data, original units.
    pub x_cell_imputed: DMatrix<f64>,
    /// Rows treated as non-outlying in the final fit, sorted.
    pub h_star: Vec<usize>,
    /// Complement of `h_star`.
    pub row_flags: Vec<usize>,
    /// Cells flagged by DDC (ICPCA: by residual cutoff).
    pub cell_flags: DMatrix<bool>,
    /// Rows flagged by DDC.
    pub ddc_row_flags: Vec<usize>,
    /// The `h` least outlying rows from projection pursuit, sorted.
    pub h0: Vec<usize>,
    /// Projection-pursuit outlyingness of every row.
    pub outlyingness: Vec<f64>,
    pub iterations_used: usize,
    pub final_angle: f64,
    /// Krzanowski angle after each iteration of the subspace refinement.
    pub angles: Vec<f64>,
    /// Orthogonal distances used for reweighting (cell-imputed rows).
    pub od_reweight: Vec<f64>,
    pub cutoff_od_reweight: f64,
    /// Center and loadings after reweighting, before the DetMCD rotation.
    pub reweighted_center: DVector<f64>,
    pub reweighted_loadings: DMatrix<f64>,
    pub mcd: Option<McdEstimate>,
    /// `max |P'P - I|` of the loadings at each stage.
    pub stage_orthonormality: Vec<(String, f64)>,
    /// Coverage `h` used by the fit.
    pub h: usize,
}

/// Orthogonal-distance cutoff from the univariate MCD of `od^(2/3)`,
/// never below `floor`.
pub fn od_cutoff(od: &[f64], h: usize, floor: f64) -> Result<f64> {
    let v: Vec<f64> = od.iter().map(|x| x.powf(2.0 / 3.0)).collect();
    let u = unimcd(&v, h)?;
    let base = u.location + u.scale * dist::normal_quantile(0.99);
    Ok(base.max(0.0).powf(1.5).max(floor))
}

/// Distances below this are rounding noise for data of the given spread.
fn od_floor(eigenvalues: &[f64]) -> f64 {
    1e-9 * eigenvalues.iter().sum::<f64>().max(0.0).sqrt()
}

fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.norm()).collect()
}

fn score_distances(scores: &DMatrix<f64>, eigenvalues: &[f64]) -> Vec<f64> {
    scores
        .row_iter()
        .map(|r| r.iter().zip(eigenvalues).map(|(t, l)| t * t / l.max(f64::MIN_POSITIVE)).sum::<f64>().sqrt())
        .collect()
}

/// Projection-pursuit outlyingness over directions through pairs of rows.
pub fn outlyingness(x: &DMatrix<f64>, h: usize, n_directions: usize, seed: u64) -> Vec<f64> {
    let n = x.nrows();
    let all_pairs = n * (n - 1) / 2;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let valid = |a: usize, b: usize| (x.row(a) - x.row(b)).norm() > 0.0;
    if all_pairs <= n_directions {
        for a in 0..n {
            for b in a + 1..n {
                if valid(a, b) {
                    pairs.push((a, b));
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while pairs.len() < n_directions && attempts < 50 * n_directions {
            attempts += 1;
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) && valid(key.0, key.1) {
                pairs.push(key);
            }
        }
    }
    let per_dir: Vec<Option<Vec<f64>>> = par::map_slice(&pairs, |&(a, b)| {
        let v = (x.row(a) - x.row(b)).transpose();
        let v = &v / v.norm();
        let proj: Vec<f64> = (x * v).iter().copied().collect();
        let u = unimcd(&proj, h).ok()?;
        (u.scale > 0.0).then(|| proj.iter().map(|p| (p - u.location).abs() / u.scale).collect())
    });
    let mut out = vec![0.0; n];
    for o in per_dir.into_iter().flatten() {
        for (dst, v) in out.iter_mut().zip(o) {
            *dst = f64::max(*dst, v);
        }
    }
    out
}

/// Number of components from the scree eigenvalues.
/// Number of components: `params.k` if set (checked against the numerical
/// rank), otherwise the smallest count reaching `cum_var_target`, capped
/// by `k_max`.
pub fn choose_k(eigenvalues: &[f64], params: &MacroPcaParams, max_rank: usize) -> Result<usize> {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let rank = eigenvalues.iter().filter(|&&l| l > 1e-12 * top).count().min(max_rank);
    if rank == 0 {
        return Err(Error::Degenerate("the initial subset has zero variance".into()));
    }
    if let Some(k) = params.k {
        if k > rank {
            return Err(Error::Degenerate(format!("requested k={k} exceeds the rank {rank} of the initial fit")));
        }
        return Ok(k);
    }
    let total: f64 = eigenvalues.iter().sum();
    let cap = params.k_max.min(rank);
    let mut cum = 0.0;
    for (i, l) in eigenvalues.iter().take(cap).enumerate() {
        cum += l;
        if cum / total >= params.cum_var_target {
            return Ok(i + 1);
        }
    }
    Ok(cap)
}

fn column_robust_scales(x: &IncompleteMatrix) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| match univariate::rob_loc_scale(&x.observed_column(j)) {
            Ok(ls) if ls.scale > 0.0 && ls.scale.is_finite() => ls.scale,
            _ => 1.0,
        })
        .collect()
}

fn residual_scale(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let s = if v.is_empty() { 0.0 } else { univariate::rob_scale_centered(&v) };
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

fn unscale(m: &mut DMatrix<f64>, scales: &Option<Vec<f64>>) {
    if let Some(s) = scales {
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= s[j];
        }
    }
}

/// Fit MacroPCA.
pub fn macropca_fit(x: &IncompleteMatrix, params: &MacroPcaParams) -> Result<MacroPcaResult> {
    params.validate()?;
    let (n, d) = (x.nrows(), x.ncols());
    if n < 4 || d < 2 {
        return Err(Error::Degenerate(format!("MacroPCA needs n >= 4 and d >= 2, got {n} x {d}")));
    }
    let column_scales = params.scale_columns.then(|| column_robust_scales(x));
    let xs = match &column_scales {
        Some(s) => {
            let mut m = x.clone();
            for (j, sj) in s.iter().enumerate() {
                for i in 0..n {
                    if let Some(v) = x.get(i, j) {
                        m.set(i, j, v / sj);
                    }
                }
            }
            m
        }
        None => x.clone(),
    };
    let h = params.coverage(n);
    let mut stages = Vec::new();

    // DDC.
    let ddc = ddc_fit(&xs, &params.ddc)?;
    let cell_flags = ddc.cell_flags.clone();
    let ddc_rows: Vec<bool> = (0..n).map(|i| ddc.is_row_flagged(i)).collect();

    // Step 1: projection pursuit on a partially imputed matrix.
    let per_row = ddc.flags_per_row();
    let mut unflagged: Vec<usize> = (0..n).filter(|&i| !ddc_rows[i]).collect();
    unflagged.sort_by(|&a, &b| {
        per_row[a]
            .cmp(&per_row[b])
            .then(ddc.row_scores[a].total_cmp(&ddc.row_scores[b]))
            .then(a.cmp(&b))
    });
    let mut xring = ddc.x_na_imputed.clone();
    for &i in unflagged.iter().take(h) {
        xring.set_row(i, &ddc.x_full_imputed.row(i));
    }
    let outl = outlyingness(&xring, h, params.n_directions, params.seed);
    let mut candidates: Vec<usize> = (0..n).filter(|&i| !ddc_rows[i]).collect();
    candidates.sort_by(|&a, &b| outl[a].total_cmp(&outl[b]).then(a.cmp(&b)));
    let mut h0: Vec<usize> = candidates.into_iter().take(h).collect();
    h0.sort_unstable();
    if h0.len() < 2 {
        return Err(Error::Degenerate("fewer than 2 rows left after DDC row flagging".into()));
    }
    let in_h0: Vec<bool> = (0..n).map(|i| h0.binary_search(&i).is_ok()).collect();

    // Step 2: initial PCA on H0 and the rank.
    let mut xcheck = ddc.x_na_imputed.clone();
    let mut xring = xcheck.clone();
    for &i in &h0 {
        xring.set_row(i, &ddc.x_full_imputed.row(i));
    }
    let pca = classical_pca(&linalg::select_rows(&xring, &h0))?;
    let scree = pca.eigenvalues.clone();
    let k = choose_k(&scree, params, h0.len() - 1)?;
    let mut m = pca.center;
    let mut p = pca.loadings.columns(0, k).into_owned();
    stages.push(("initial".to_string(), orthonormality_error(&p)));

    // Step 3: iterate imputation and PCA on H0.
    let na: Vec<(usize, usize)> =
        (0..d).flat_map(|j| (0..n).map(move |i| (i, j))).filter(|&(i, j)| !xs.is_observed(i, j)).collect();
    let imputed_cells: Vec<(usize, usize)> = (0..d)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .filter(|&(i, j)| in_h0[i] && cell_flags[(i, j)])
        .collect();
    let mut angles = Vec::new();
    for _ in 2..=params.max_iter {
        let fit = linalg::fitted(&linalg::scores(&xring, &m, &p), &m, &p);
        for &(i, j) in &na {
            xcheck[(i, j)] = fit[(i, j)];
            xring[(i, j)] = fit[(i, j)];
        }
        for &(i, j) in &imputed_cells {
            xring[(i, j)] = fit[(i, j)];
        }
        let next = classical_pca(&linalg::select_rows(&xring, &h0))?;
        let p_new = next.loadings.columns(0, k).into_owned();
        let angle = krzanowski_angle(&p_new, &p);
        m = next.center;
        p = p_new;
        stages.push((format!("iteration {}", angles.len() + 2), orthonormality_error(&p)));
        angles.push(angle);
        if angle < params.angle_tol {
            break;
        }
    }

    // Step 4: reweighting by orthogonal distance.
    let fit_ring = linalg::fitted(&linalg::scores(&xring, &m, &p), &m, &p);
    let od_reweight = row_norms(&(&xring - &fit_ring));
    let floor = od_floor(&scree);
    let cutoff_od_reweight = od_cutoff(&od_reweight, h, floor)?;
    let mut h_star: Vec<usize> = (0..n).filter(|&i| od_reweight[i] <= cutoff_od_reweight && !ddc_rows[i]).collect();
    let mut notes = ModelNotes { scree, od_floor: floor, ..Default::default() };
    if h_star.len() < k + 2 {
        h_star = h0.clone();
        notes.h_star_fallback = true;
    }
    let mut x_cell_imputed = xcheck.clone();
    for &i in &h_star {
        for j in 0..d {
            if cell_flags[(i, j)] {
                x_cell_imputed[(i, j)] = fit_ring[(i, j)];
            }
        }
    }
    let star_rows = linalg::select_rows(&x_cell_imputed, &h_star);
    let pca_star = classical_pca(&star_rows)?;
    let m_star = pca_star.center;
    let p_star = pca_star.loadings.columns(0, k).into_owned();
    stages.push(("reweighted".to_string(), orthonormality_error(&p_star)));

    // Step 5: robust basis within the subspace.
    let t_star = linalg::scores(&star_rows, &m_star, &p_star);
    let n_star = h_star.len();
    let h_mcd = params.coverage(n_star).max((n_star + k + 1).div_ceil(2)).min(n_star);
    let mcd = detmcd::detmcd(&t_star, h_mcd)?;
    let center = &m_star + &p_star * &mcd.center;
    let loadings = &p_star * &mcd.loadings;
    let eigenvalues = mcd.eigenvalues.clone();
    stages.push(("final".to_string(), orthonormality_error(&loadings)));
    notes.detmcd_starts = mcd.starts.iter().map(|s| s.name.clone()).collect();
    notes.detmcd_reweight_before_eigen = detmcd::REWEIGHT_BEFORE_EIGEN;
    notes.detmcd_regularized = mcd.regularized;

    // Step 6: scores, fitted values, residuals and distances.
    let scores = linalg::scores(&xcheck, &center, &loadings);
    let fitted = linalg::fitted(&scores, &center, &loadings);
    let diff = &xcheck - &fitted;
    let residual_scales: Vec<f64> = par::map_range(d, |j| {
        residual_scale((0..n).filter(|&i| xs.is_observed(i, j)).map(|i| diff[(i, j)]))
    });
    let od = row_norms(&diff);
    let sd = score_distances(&scores, &eigenvalues);
    let cutoff_od = od_cutoff(&od, h, floor)?;

    let mut residuals = xs.clone();
    for j in 0..d {
        for i in 0..n {
            if xs.is_observed(i, j) {
                residuals.set(i, j, diff[(i, j)] / residual_scales[j]);
            }
        }
    }
    let row_flags: Vec<usize> = (0..n).filter(|i| h_star.binary_search(i).is_err()).collect();

    let model = PcaModel {
        schema_version: MODEL_SCHEMA_VERSION,
        method: Method::MacroPca,
        params: params.clone(),
        k,
        center: center.iter().copied().collect(),
        loadings,
        eigenvalues,
        residual_scales,
        cutoff_od,
        cutoff_sd: dist::score_distance_cutoff(k),
        cutoff_cell: ddc.model.cutoff,
        column_scales: column_scales.clone(),
        ddc: Some(ddc.model.clone()),
        col_names: x.col_names().map(|c| c.to_vec()),
        notes,
    };
    let rows: Vec<Result<Vec<f64>>> = par::map_range(n, |i| Ok(model.predict(&x.row(i))?.fitted_imputed));
    let mut imputed_predictions = DMatrix::zeros(n, d);
    for (i, r) in rows.into_iter().enumerate() {
        imputed_predictions.set_row(i, &DVector::from_vec(r?).transpose());
    }
    let mut predictions = fitted;
    let mut x_na_imputed = xcheck;
    unscale(&mut predictions, &column_scales);
    unscale(&mut x_na_imputed, &column_scales);
    unscale(&mut x_cell_imputed, &column_scales);
    if column_scales.is_some() {
        for j in 0..d {
            for i in 0..n {
                if let Some(v) = x.get(i, j) {
                    x_na_imputed[(i, j)] = v;
                    if !cell_flags[(i, j)] || h_star.binary_search(&i).is_err() {
                        x_cell_imputed[(i, j)] = v;
                    }
                }
            }
        }
    }

    Ok(MacroPcaResult {
        model,
        scores,
        predictions,
        imputed_predictions,
        residuals,
        od,
        sd,
        x_na_imputed,
        x_cell_imputed,
        h_star,
        row_flags,
        cell_flags,
        ddc_row_flags: ddc.row_flags.clone(),
        h0,
        outlyingness: outl,
        iterations_used: angles.len(),
        final_angle: angles.last().copied().unwrap_or(0.0),
        angles,
        od_reweight,
        cutoff_od_reweight,
        reweighted_center: m_star,
        reweighted_loadings: p_star,
        mcd: Some(mcd),
        stage_orthonormality: stages,
        h,
    })
}

/// Iterative classical PCA: mean imputation, then alternate classical PCA
/// and re-imputation of the missing cells from the fit.
/// Rank chosen for ICPCA when none is given: the variance rule applied to
/// classical PCA of the column-mean-imputed data.
pub fn icpca_default_rank(x: &IncompleteMatrix, params: &MacroPcaParams) -> Result<usize> {
    let means: Vec<f64> = (0..x.ncols())
        .map(|j| {
            let c = x.observed_column(j);
            if c.is_empty() { 0.0 } else { c.iter().sum::<f64>() / c.len() as f64 }
        })
        .collect();
    let filled = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x.get(i, j).unwrap_or(means[j]));
    let pca = linalg::classical_pca(&filled)?;
    choose_k(&pca.eigenvalues, params, (x.nrows() - 1).min(x.ncols()))
}

pub fn icpca_fit(x: &IncompleteMatrix, k: usize, max_iter: usize, tol: f64) -> Result<MacroPcaResult> {
    let (n, d) = (x.nrows(), x.ncols());
    if k == 0 || n <= k || k > d {
        return Err(Error::InvalidParameter(format!("ICPCA needs 1 <= k < n and k <= d, got k={k}, n={n}, d={d}")));
    }
    let params = MacroPcaParams { k: Some(k), k_max: k.max(10), max_iter: max_iter.max(1), angle_tol: tol, ..Default::default() };
    params.validate()?;
    let means: Vec<f64> = (0..d)
        .map(|j| {
            let v = x.observed_column(j);
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        })
        .collect();
    let mut xcheck = DMatrix::from_fn(n, d, |i, j| x.get(i, j).unwrap_or(means[j]));
    let na: Vec<(usize, usize)> =
        (0..d).flat_map(|j| (0..n).map(move |i| (i, j))).filter(|&(i, j)| !x.is_observed(i, j)).collect();
    let mut pca = classical_pca(&xcheck)?;
    if pca.loadings.ncols() < k {
        return Err(Error::Degenerate(format!("k={k} exceeds the rank of the data")));
    }
    let scree = pca.eigenvalues.clone();
    let mut p = pca.loadings.columns(0, k).into_owned();
    let mut stages = vec![("initial".to_string(), orthonormality_error(&p))];
    let mut angles = Vec::new();
    if !na.is_empty() {
        for _ in 2..=params.max_iter {
            let fit = linalg::fitted(&linalg::scores(&xcheck, &pca.center, &p), &pca.center, &p);
            for &(i, j) in &na {
                xcheck[(i, j)] = fit[(i, j)];
            }
            pca = classical_pca(&xcheck)?;
            let p_new = pca.loadings.columns(0, k).into_owned();
            let angle = krzanowski_angle(&p_new, &p);
            p = p_new;
            stages.push((format!("iteration {}", angles.len() + 2), orthonormality_error(&p)));
            angles.push(angle);
            if angle < tol {
                break;
            }
        }
    }
    let center = pca.center.clone();
    let eigenvalues: Vec<f64> = pca.eigenvalues[..k].to_vec();
    let scores = linalg::scores(&xcheck, &center, &p);
    let fitted = linalg::fitted(&scores, &center, &p);
    let diff = &xcheck - &fitted;
    let residual_scales: Vec<f64> = (0..d)
        .map(|j| {
            let v: Vec<f64> = (0..n).filter(|&i| x.is_observed(i, j)).map(|i| diff[(i, j)]).collect();
            if v.len() < 2 {
                return 1.0;
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let od = row_norms(&diff);
    let sd = score_distances(&scores, &eigenvalues);
    let h = params.coverage(n);
    let floor = od_floor(&scree);
    let cutoff_od = od_cutoff(&od, h, floor)?;
    let cutoff_cell = dist::cell_cutoff(0.99);
    let mut residuals = x.clone();
    let mut cell_flags = DMatrix::from_element(n, d, false);
    for j in 0..d {
        for i in 0..n {
            if x.is_observed(i, j) {
                let r = diff[(i, j)] / residual_scales[j];
                residuals.set(i, j, r);
                cell_flags[(i, j)] = r.abs() > cutoff_cell;
            }
        }
    }
    let h_star: Vec<usize> = (0..n).filter(|&i| od[i] <= cutoff_od).collect();
    let row_flags: Vec<usize> = (0..n).filter(|&i| od[i] > cutoff_od).collect();
    let model = PcaModel {
        schema_version: MODEL_SCHEMA_VERSION,
        method: Method::Icpca,
        params,
        k,
        center: center.iter().copied().collect(),
        loadings: p.clone(),
        eigenvalues,
        residual_scales,
        cutoff_od,
        cutoff_sd: dist::score_distance_cutoff(k),
        cutoff_cell,
        column_scales: None,
        ddc: None,
        col_names: x.col_names().map(|c| c.to_vec()),
        notes: ModelNotes { scree, od_floor: floor, ..Default::default() },
    };
    Ok(MacroPcaResult {
        model,
        scores,
        imputed_predictions: fitted.clone(),
        predictions: fitted,
        residuals,
        od: od.clone(),
        sd,
        x_na_imputed: xcheck.clone(),
        x_cell_imputed: xcheck,
        h_star,
        row_flags,
        cell_flags,
        ddc_row_flags: vec![],
        h0: (0..n).collect(),
        outlyingness: vec![0.0; n],
        iterations_used: angles.len(),
        final_angle: angles.last().copied().unwrap_or(0.0),
        angles,
        od_reweight: od,
        cutoff_od_reweight: cutoff_od,
        reweighted_center: center,
        reweighted_loadings: p,
        mcd: None,
        stage_orthonormality: stages,
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// `n x d` rows on a `k`-dimensional subspace plus optional noise.
    fn low_rank(n: usize, d: usize, k: usize, noise: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let basis = DMatrix::from_fn(d, k, |_, _| g());
        let scores = DMatrix::from_fn(n, k, |_, j| g() * (3.0 + 2.0 * (k - j) as f64));
        let mut x = scores * basis.transpose();
        x.iter_mut().for_each(|v| *v += noise * g() + 1.0);
        x
    }

    #[test]
    fn exact_subspace_has_zero_distances() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(60, 6, 2, 0.0, 1)).unwrap();
        let fit = macropca_fit(&x, &MacroPcaParams { k: Some(2), ..Default::default() }).unwrap();
        assert!(fit.od.iter().all(|&v| v < 1e-8));
        // Floating-point noise around zero may exceed the data-driven cutoff
        // for a handful of rows.
        assert!(fit.h_star.len() as f64 >= 0.9 * 60.0, "|H*| = {}", fit.h_star.len());
    }

    #[test]
    fn rank_selection_by_explained_variance() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(80, 8, 3, 0.05, 2)).unwrap();
        let fit = macropca_fit(&x, &MacroPcaParams::default()).unwrap();
        assert!(fit.model.k <= 3 && fit.model.k >= 1);
        let s = &fit.model.notes.scree;
        let total: f64 = s.iter().sum();
        let cum: f64 = s[..fit.model.k].iter().sum();
        assert!(cum / total >= 0.8);
        if fit.model.k > 1 {
            assert!(s[..fit.model.k - 1].iter().sum::<f64>() / total < 0.8);
        }
    }

    #[test]
    fn stored_quantities_recompute() {
        let mut m = low_rank(80, 6, 2, 0.1, 3);
        m[(5, 1)] += 30.0;
        for j in 0..6 {
            m[(9, j)] += 15.0;
        }
        let mut x = IncompleteMatrix::from_dmatrix(&m).unwrap();
        x.set_missing(3, 0);
        x.set_missing(20, 4);
        let fit = macropca_fit(&x, &MacroPcaParams { k: Some(2), ..Default::default() }).unwrap();
        let model = &fit.model;
        // od and sd from the stored matrices.
        for i in 0..80 {
            let row = fit.x_na_imputed.row(i) - fit.predictions.row(i);
            assert!((row.norm() - fit.od[i]).abs() < 1e-10);
            let sd = model.score_distance(&fit.scores.row(i).iter().copied().collect::<Vec<_>>());
            assert!((sd - fit.sd[i]).abs() < 1e-10);
        }
        assert_eq!(od_cutoff(&fit.od, fit.h, model.notes.od_floor).unwrap(), model.cutoff_od);
        assert_eq!(od_cutoff(&fit.od_reweight, fit.h, model.notes.od_floor).unwrap(), fit.cutoff_od_reweight);
        assert_eq!(model.cutoff_sd, dist::score_distance_cutoff(2));
        // Rows outside H* are those over the reweighting cutoff or flagged by DDC.
        if !model.notes.h_star_fallback {
            for i in 0..80 {
                let out = fit.od_reweight[i] > fit.cutoff_od_reweight || fit.ddc_row_flags.contains(&i);
                assert_eq!(out, fit.row_flags.contains(&i));
            }
        }
        assert!(fit.row_flags.contains(&9));
        for (_, e) in &fit.stage_orthonormality {
            assert!(*e < 1e-10);
        }
    }

    #[test]
    fn rotation_keeps_subspace() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(70, 5, 2, 0.2, 4)).unwrap();
        let fit = macropca_fit(&x, &MacroPcaParams { k: Some(2), ..Default::default() }).unwrap();
        let angle = krzanowski_angle(&fit.model.loadings, &fit.reweighted_loadings);
        assert!(angle < 1e-8);
        assert!(fit.model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn predict_matches_fit_on_training_rows() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(50, 5, 2, 0.1, 5)).unwrap();
        let fit = macropca_fit(&x, &MacroPcaParams { k: Some(2), ..Default::default() }).unwrap();
        for i in 0..50 {
            let p = fit.model.predict(&x.row(i)).unwrap();
            for c in 0..2 {
                assert!((p.scores[c] - fit.scores[(i, c)]).abs() < 1e-8);
            }
            assert!((p.od - fit.od[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn all_missing_row_lands_on_center() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(50, 4, 1, 0.1, 6)).unwrap();
        let fit = macropca_fit(&x, &MacroPcaParams { k: Some(1), ..Default::default() }).unwrap();
        let p = fit.model.predict(&[f64::NAN; 4]).unwrap();
        assert!(p.od < 1e-10);
        assert!(p.cell_flags.is_empty());
        assert!(p.x_na_imputed.iter().all(|v| v.is_finite()));
        assert!(matches!(fit.model.predict(&[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn icpca_equals_classical_pca_on_complete_data() {
        let m = low_rank(40, 5, 2, 0.3, 7);
        let x = IncompleteMatrix::from_dmatrix(&m).unwrap();
        let fit = icpca_fit(&x, 2, 20, 0.005).unwrap();
        assert_eq!(fit.iterations_used, 0);
        let pca = classical_pca(&m).unwrap();
        let p = pca.loadings_k(2);
        let t = linalg::scores(&m, &pca.center, &p);
        for c in 0..2 {
            let sign = if fit.scores[(0, c)] * t[(0, c)] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..40 {
                assert!((fit.scores[(i, c)] - sign * t[(i, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn icpca_completes_rank_one_matrix() {
        // Rows (a, 2a) plus a center; the missing cell of row 0 must be 2a + 1.
        let a = [1.0, 2.0, -1.0, 3.0, 0.5, -2.0];
        let rows: Vec<Vec<Option<f64>>> =
            a.iter().enumerate().map(|(i, &v)| vec![Some(v), if i == 0 { None } else { Some(2.0 * v + 1.0) }]).collect();
        let x = IncompleteMatrix::from_rows(&rows).unwrap();
        let fit = icpca_fit(&x, 1, 2000, 1e-15).unwrap();
        assert!((fit.x_na_imputed[(0, 1)] - 3.0).abs() < 1e-6, "{}", fit.x_na_imputed[(0, 1)]);
    }

    #[test]
    fn model_json_round_trip_and_version_check() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(40, 4, 2, 0.1, 8)).unwrap();
        let fit = macropca_fit(&x, &MacroPcaParams { k: Some(2), ..Default::default() }).unwrap();
        let json = fit.model.to_json().unwrap();
        let back = PcaModel::from_json(&json).unwrap();
        assert_eq!(back, fit.model);
        let bumped = json.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        assert!(matches!(PcaModel::from_json(&bumped), Err(Error::SchemaVersion { found: 99, .. })));
    }

    #[test]
    fn identical_seed_gives_identical_model() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(300, 6, 2, 0.1, 9)).unwrap();
        let p = MacroPcaParams { seed: 42, ..Default::default() };
        let a = macropca_fit(&x, &p).unwrap().model.to_json().unwrap();
        let b = macropca_fit(&x, &p).unwrap().model.to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_validation() {
        let x = IncompleteMatrix::from_dmatrix(&low_rank(30, 4, 2, 0.1, 10)).unwrap();
        for p in [
            MacroPcaParams { alpha: 0.4, ..Default::default() },
            MacroPcaParams { alpha: 1.0, ..Default::default() },
            MacroPcaParams { k: Some(5), k_max: 3, ..Default::default() },
            MacroPcaParams { angle_tol: 0.0, ..Default::default() },
        ] {
            assert!(matches!(macropca_fit(&x, &p), Err(Error::InvalidParameter(_))));
        }
        let small = IncompleteMatrix::from_dmatrix(&low_rank(3, 4, 1, 0.1, 1)).unwrap();
        assert!(macropca_fit(&small, &MacroPcaParams::default()).is_err());
    }

    #[test]
    fn column_scaling_reports_original_units() {
        let mut m = low_rank(60, 4, 2, 0.1, 11);
        m.column_mut(2).scale_mut(1000.0);
        let x = IncompleteMatrix::from_dmatrix(&m).unwrap();
        let fit = macropca_fit(&x, &MacroPcaParams { k: Some(2), scale_columns: true, ..Default::default() }).unwrap();
        let scales = fit.model.column_scales.as_ref().unwrap();
        assert!(scales[2] > 100.0 * scales[0]);
        for i in 0..60 {
            assert_eq!(fit.x_na_imputed[(i, 2)], m[(i, 2)]);
        }
        let p = fit.model.predict(&x.row(0)).unwrap();
        assert!((p.x_na_imputed[2] - m[(0, 2)]).abs() < 1e-9 * m[(0, 2)].abs().max(1.0));
    }
}
