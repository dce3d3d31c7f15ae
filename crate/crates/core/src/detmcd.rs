//! Deterministic minimum covariance determinant estimator for small
//! dimensions.
//!
//! Six deterministic starting subsets are each refined by concentration
//! steps; the lowest determinant wins. When the number of `h`-subsets is
//! small enough they are enumerated instead, which gives the exact optimum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dist;
use crate::error::{Error, Result};
use crate::linalg::normalize_signs;
use crate::par;
use crate::univariate::{self, unimcd, MAD_CONSISTENCY};

/// Names of the starting estimators, in evaluation order.
pub const START_NAMES: [&str; 6] = ["tanh", "spearman", "normal_scores", "spatial_sign", "bacon", "ogk"];

/// Above this many `h`-subsets the exhaustive search is skipped.
pub const EXHAUSTIVE_LIMIT: u64 = 5000;

/// Reweighting happens before the spectral decomposition of the scatter.
pub const REWEIGHT_BEFORE_EIGEN: bool = true;

#[derive(Clone, Debug, PartialEq)]
pub struct McdOptions {
    pub max_steps: usize,
    /// Relative determinant improvement below which refinement stops.
    pub tol: f64,
    pub reweight: bool,
}

impl Default for McdOptions {
    fn default() -> Self {
        Self { max_steps: 100, tol: 1e-12, reweight: true }
    }
}

/// One refined start.
#[derive(Clone, Debug)]
pub struct McdStart {
    pub name: String,
    /// Log-determinant of the raw scatter after each accepted step.
    pub log_det_trace: Vec<f64>,
    pub subset: Vec<usize>,
}

impl McdStart {
    pub fn log_det(&self) -> f64 {
        self.log_det_trace.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug)]
pub struct McdEstimate {
    pub center: DVector<f64>,
    pub scatter: DMatrix<f64>,
    /// Sorted indices of the `h` rows of the optimal subset.
    pub support: Vec<usize>,
    /// Eigenvectors of `scatter`, columns sorted by decreasing eigenvalue.
    pub loadings: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Mean of the support.
    pub raw_center: DVector<f64>,
    /// Consistency-corrected covariance of the support.
    pub raw_scatter: DMatrix<f64>,
    /// Log-determinant of the uncorrected support covariance (divisor `h`).
    pub raw_log_det: f64,
    /// Rows kept by the reweighting step, sorted.
    pub reweighted_rows: Vec<usize>,
    pub starts: Vec<McdStart>,
    pub best_start: usize,
    /// A singular subset covariance was met and `eps * I` was added.
    pub regularized: bool,
}

/// Mean and covariance (divisor = subset size) of the selected rows.
fn mean_cov(t: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let k = t.ncols();
    let m = rows.len() as f64;
    let mut mean = DVector::zeros(k);
    for &i in rows {
        mean += t.row(i).transpose();
    }
    mean /= m;
    let mut cov = DMatrix::zeros(k, k);
    for &i in rows {
        let c = t.row(i).transpose() - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= m;
    (mean, cov)
}

fn log_det(cov: &DMatrix<f64>) -> f64 {
    match cov.clone().cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    }
}

/// Cholesky factor, adding a small ridge when the matrix is singular.
fn robust_cholesky(cov: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(ch) = cov.clone().cholesky() {
        if ch.l().diagonal().iter().all(|v| *v > 0.0 && v.is_finite()) {
            return (ch.l(), false);
        }
    }
    let k = cov.nrows();
    let scale = (cov.trace() / k as f64).abs().max(f64::MIN_POSITIVE);
    let mut eps = 1e-10 * scale;
    loop {
        let reg = cov + DMatrix::identity(k, k) * eps;
        if let Some(ch) = reg.cholesky() {
            return (ch.l(), true);
        }
        eps *= 10.0;
    }
}

/// Squared Mahalanobis distances of all rows.
fn mahalanobis_sq(t: &DMatrix<f64>, center: &DVector<f64>, cov: &DMatrix<f64>) -> (Vec<f64>, bool) {
    let (l, reg) = robust_cholesky(cov);
    let d = (0..t.nrows())
        .map(|i| {
            let c = t.row(i).transpose() - center;
            l.solve_lower_triangular(&c).map(|y| y.norm_squared()).unwrap_or(f64::INFINITY)
        })
        .collect();
    (d, reg)
}

/// Indices of the `h` smallest values (ties by index), sorted.
fn smallest(values: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = idx[..h].to_vec();
    out.sort_unstable();
    out
}

/// Concentration steps from an initial subset of any size.
fn concentrate(t: &DMatrix<f64>, init: &[usize], h: usize, opts: &McdOptions) -> (Vec<usize>, Vec<f64>, bool) {
    let (mut mean, mut cov) = mean_cov(t, init);
    let mut subset: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut regularized = false;
    for _ in 0..opts.max_steps {
        let (d2, reg) = mahalanobis_sq(t, &mean, &cov);
        regularized |= reg;
        let next = smallest(&d2, h);
        if next == subset {
            break;
        }
        let (m2, c2) = mean_cov(t, &next);
        let ld = log_det(&c2);
        if let Some(&prev) = trace.last() {
            // Relative determinant decrease below tol, or a rounding-level increase.
            if ld >= prev + (1.0 - opts.tol).ln() {
                if ld <= prev {
                    subset = next;
                    trace.push(ld);
                }
                break;
            }
        }
        subset = next;
        trace.push(ld);
        mean = m2;
        cov = c2;
        if ld == f64::NEG_INFINITY {
            regularized = true;
            break;
        }
    }
    (subset, trace, regularized)
}

fn mad(x: &[f64]) -> f64 {
    let med = univariate::median(x);
    let dev: Vec<f64> = x.iter().map(|v| v - med).collect();
    univariate::mad_centered(&dev)
}

/// Columnwise median/MAD standardization; zero MADs fall back to the mean
/// absolute deviation, then to 1.
fn standardize_columns(t: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = t.clone();
    for mut col in z.column_iter_mut() {
        let v: Vec<f64> = col.iter().copied().collect();
        let med = univariate::median(&v);
        let mut s = mad(&v);
        if !(s > 0.0) {
            s = v.iter().map(|x| (x - med).abs()).sum::<f64>() / v.len() as f64 * MAD_CONSISTENCY;
        }
        if !(s > 0.0) {
            s = 1.0;
        }
        col.apply(|x| *x = (*x - med) / s);
    }
    z
}

fn correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = m.shape();
    let means = m.row_mean();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= &means;
    }
    let cov = c.transpose() * &c / n as f64;
    DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            return 1.0;
        }
        let den = (cov[(a, a)] * cov[(b, b)]).sqrt();
        if den > 0.0 {
            cov[(a, b)] / den
        } else {
            0.0
        }
    })
}

/// Average ranks (1-based) of each column.
fn ranks(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = z.shape();
    let mut r = DMatrix::zeros(n, k);
    for j in 0..k {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| z[(a, j)].total_cmp(&z[(b, j)]));
        let mut s = 0;
        while s < n {
            let mut e = s;
            while e + 1 < n && z[(idx[e + 1], j)] == z[(idx[s], j)] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &i in &idx[s..=e] {
                r[(i, j)] = avg;
            }
            s = e + 1;
        }
    }
    r
}

/// Location/scatter from a shape matrix: eigenvectors of `s`, robust
/// variances of the projections, and a coordinatewise median center in the
/// whitened space.
fn shape_to_estimate(z: &DMatrix<f64>, s: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let k = z.ncols();
    let eig = SymmetricEigen::new(s.clone());
    let e = eig.eigenvectors;
    let b = z * &e;
    let lambdas: Vec<f64> = b
        .column_iter()
        .map(|c| {
            let v: Vec<f64> = c.iter().copied().collect();
            mad(&v).powi(2).max(1e-12)
        })
        .collect();
    let lam = DVector::from_vec(lambdas);
    let sigma = &e * DMatrix::from_diagonal(&lam) * e.transpose();
    let sqrt = &e * DMatrix::from_diagonal(&lam.map(f64::sqrt)) * e.transpose();
    let inv_sqrt = &e * DMatrix::from_diagonal(&lam.map(|v| 1.0 / v.sqrt())) * e.transpose();
    let w = z * inv_sqrt;
    let med = DVector::from_fn(k, |j, _| {
        let v: Vec<f64> = w.column(j).iter().copied().collect();
        univariate::median(&v)
    });
    (sqrt * med, sigma)
}

/// The six deterministic starting subsets of size `ceil(n/2)`.
fn start_subsets(t: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let (n, k) = t.shape();
    let h0 = n.div_ceil(2);
    let z = standardize_columns(t);

    let tanh_corr = correlation(&z.map(f64::tanh));
    let r = ranks(&z);
    let spearman = correlation(&r);
    let nf = n as f64;
    let normal_scores = correlation(&r.map(|v| dist::normal_quantile((v - 1.0 / 3.0) / (nf + 1.0 / 3.0))));
    let mut sign = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = z.row(i).transpose();
        let norm = row.norm();
        if norm > 0.0 {
            let u = row / norm;
            sign.ger(1.0 / nf, &u, &u, 1.0);
        }
    }
    let ogk = DMatrix::from_fn(k, k, |a, b| {
        let plus: Vec<f64> = (0..n).map(|i| z[(i, a)] + z[(i, b)]).collect();
        let minus: Vec<f64> = (0..n).map(|i| z[(i, a)] - z[(i, b)]).collect();
        (mad(&plus).powi(2) - mad(&minus).powi(2)) / 4.0
    });

    let subset_from = |s: &DMatrix<f64>| {
        let (m, sigma) = shape_to_estimate(&z, s);
        smallest(&mahalanobis_sq(&z, &m, &sigma).0, h0)
    };
    let norms: Vec<f64> = z.row_iter().map(|r| r.norm()).collect();
    vec![
        subset_from(&tanh_corr),
        subset_from(&spearman),
        subset_from(&normal_scores),
        subset_from(&sign),
        smallest(&norms, h0),
        subset_from(&ogk),
    ]
}

fn binomial(n: usize, h: usize) -> u64 {
    let h = h.min(n - h);
    let mut acc: u64 = 1;
    for i in 0..h {
        acc = match acc.checked_mul((n - i) as u64) {
            Some(v) => v / (i as u64 + 1),
            None => return u64::MAX,
        };
        if acc > EXHAUSTIVE_LIMIT * 1000 {
            return u64::MAX;
        }
    }
    acc
}

/// Best `h`-subset by exhaustive enumeration (lowest index set on ties).
fn exhaustive(t: &DMatrix<f64>, h: usize) -> (Vec<usize>, f64) {
    let n = t.nrows();
    let mut comb: Vec<usize> = (0..h).collect();
    let mut best = (comb.clone(), f64::INFINITY);
    loop {
        let ld = log_det(&mean_cov(t, &comb).1);
        if ld < best.1 {
            best = (comb.clone(), ld);
        }
        // Next combination in lexicographic order.
        let mut i = h;
        while i > 0 && comb[i - 1] == n - h + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        comb[i - 1] += 1;
        for j in i..h {
            comb[j] = comb[j - 1] + 1;
        }
    }
}

/// DetMCD with default options.
pub fn detmcd(t: &DMatrix<f64>, h: usize) -> Result<McdEstimate> {
    detmcd_with(t, h, &McdOptions::default())
}

pub fn detmcd_with(t: &DMatrix<f64>, h: usize, opts: &McdOptions) -> Result<McdEstimate> {
    let (n, k) = t.shape();
    if k == 0 || n <= k {
        return Err(Error::InvalidParameter(format!("DetMCD needs n > k >= 1, got n={n}, k={k}")));
    }
    let h_min = (n + k + 1).div_ceil(2);
    if h < h_min || h > n {
        return Err(Error::InvalidParameter(format!("DetMCD coverage h={h} outside {h_min}..={n}")));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("DetMCD input contains non-finite values".into()));
    }

    let mut regularized = false;
    let starts: Vec<McdStart> = if k == 1 {
        let col: Vec<f64> = t.column(0).iter().copied().collect();
        let u = unimcd(&col, h)?;
        let ld = log_det(&mean_cov(t, &u.subset).1);
        vec![McdStart { name: "unimcd".into(), log_det_trace: vec![ld], subset: u.subset }]
    } else {
        let inits = start_subsets(t);
        let refined = par::map_slice(&inits, |init| concentrate(t, init, h, opts));
        let mut starts = Vec::new();
        for (name, (subset, trace, reg)) in START_NAMES.iter().zip(refined) {
            regularized |= reg;
            starts.push(McdStart { name: name.to_string(), log_det_trace: trace, subset });
        }
        if binomial(n, h) <= EXHAUSTIVE_LIMIT {
            let (subset, ld) = exhaustive(t, h);
            starts.push(McdStart { name: "exhaustive".into(), log_det_trace: vec![ld], subset });
        }
        starts
    };
    let best_start = (0..starts.len())
        .min_by(|&a, &b| starts[a].log_det().total_cmp(&starts[b].log_det()).then(a.cmp(&b)))
        .expect("at least one start");
    let support = starts[best_start].subset.clone();
    let raw_log_det = starts[best_start].log_det();
    if raw_log_det == f64::NEG_INFINITY {
        regularized = true;
    }

    let (raw_center, cov) = mean_cov(t, &support);
    let raw_scatter = cov * univariate::mcd_consistency(h, n, k);

    let (center, scatter, reweighted_rows) = if opts.reweight {
        let (d2, reg) = mahalanobis_sq(t, &raw_center, &raw_scatter);
        regularized |= reg;
        let q = dist::chi2_quantile(k as f64, 0.975);
        let keep: Vec<usize> = (0..n).filter(|&i| d2[i] <= q).collect();
        if keep.len() > k {
            let (m, c) = mean_cov(t, &keep);
            let factor = 0.975 / dist::chi2_cdf(k as f64 + 2.0, q);
            (m, c * factor, keep)
        } else {
            (raw_center.clone(), raw_scatter.clone(), support.clone())
        }
    } else {
        (raw_center.clone(), raw_scatter.clone(), support.clone())
    };
    let scatter = (&scatter + scatter.transpose()) * 0.5;

    let eig = SymmetricEigen::new(scatter.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut loadings = DMatrix::zeros(k, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (c, &src) in order.iter().enumerate() {
        loadings.set_column(c, &eig.eigenvectors.column(src));
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
    }
    normalize_signs(&mut loadings);

    Ok(McdEstimate {
        center,
        scatter,
        support,
        loadings,
        eigenvalues,
        raw_center,
        raw_scatter,
        raw_log_det,
        reweighted_rows,
        starts,
        best_start,
        regularized,
    })
}
