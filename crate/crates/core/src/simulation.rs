//! Synthetic data with missing values, cellwise and rowwise contamination,
//! and Monte Carlo MSE curves of the PCA fits against a clean baseline.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::macropca::{icpca_fit, macropca_fit, MacroPcaParams, Method};
use crate::matrix::{format_number, IncompleteMatrix};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    /// `rho_ij = (-0.9)^|i-j|`.
    A09,
    /// Random correlation matrix.
    Alyz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MissingMechanism {
    Mcar,
    Mar,
}

/// Constants of the random correlation generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlyzParams {
    /// Target condition number.
    pub condition_number: f64,
    /// Accepted relative deviation from the target condition number.
    pub tolerance: f64,
    pub max_rounds: usize,
}

impl Default for AlyzParams {
    fn default() -> Self {
        Self { condition_number: 100.0, tolerance: 0.05, max_rounds: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub d: usize,
    pub family: Family,
    /// Eigenvalues of the covariance; `None` uses [`default_eigenvalues`].
    pub eigenvalues: Option<Vec<f64>>,
    /// Rank used for every fit and for the baseline.
    pub k: usize,
    pub epsilon_missing: f64,
    pub missing_mechanism: MissingMechanism,
    pub eps_cell: f64,
    pub eps_row: f64,
    pub gamma: f64,
    pub replications: usize,
    pub seed: u64,
    pub alyz: AlyzParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            d: 200,
            family: Family::A09,
            eigenvalues: None,
            k: 6,
            epsilon_missing: 0.0,
            missing_mechanism: MissingMechanism::Mcar,
            eps_cell: 0.0,
            eps_row: 0.0,
            gamma: 0.0,
            replications: 100,
            seed: 1,
            alyz: AlyzParams::default(),
        }
    }
}

impl SimulationConfig {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.clone().unwrap_or_else(|| default_eigenvalues(self.d))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for (name, v) in [("epsilon_missing", self.epsilon_missing), ("eps_cell", self.eps_cell), ("eps_row", self.eps_row)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1), got {v}"));
            }
        }
        if self.epsilon_missing + self.eps_cell >= 1.0 {
            return bad("missing and cellwise fractions must leave observed clean cells".into());
        }
        if self.n < 4 || self.d < 2 {
            return bad(format!("need n >= 4 and d >= 2, got {} x {}", self.n, self.d));
        }
        if self.k == 0 || self.k >= self.d {
            return bad(format!("k must lie in 1..d, got {}", self.k));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        let l = self.eigenvalues();
        if l.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: l.len() });
        }
        if l.iter().any(|&v| !(v > 0.0)) || l.windows(2).any(|w| w[1] > w[0]) {
            return bad("eigenvalues must be positive and nonincreasing".into());
        }
        Ok(())
    }
}

/// Eigenvalues `30, 25, 20, 15, 10, 5` followed by `d - 6` equally spaced
/// values from 0.098 down to 0.0015 (step 0.0005 when `d = 200`).
pub fn default_eigenvalues(d: usize) -> Vec<f64> {
    let top = [30.0, 25.0, 20.0, 15.0, 10.0, 5.0];
    if d <= top.len() {
        return top[..d].to_vec();
    }
    let m = d - top.len();
    let mut out = top.to_vec();
    if m == 1 {
        out.push(0.098);
    } else {
        let step = (0.098 - 0.0015) / (m - 1) as f64;
        out.extend((0..m).map(|i| 0.098 - step * i as f64));
    }
    out
}

pub fn a09_correlation(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| (-0.9f64).powi(i.abs_diff(j) as i32))
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c *= -1.0;
        }
    }
    q
}

fn to_correlation(s: &DMatrix<f64>) -> DMatrix<f64> {
    let inv: Vec<f64> = s.diagonal().iter().map(|v| 1.0 / v.sqrt()).collect();
    DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] * inv[i] * inv[j])
}

/// Random correlation matrix with condition number near the target:
/// a random rotation of random eigenvalues in `[1, CN]`, then alternating
/// rescaling to unit diagonal and stretching of the spectrum.
pub fn alyz_correlation(d: usize, params: &AlyzParams, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let cn = params.condition_number;
    let mut lambda: Vec<f64> = (0..d.saturating_sub(2)).map(|_| rng.sample(Uniform::new(1.0, cn).unwrap())).collect();
    lambda.push(1.0);
    lambda.push(cn);
    lambda.truncate(d);
    let q = random_orthogonal(d, rng);
    let mut s = &q * DMatrix::from_diagonal(&DVector::from_vec(lambda)) * q.transpose();
    let mut r = to_correlation(&s);
    for _ in 0..params.max_rounds {
        let eig = SymmetricEigen::new(r.clone());
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        if lo > 0.0 && ((hi / lo) / cn - 1.0).abs() <= params.tolerance {
            break;
        }
        // Stretch the spectrum affinely onto [1, CN] and renormalize.
        let stretched = eig.eigenvalues.map(|v| 1.0 + (v - lo) * (cn - 1.0) / (hi - lo).max(f64::MIN_POSITIVE));
        s = &eig.eigenvectors * DMatrix::from_diagonal(&stretched) * eig.eigenvectors.transpose();
        r = to_correlation(&s);
    }
    (&r + r.transpose()) * 0.5
}

/// Covariance `P L P'` from the eigenvectors `P` of the family's
/// correlation matrix (sorted by decreasing eigenvalue) and the configured
/// eigenvalues `L`.
pub fn make_sigma(config: &SimulationConfig) -> Result<DMatrix<f64>> {
    config.validate()?;
    let d = config.d;
    let corr = match config.family {
        Family::A09 => a09_correlation(d),
        Family::Alyz => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
            alyz_correlation(d, &config.alyz, &mut rng)
        }
    };
    let (p, _) = sorted_eigen(&corr);
    let l = DVector::from_vec(config.eigenvalues());
    let sigma = &p * DMatrix::from_diagonal(&l) * p.transpose();
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// Eigenvectors (columns) and eigenvalues sorted by decreasing eigenvalue.
pub fn sorted_eigen(s: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(s.clone());
    let d = s.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut p = DMatrix::zeros(d, d);
    for (c, &src) in order.iter().enumerate() {
        p.set_column(c, &eig.eigenvectors.column(src));
    }
    linalg::normalize_signs(&mut p);
    (p, order.iter().map(|&i| eig.eigenvalues[i]).collect())
}

/// A factor `A` with `A A' = sigma`.
fn factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Numeric("covariance matrix is not positive definite".into()))
}

fn gaussian_rows(n: usize, a: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = a.nrows();
    let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    z * a.transpose()
}

/// `n` draws from `N(0, sigma)`.
pub fn generate_clean(n: usize, sigma: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    Ok(gaussian_rows(n, &factor(sigma)?, rng))
}

/// Mask `floor(eps * n * d)` cells. MCAR picks them uniformly among the
/// observed cells; MAR picks the observed cells with the largest
/// `|x_{i,j-1}| + |x_{i,j+1}|` (circular in `j`, computed from `values`),
/// ties to the lowest `(i, j)`.
pub fn inject_missing(
    x: &IncompleteMatrix,
    values: &DMatrix<f64>,
    eps: f64,
    mechanism: MissingMechanism,
    rng: &mut ChaCha8Rng,
) -> Result<IncompleteMatrix> {
    let (n, d) = (x.nrows(), x.ncols());
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("missing fraction must lie in [0,1), got {eps}")));
    }
    let count = (eps * (n * d) as f64).floor() as usize;
    let observed: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|&(i, j)| x.is_observed(i, j)).collect();
    if count > observed.len() {
        return Err(Error::InvalidParameter("not enough observed cells to mask".into()));
    }
    let chosen: Vec<(usize, usize)> = match mechanism {
        MissingMechanism::Mcar => index::sample(rng, observed.len(), count).into_iter().map(|t| observed[t]).collect(),
        MissingMechanism::Mar => {
            let u = |i: usize, j: usize| values[(i, (j + d - 1) % d)].abs() + values[(i, (j + 1) % d)].abs();
            let mut ranked: Vec<((usize, usize), f64)> = observed.iter().map(|&(i, j)| ((i, j), u(i, j))).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().take(count).map(|(c, _)| c).collect()
        }
    };
    let mut out = x.clone();
    for (i, j) in chosen {
        out.set_missing(i, j);
    }
    Ok(out)
}

/// Replace `floor(eps * n * d)` randomly chosen observed cells by
/// `gamma * sigma_j`.
pub fn inject_cellwise(
    x: &IncompleteMatrix,
    eps: f64,
    gamma: f64,
    sigma_diag: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(IncompleteMatrix, Vec<(usize, usize)>)> {
    let (n, d) = (x.nrows(), x.ncols());
    if sigma_diag.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: sigma_diag.len() });
    }
    let count = (eps * (n * d) as f64).floor() as usize;
    let observed: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|&(i, j)| x.is_observed(i, j)).collect();
    if count > observed.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot place {count} cellwise outliers in {} observed cells",
            observed.len()
        )));
    }
    let mut cells: Vec<(usize, usize)> = index::sample(rng, observed.len(), count).into_iter().map(|t| observed[t]).collect();
    cells.sort_unstable();
    let mut out = x.clone();
    for &(i, j) in &cells {
        out.set(i, j, gamma * sigma_diag[j].sqrt());
    }
    Ok((out, cells))
}

/// Replace `floor(eps * n)` random rows by draws from
/// `N(gamma * v_{k+1}, sigma)`. Returns the data and the sorted clean rows.
pub fn inject_rowwise(
    x: &DMatrix<f64>,
    eps: f64,
    gamma: f64,
    sigma: &DMatrix<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let (n, d) = x.shape();
    if k + 1 > d {
        return Err(Error::InvalidParameter(format!("k+1={} exceeds d={d}", k + 1)));
    }
    let (p, _) = sorted_eigen(sigma);
    let v = p.column(k).into_owned();
    let count = (eps * n as f64).floor() as usize;
    let mut rows: Vec<usize> = index::sample(rng, n, count).into_vec();
    rows.sort_unstable();
    let draws = gaussian_rows(count, &factor(sigma)?, rng);
    let mut out = x.clone();
    for (t, &i) in rows.iter().enumerate() {
        let r = draws.row(t).transpose() + &v * gamma;
        out.set_row(i, &r.transpose());
    }
    let clean = (0..n).filter(|i| rows.binary_search(i).is_err()).collect();
    Ok((out, clean))
}

/// `(1 / (c d)) * sum over rows in C of the squared prediction differences`.
pub fn mse_vs_baseline(pred: &DMatrix<f64>, baseline: &DMatrix<f64>, clean_rows: &[usize]) -> Result<f64> {
    if clean_rows.is_empty() {
        return Err(Error::Empty("no clean rows for the MSE".into()));
    }
    if pred.shape() != baseline.shape() {
        return Err(Error::DimensionMismatch { expected: baseline.len(), found: pred.len() });
    }
    let d = pred.ncols();
    let ss: f64 = clean_rows
        .iter()
        .map(|&i| (0..d).map(|j| (pred[(i, j)] - baseline[(i, j)]).powi(2)).sum::<f64>())
        .sum();
    Ok(ss / (clean_rows.len() * d) as f64)
}

/// One contaminated data set together with its clean counterpart.
#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub clean: DMatrix<f64>,
    pub contaminated: IncompleteMatrix,
    pub clean_rows: Vec<usize>,
    pub outlying_cells: Vec<(usize, usize)>,
}

/// SplitMix64 of `seed ^ stream`, for independent derived seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate replication `rep`: rowwise outliers, then missing cells, then
/// cellwise outliers among the remaining observed cells. The random draws
/// do not depend on `gamma`.
pub fn simulate(config: &SimulationConfig, sigma: &DMatrix<f64>, rep: u64) -> Result<SimulatedData> {
    let base = derive_seed(config.seed, rep);
    let stream = |s: u64| ChaCha8Rng::seed_from_u64(derive_seed(base, s));
    let clean = generate_clean(config.n, sigma, &mut stream(1))?;
    let (rowwise, clean_rows) = inject_rowwise(&clean, config.eps_row, config.gamma, sigma, config.k, &mut stream(2))?;
    let x = IncompleteMatrix::from_dmatrix(&rowwise)?;
    let x = inject_missing(&x, &clean, config.epsilon_missing, config.missing_mechanism, &mut stream(3))?;
    let diag: Vec<f64> = sigma.diagonal().iter().copied().collect();
    let (contaminated, outlying_cells) = inject_cellwise(&x, config.eps_cell, config.gamma, &diag, &mut stream(4))?;
    Ok(SimulatedData { clean, contaminated, clean_rows, outlying_cells })
}

/// Fitted values of classical PCA with `k` components on the clean rows.
pub fn baseline_predictions(clean: &DMatrix<f64>, clean_rows: &[usize], k: usize) -> Result<DMatrix<f64>> {
    let sub = linalg::select_rows(clean, clean_rows);
    let pca = linalg::classical_pca(&sub)?;
    let p = pca.loadings_k(k);
    let fitted = linalg::fitted(&linalg::scores(clean, &pca.center, &p), &pca.center, &p);
    Ok(fitted)
}

/// Fit one method with rank `k` and return its fitted values.
pub fn method_predictions(method: Method, x: &IncompleteMatrix, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    match method {
        Method::Icpca => {
            let p = MacroPcaParams::default();
            Ok(icpca_fit(x, k, p.max_iter, p.angle_tol)?.predictions)
        }
        Method::MacroPca => {
            let params = MacroPcaParams { k: Some(k), k_max: k.max(10), seed, ..Default::default() };
            Ok(macropca_fit(x, &params)?.imputed_predictions)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    Gamma,
    EpsMissing,
}

/// A curve to compute: the base configuration varied along one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub name: String,
    pub base: SimulationConfig,
    pub axis: GridAxis,
    pub grid: Vec<f64>,
    pub methods: Vec<Method>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    pub name: String,
    pub axis: GridAxis,
    pub grid: Vec<f64>,
    pub methods: Vec<Method>,
    /// `mean[m][g]`: mean MSE of method `m` at grid point `g`.
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    /// Successful replications per method and grid point.
    pub reps: Vec<Vec<usize>>,
}

impl MseCurve {
    pub fn mean_of(&self, method: Method) -> Option<&[f64]> {
        self.methods.iter().position(|&m| m == method).map(|i| self.mean[i].as_slice())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "gamma_or_eps,method,mean_mse,se_mse,reps")?;
        for (g, &value) in self.grid.iter().enumerate() {
            for (m, method) in self.methods.iter().enumerate() {
                let name = match method {
                    Method::MacroPca => "macropca",
                    Method::Icpca => "icpca",
                };
                writeln!(
                    w,
                    "{},{name},{},{},{}",
                    format_number(value),
                    format_number(self.mean[m][g]),
                    format_number(self.se[m][g]),
                    self.reps[m][g]
                )?;
            }
        }
        Ok(())
    }
}

impl StudySpec {
    pub fn config_at(&self, value: f64) -> SimulationConfig {
        let mut c = self.base.clone();
        match self.axis {
            GridAxis::Gamma => c.gamma = value,
            GridAxis::EpsMissing => c.epsilon_missing = value,
        }
        c
    }
}

/// Run every replication at every grid point. Replication `r` uses the same
/// derived seed at every grid point.
pub fn run_study(spec: &StudySpec) -> Result<MseCurve> {
    for &v in &spec.grid {
        spec.config_at(v).validate()?;
    }
    let sigma = make_sigma(&spec.base)?;
    let reps = spec.base.replications;
    let jobs: Vec<(usize, usize)> = (0..spec.grid.len()).flat_map(|g| (0..reps).map(move |r| (g, r))).collect();
    let results: Vec<Result<Vec<Option<f64>>>> = par::map_slice(&jobs, |&(g, r)| {
        let config = spec.config_at(spec.grid[g]);
        let data = simulate(&config, &sigma, r as u64)?;
        let base = baseline_predictions(&data.clean, &data.clean_rows, config.k)?;
        let fit_seed = derive_seed(derive_seed(config.seed, r as u64), 5);
        Ok(spec
            .methods
            .iter()
            .map(|&m| {
                method_predictions(m, &data.contaminated, config.k, fit_seed)
                    .and_then(|p| mse_vs_baseline(&p, &base, &data.clean_rows))
                    .ok()
            })
            .collect())
    });
    let nm = spec.methods.len();
    let ng = spec.grid.len();
    let mut samples = vec![vec![Vec::new(); ng]; nm];
    for (&(g, _), res) in jobs.iter().zip(results) {
        for (m, v) in res?.into_iter().enumerate() {
            if let Some(v) = v {
                samples[m][g].push(v);
            }
        }
    }
    let stat = |v: &Vec<f64>| {
        if v.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        (mean, se)
    };
    let mut mean = vec![vec![0.0; ng]; nm];
    let mut se = vec![vec![0.0; ng]; nm];
    let mut counts = vec![vec![0; ng]; nm];
    for m in 0..nm {
        for g in 0..ng {
            let (a, b) = stat(&samples[m][g]);
            mean[m][g] = a;
            se[m][g] = b;
            counts[m][g] = samples[m][g].len();
        }
    }
    Ok(MseCurve {
        name: spec.name.clone(),
        axis: spec.axis,
        grid: spec.grid.clone(),
        methods: spec.methods.clone(),
        mean,
        se,
        reps: counts,
    })
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 9] =
    ["setting1", "setting2", "setting3", "setting4", "mar1", "mar2", "mar3", "mar4", "dposs_like"];

/// Standard study configurations. `setting1`..`setting4` use MCAR
/// missingness, `mar1`..`mar4` the same designs with MAR missingness.
pub fn preset(name: &str, n: usize, d: usize, replications: usize, seed: u64) -> Result<StudySpec> {
    let base = SimulationConfig { n, d, replications, seed, ..Default::default() };
    let methods = vec![Method::Icpca, Method::MacroPca];
    let (design, mechanism) = match name {
        "setting1" | "setting2" | "setting3" | "setting4" => (&name[7..], MissingMechanism::Mcar),
        "mar1" | "mar2" | "mar3" | "mar4" => (&name[3..], MissingMechanism::Mar),
        "dposs_like" => {
            let base = SimulationConfig { d: 21, epsilon_missing: 0.5, eps_cell: 0.05, eps_row: 0.05, ..base };
            return Ok(StudySpec {
                name: name.into(),
                base,
                axis: GridAxis::Gamma,
                grid: vec![0.0, 5.0, 10.0, 20.0],
                methods,
            });
        }
        other => return Err(Error::InvalidParameter(format!("unknown preset '{other}'"))),
    };
    let base = SimulationConfig { missing_mechanism: mechanism, ..base };
    let (base, axis, grid) = match design {
        "1" => (base, GridAxis::EpsMissing, vec![0.05, 0.10, 0.15, 0.20, 0.25, 0.30]),
        "2" => (
            SimulationConfig { epsilon_missing: 0.2, eps_cell: 0.2, ..base },
            GridAxis::Gamma,
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0],
        ),
        "3" => (
            SimulationConfig { epsilon_missing: 0.2, eps_row: 0.2, ..base },
            GridAxis::Gamma,
            vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0],
        ),
        _ => (
            SimulationConfig { epsilon_missing: 0.2, eps_cell: 0.1, eps_row: 0.1, ..base },
            GridAxis::Gamma,
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0],
        ),
    };
    Ok(StudySpec { name: name.into(), base, axis, grid, methods })
}

/// Manifest entry describing one computed curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub spec: StudySpec,
    pub csv: String,
    pub replication_seeds: Vec<u64>,
}

pub fn manifest_entry(spec: &StudySpec, csv: &str) -> ManifestEntry {
    let seeds = (0..spec.base.replications as u64).map(|r| derive_seed(spec.base.seed, r)).collect();
    ManifestEntry { spec: spec.clone(), csv: csv.to_string(), replication_seeds: seeds }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn a09_entries_and_definiteness() {
        let r = a09_correlation(6);
        assert!((r[(0, 2)] - 0.81).abs() < 1e-15);
        assert!((r[(0, 1)] + 0.9).abs() < 1e-15);
        assert!((0..6).all(|i| r[(i, i)] == 1.0));
        assert!(r.clone().cholesky().is_some());
        assert!(a09_correlation(200).cholesky().is_some());
    }

    #[test]
    fn default_eigenvalues_share() {
        let l = default_eigenvalues(200);
        assert_eq!(l.len(), 200);
        assert!((l[6] - 0.098).abs() < 1e-12 && (l[199] - 0.0015).abs() < 1e-12);
        assert!((l[7] - 0.0975).abs() < 1e-12);
        let share = l[..6].iter().sum::<f64>() / l.iter().sum::<f64>();
        assert_eq!((share * 1000.0).floor() / 10.0, 91.5, "{share}");
    }

    #[test]
    fn sigma_has_requested_spectrum() {
        for family in [Family::A09, Family::Alyz] {
            let config = SimulationConfig { d: 20, family, ..SimulationConfig::default() };
            let sigma = make_sigma(&config).unwrap();
            let (_, eig) = sorted_eigen(&sigma);
            for (a, b) in eig.iter().zip(config.eigenvalues()) {
                assert!((a - b).abs() < 1e-9, "{family:?}");
            }
            assert!((&sigma - sigma.transpose()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn clean_draws_are_reproducible_and_centered() {
        let sigma = make_sigma(&SimulationConfig { d: 10, ..SimulationConfig::default() }).unwrap();
        let a = generate_clean(10_000, &sigma, &mut rng(3)).unwrap();
        assert_eq!(a, generate_clean(10_000, &sigma, &mut rng(3)).unwrap());
        let mean = a.row_mean();
        for j in 0..10 {
            assert!(mean[j].abs() < 4.0 * sigma[(j, j)].sqrt() / 100.0);
        }
        let centered = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / 9_999.0;
        let gap = (cov - &sigma).singular_values().max();
        assert!(gap < 0.1 * sigma.singular_values().max());
    }

    #[test]
    fn mar_example_and_mcar_count() {
        let values = DMatrix::from_row_slice(1, 3, &[0.0, 5.0, 0.0]);
        let x = IncompleteMatrix::from_dmatrix(&values).unwrap();
        let out = inject_missing(&x, &values, 0.34, MissingMechanism::Mar, &mut rng(0)).unwrap();
        assert!(!out.is_observed(0, 0));
        assert!(out.is_observed(0, 1) && out.is_observed(0, 2));

        let values = DMatrix::from_fn(100, 200, |i, j| (i * j) as f64);
        let x = IncompleteMatrix::from_dmatrix(&values).unwrap();
        let out = inject_missing(&x, &values, 0.2, MissingMechanism::Mcar, &mut rng(1)).unwrap();
        let masked = (0..100).flat_map(|i| (0..200).map(move |j| (i, j))).filter(|&(i, j)| !out.is_observed(i, j)).count();
        assert_eq!(masked, 4000);
        let same = inject_missing(&x, &values, 0.0, MissingMechanism::Mcar, &mut rng(1)).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn cellwise_values_and_disjointness() {
        let values = DMatrix::from_element(10, 4, 1.0);
        let x = IncompleteMatrix::from_dmatrix(&values).unwrap();
        let x = inject_missing(&x, &values, 0.5, MissingMechanism::Mcar, &mut rng(2)).unwrap();
        let diag = [4.0, 1.0, 9.0, 16.0];
        let (out, cells) = inject_cellwise(&x, 0.5, 20.0, &diag, &mut rng(5)).unwrap();
        assert_eq!(cells.len(), 20);
        for &(i, j) in &cells {
            assert!(x.is_observed(i, j));
            assert_eq!(out.get(i, j), Some(20.0 * diag[j].sqrt()));
        }
        let (zeroed, cells) = inject_cellwise(&x, 0.1, 0.0, &diag, &mut rng(5)).unwrap();
        assert!(cells.iter().all(|&(i, j)| zeroed.get(i, j) == Some(0.0)));
        assert!(inject_cellwise(&x, 0.6, 1.0, &diag, &mut rng(5)).is_err());
        assert_eq!(inject_cellwise(&x, 0.0, 3.0, &diag, &mut rng(5)).unwrap().0, x);
    }

    #[test]
    fn rowwise_shift_along_next_eigenvector() {
        let config = SimulationConfig { d: 10, ..SimulationConfig::default() };
        let sigma = make_sigma(&config).unwrap();
        let clean = DMatrix::zeros(2000, 10);
        let (out, c) = inject_rowwise(&clean, 0.5, 7.0, &sigma, 6, &mut rng(9)).unwrap();
        assert_eq!(c.len(), 1000);
        let (p, _) = sorted_eigen(&sigma);
        let v = p.column(6);
        let replaced: Vec<usize> = (0..2000).filter(|i| c.binary_search(i).is_err()).collect();
        let along = replaced.iter().map(|&i| out.row(i).dot(&v.transpose())).sum::<f64>() / 1000.0;
        assert!((along - 7.0).abs() < 4.0 * 0.098f64.sqrt() / 1000f64.sqrt() + 1e-9, "{along}");
        let (_, all) = inject_rowwise(&clean, 0.0, 7.0, &sigma, 6, &mut rng(9)).unwrap();
        assert_eq!(all.len(), 2000);
        assert!(inject_rowwise(&clean, 0.1, 1.0, &sigma, 10, &mut rng(9)).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = DMatrix::from_fn(5, 3, |i, j| (i + j) as f64);
        assert_eq!(mse_vs_baseline(&a, &a, &[0, 1, 2]).unwrap(), 0.0);
        let b = a.add_scalar(0.5);
        assert!((mse_vs_baseline(&b, &a, &[4, 0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse_vs_baseline(&b, &a, &[]).is_err());
    }

    #[test]
    fn setting2_gamma_zero_is_clean_with_zero_cells() {
        let spec = preset("setting2", 30, 12, 1, 4).unwrap();
        let config = spec.config_at(0.0);
        let sigma = make_sigma(&config).unwrap();
        let data = simulate(&config, &sigma, 0).unwrap();
        for i in 0..30 {
            for j in 0..12 {
                if let Some(v) = data.contaminated.get(i, j) {
                    let expect = if data.outlying_cells.binary_search(&(i, j)).is_ok() { 0.0 } else { data.clean[(i, j)] };
                    assert_eq!(v, expect);
                }
            }
        }
    }

    #[test]
    fn study_is_deterministic() {
        let mut spec = preset("setting1", 30, 12, 1, 8).unwrap();
        spec.base.k = 2;
        spec.grid = vec![0.1];
        let a = run_study(&spec).unwrap();
        let b = run_study(&spec).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!(a.mean.iter().flatten().all(|&m| m >= 0.0));
        let mut csv = Vec::new();
        a.write_csv_to(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("gamma_or_eps,method,mean_mse,se_mse,reps\n"));
    }
}
