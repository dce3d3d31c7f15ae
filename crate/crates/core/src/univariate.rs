//! Scalar robust estimators: 1-step M-estimators of location and scale,
//! the univariate MCD, a robust correlation and a robust no-intercept slope.
//!
//! All functions skip `NaN` entries (pairwise for the bivariate ones).

use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};

/// Gaussian consistency factor of the MAD.
pub const MAD_CONSISTENCY: f64 = 1.482_602_218_505_602;

/// Biweight tuning for the location step (95% Gaussian efficiency).
pub const LOCATION_TUNING: f64 = 4.685;

/// Biweight tuning for the scale step (50% breakdown M-scale).
pub const SCALE_TUNING: f64 = 1.547_645;

/// A location/scale pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocScale {
    pub location: f64,
    pub scale: f64,
}

/// An estimate that may have fallen back to a default because the input
/// was insufficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkedValue {
    pub value: f64,
    /// Set when the estimate is a fallback (too few usable observations).
    pub insufficient: bool,
}

impl MarkedValue {
    fn ok(value: f64) -> Self {
        Self { value, insufficient: false }
    }

    fn fallback(value: f64) -> Self {
        Self { value, insufficient: true }
    }
}

fn finite(x: &[f64]) -> Vec<f64> {
    x.iter().copied().filter(|v| v.is_finite()).collect()
}

/// Median of a slice (reorders it). Returns `NaN` for empty input.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median of the finite entries.
pub fn median(x: &[f64]) -> f64 {
    median_in_place(&mut finite(x))
}

/// Consistency-scaled median absolute value around zero.
pub fn mad_centered(x: &[f64]) -> f64 {
    let mut abs: Vec<f64> = x.iter().filter(|v| v.is_finite()).map(|v| v.abs()).collect();
    MAD_CONSISTENCY * median_in_place(&mut abs)
}

#[inline]
fn biweight_weight(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        t * t
    }
}

/// Normalized biweight rho (maximum 1).
#[inline]
fn biweight_rho(u: f64, c: f64) -> f64 {
    let r = u / c;
    if r.abs() >= 1.0 {
        1.0
    } else {
        let t = 1.0 - r * r;
        1.0 - t * t * t
    }
}

/// `E[rho_c(Z)]` for standard normal `Z`, from truncated normal moments.
fn biweight_rho_expectation(c: f64) -> f64 {
    let phi = (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let m0 = 2.0 * dist::normal_cdf(c) - 1.0;
    let m2 = m0 - 2.0 * c * phi;
    let m4 = 3.0 * m2 - 2.0 * c.powi(3) * phi;
    let m6 = 5.0 * m4 - 2.0 * c.powi(5) * phi;
    let c2 = c * c;
    let inside = m0 - 3.0 * m2 / c2 + 3.0 * m4 / (c2 * c2) - m6 / (c2 * c2 * c2);
    1.0 - inside
}

/// 1-step biweight M-estimate of location starting from the median with
/// MAD scale. Equals the median when the MAD is zero.
pub fn rob_loc(x: &[f64]) -> f64 {
    let obs = finite(x);
    if obs.is_empty() {
        return f64::NAN;
    }
    let med = median_in_place(&mut obs.clone());
    let centered: Vec<f64> = obs.iter().map(|v| v - med).collect();
    let s0 = mad_centered(&centered);
    if !(s0 > 0.0) {
        return med;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &r in &centered {
        let w = biweight_weight(r / (LOCATION_TUNING * s0));
        num += w * r;
        den += w;
    }
    med + num / den
}

/// 1-step M-estimate of scale around zero, starting from the MAD.
///
/// The input is assumed to be centered already; zero is returned when
/// more than half of the values are exactly zero.
pub fn rob_scale_centered(x: &[f64]) -> f64 {
    let obs = finite(x);
    if obs.is_empty() {
        return f64::NAN;
    }
    let s0 = mad_centered(&obs);
    if !(s0 > 0.0) {
        return 0.0;
    }
    let delta = biweight_rho_expectation(SCALE_TUNING);
    let mean_rho = obs.iter().map(|&v| biweight_rho(v / s0, SCALE_TUNING)).sum::<f64>() / obs.len() as f64;
    s0 * (mean_rho / delta).sqrt()
}

/// Robust location and scale of the observed entries of `x`.
pub fn rob_loc_scale(x: &[f64]) -> Result<LocScale> {
    let obs = finite(x);
    if obs.is_empty() {
        return Err(Error::Empty("no observed values".into()));
    }
    let location = rob_loc(&obs);
    let centered: Vec<f64> = obs.iter().map(|v| v - location).collect();
    Ok(LocScale { location, scale: rob_scale_centered(&centered) })
}

/// Result of the univariate MCD.
#[derive(Clone, Debug, PartialEq)]
pub struct UniMcd {
    /// Mean of the selected subset.
    pub location: f64,
    /// Consistency-corrected standard deviation of the subset.
    pub scale: f64,
    /// Uncorrected `sqrt(SS/h)` of the subset.
    pub raw_sd: f64,
    /// Indices (into the input, counting `NaN`s) of the selected subset, sorted.
    pub subset: Vec<usize>,
}

impl UniMcd {
    pub fn loc_scale(&self) -> LocScale {
        LocScale { location: self.location, scale: self.scale }
    }
}

/// Gaussian consistency factor of a raw MCD variance for coverage `h/n` in
/// dimension `k`: `(h/n) / P(chi2_{k+2} <= chi2_{k,h/n})`.
pub fn mcd_consistency(h: usize, n: usize, k: usize) -> f64 {
    if h >= n {
        return 1.0;
    }
    let alpha = h as f64 / n as f64;
    let q = dist::chi2_quantile(k as f64, alpha);
    alpha / dist::chi2_cdf(k as f64 + 2.0, q)
}

/// Univariate MCD: mean and corrected standard deviation of the `h`
/// observed values with the smallest variance.
///
/// The optimal subset is a contiguous window of the sorted data; ties
/// between windows go to the leftmost one.
pub fn unimcd(x: &[f64], h: usize) -> Result<UniMcd> {
    let mut idx: Vec<usize> = (0..x.len()).filter(|&i| x[i].is_finite()).collect();
    let n = idx.len();
    if h == 0 || h > n {
        return Err(Error::InvalidParameter(format!("unimcd coverage h={h} outside 1..={n}")));
    }
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    // Center on the median before accumulating to limit cancellation.
    let shift = sorted[n / 2];
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (t, &v) in sorted.iter().enumerate() {
        let c = v - shift;
        s1[t + 1] = s1[t] + c;
        s2[t + 1] = s2[t] + c * c;
    }
    let hf = h as f64;
    let mut best = 0;
    let mut best_ss = f64::INFINITY;
    for w in 0..=(n - h) {
        let sum = s1[w + h] - s1[w];
        let ss = (s2[w + h] - s2[w]) - sum * sum / hf;
        if ss < best_ss {
            best_ss = ss;
            best = w;
        }
    }
    let window = &sorted[best..best + h];
    let location = window.iter().sum::<f64>() / hf;
    let ss: f64 = window.iter().map(|v| (v - location).powi(2)).sum();
    let raw_sd = (ss / hf).sqrt();
    let scale = (mcd_consistency(h, n, 1) * ss / hf).sqrt();
    let mut subset = idx[best..best + h].to_vec();
    subset.sort_unstable();
    Ok(UniMcd { location, scale, raw_sd, subset })
}

fn pairs(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    x.iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a, b))
        .unzip()
}

/// Robust correlation of the pairwise-complete observations.
///
/// Each variable is robustly standardized and the correlation follows from
/// the robust variances of the sum and difference. Returns 0 with the
/// `insufficient` marker for fewer than 3 pairs or a zero scale.
pub fn rob_corr(x: &[f64], y: &[f64]) -> MarkedValue {
    let (a, b) = pairs(x, y);
    if a.len() < 3 {
        return MarkedValue::fallback(0.0);
    }
    let (Ok(la), Ok(lb)) = (rob_loc_scale(&a), rob_loc_scale(&b)) else {
        return MarkedValue::fallback(0.0);
    };
    if !(la.scale > 0.0 && lb.scale > 0.0) {
        return MarkedValue::fallback(0.0);
    }
    let u: Vec<f64> = a.iter().map(|v| (v - la.location) / la.scale).collect();
    let v: Vec<f64> = b.iter().map(|v| (v - lb.location) / lb.scale).collect();
    let sum: Vec<f64> = u.iter().zip(&v).map(|(p, q)| p + q).collect();
    let diff: Vec<f64> = u.iter().zip(&v).map(|(p, q)| p - q).collect();
    let sp = rob_loc_scale(&sum).map(|l| l.scale).unwrap_or(0.0).powi(2);
    let sm = rob_loc_scale(&diff).map(|l| l.scale).unwrap_or(0.0).powi(2);
    if !(sp + sm > 0.0) {
        return MarkedValue::fallback(0.0);
    }
    MarkedValue::ok(((sp - sm) / (sp + sm)).clamp(-1.0, 1.0))
}

/// Robust slope of the no-intercept regression of `y` on `x`.
///
/// Starts from the median of the ratios `y/x` (pairs with `|x|` below its
/// 10% quantile are skipped) and refines with one biweight-weighted least
/// squares step on the residuals.
pub fn rob_slope(y: &[f64], x: &[f64]) -> MarkedValue {
    let (xs, ys) = pairs(x, y);
    if xs.is_empty() {
        return MarkedValue::fallback(0.0);
    }
    let mut absx: Vec<f64> = xs.iter().map(|v| v.abs()).collect();
    absx.sort_by(f64::total_cmp);
    let threshold = absx[(absx.len() - 1) / 10];
    let mut ratios: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .filter(|(a, _)| a.abs() > 0.0 && a.abs() >= threshold)
        .map(|(a, b)| b / a)
        .collect();
    if ratios.is_empty() {
        return MarkedValue::fallback(0.0);
    }
    let b0 = median_in_place(&mut ratios);
    let resid: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| b - b0 * a).collect();
    let s = mad_centered(&resid);
    if !(s > 0.0) {
        return MarkedValue::ok(b0);
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((a, b), r) in xs.iter().zip(&ys).zip(&resid) {
        let w = biweight_weight(r / (LOCATION_TUNING * s));
        sxy += w * a * b;
        sxx += w * a * a;
    }
    if sxx > 0.0 {
        MarkedValue::ok(sxy / sxx)
    } else {
        MarkedValue::ok(b0)
    }
}
