//! Distribution quantiles and cutoffs used throughout the fit.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Quantile of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_quantile(df: f64, p: f64) -> f64 {
    ChiSquared::new(df)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// CDF of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_cdf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(df)
        .expect("positive degrees of freedom")
        .cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Cellwise cutoff `sqrt(chi2_{1,p})`; about 2.576 at `p = 0.99`.
pub fn cell_cutoff(p: f64) -> f64 {
    chi2_quantile(1.0, p).sqrt()
}

/// Score-distance cutoff `sqrt(chi2_{k,0.99})`.
pub fn score_distance_cutoff(k: usize) -> f64 {
    chi2_quantile(k as f64, 0.99).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_two_df_has_closed_form() {
        // chi2_2 is exponential with mean 2: q(p) = -2 ln(1 - p).
        for &p in &[0.5, 0.9, 0.975, 0.99] {
            let exact = -2.0 * (1.0f64 - p).ln();
            assert!((chi2_quantile(2.0, p) - exact).abs() < 1e-9, "p={p}");
        }
        assert!((score_distance_cutoff(2) - 3.034_854_258_770_293).abs() < 1e-9);
    }

    #[test]
    fn cell_cutoff_matches_normal_quantile() {
        let z = normal_quantile(0.995);
        assert!((cell_cutoff(0.99) - z).abs() < 1e-9);
        assert!((cell_cutoff(0.99) - 2.5758).abs() < 1e-4);
    }

    #[test]
    fn chi2_one_cdf_is_two_sided_normal() {
        let x: f64 = 1.7;
        let via_normal = 2.0 * normal_cdf(x.sqrt()) - 1.0;
        let diff = (chi2_cdf(1.0, x) - via_normal).abs();
        assert!(diff < 1e-9, "{diff}");
    }
}
