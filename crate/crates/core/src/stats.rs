//! Distribution helpers shared by the evaluation code.

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal, StudentsT};

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_sf(x: f64) -> f64 {
    Normal::standard().sf(x)
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

fn students_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom must be positive")
}

pub fn t_cdf(t: f64, df: f64) -> f64 {
    students_t(df).cdf(t)
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    (2.0 * students_t(df).sf(t.abs())).min(1.0)
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    students_t(df).inverse_cdf(p)
}

/// CDF of the noncentral t distribution.
///
/// `T = (Z + ncp) / sqrt(V / df)` with `V ~ chi2(df)`, so
/// `P(T <= t) = E_V[Phi(t * sqrt(V / df) - ncp)]`. The expectation is
/// integrated over `u = sqrt(V)` with composite Simpson, which keeps the
/// integrand smooth at the origin for small `df`.
pub fn noncentral_t_cdf(t: f64, df: f64, ncp: f64) -> f64 {
    let chi = ChiSquared::new(df).expect("degrees of freedom must be positive");
    let lo = if df > 4.0 { chi.inverse_cdf(1e-16).sqrt() } else { 0.0 };
    let hi = chi.inverse_cdf(1.0 - 1e-15).max(df + 60.0).sqrt();
    let n = 4000; // even
    let h = (hi - lo) / n as f64;
    let f = |u: f64| {
        let dens = if u > 0.0 { chi.pdf(u * u) * 2.0 * u } else { 0.0 };
        dens * normal_cdf(t * u / df.sqrt() - ncp)
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    (acc * h / 3.0).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_values() {
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-10);
        assert!((normal_two_sided_p(0.0) - 1.0).abs() < 1e-15);
        // t(4) two-sided 5% critical value
        assert!((t_quantile(0.975, 4.0) - 2.776445105).abs() < 1e-8);
        assert!((t_cdf(0.0, 7.0) - 0.5).abs() < 1e-15);
        assert!((t_two_sided_p(2.228138852, 10.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn noncentral_reduces_to_central() {
        for &(t, df) in &[(-2.0, 3.0), (0.5, 10.0), (1.7, 78.0), (3.0, 2.0)] {
            assert!((noncentral_t_cdf(t, df, 0.0) - t_cdf(t, df)).abs() < 1e-9, "{t} {df}");
        }
    }

    #[test]
    fn noncentral_known_value() {
        // P(T <= 2 | df=10, ncp=1) reference value from scipy.stats.nct
        let v = noncentral_t_cdf(2.0, 10.0, 1.0);
        assert!((v - 0.807_611_562_5).abs() < 1e-9, "{v}");
    }
}
