//! Thin wrappers over `statrs` for the Student-t and normal distributions,
//! plus the empirical quantile rule shared by the bootstrap methods.

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

fn standard_t(nu: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, nu).expect("degrees of freedom must be positive")
}

/// Student-t CDF with `nu` degrees of freedom.
pub fn t_cdf(t: f64, nu: f64) -> f64 {
    standard_t(nu).cdf(t)
}

/// Upper tail `P(T > t)`, computed without cancellation for large `t`.
pub fn t_sf(t: f64, nu: f64) -> f64 {
    standard_t(nu).sf(t)
}

/// Student-t quantile.
///
/// The incomplete-beta inversion in `statrs` is polished with Newton steps so
/// the quantile/CDF round trip holds to near machine precision.
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must lie in (0, 1)");
    let dist = standard_t(nu);
    let mut x = dist.inverse_cdf(p);
    for _ in 0..4 {
        let pdf = dist.pdf(x);
        if pdf <= 0.0 || !pdf.is_finite() {
            break;
        }
        let step = if p > 0.5 {
            (dist.sf(x) - (1.0 - p)) / pdf
        } else {
            (p - dist.cdf(x)) / pdf
        };
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Empirical quantile with linear interpolation between order statistics
/// (R type 7). `sorted` must be sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
