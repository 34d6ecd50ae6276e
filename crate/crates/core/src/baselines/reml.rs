use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SuffStats;

/// REML estimates of the variance components in three parametrizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub sigma_alpha2: f64,
    pub sigma_eps2: f64,
    /// σ_α²/σ_ε².
    pub eta_hat: f64,
    /// σ_α²/(σ_α² + σ_ε²).
    pub rho_hat: f64,
    pub converged: bool,
    /// σ̂_α² = 0.
    pub boundary: bool,
}

impl VarianceEstimate {
    pub fn from_ratio(eta: f64, sigma_eps2: f64) -> Self {
        Self {
            sigma_alpha2: eta * sigma_eps2,
            sigma_eps2,
            eta_hat: eta,
            rho_hat: eta / (1.0 + eta),
            converged: true,
            boundary: eta == 0.0,
        }
    }
}

/// REML log-likelihood up to a constant:
/// −½ Σ_ℓ [r_ℓ log d_ℓ + S_ℓ/d_ℓ], d_ℓ = λ_ℓσ_α² + σ_ε².
pub fn reml_loglik(stats: &SuffStats, sigma_alpha2: f64, sigma_eps2: f64) -> f64 {
    let mut acc = 0.0;
    for ((&s, &l), &r) in stats.s().iter().zip(stats.lambdas()).zip(stats.mults()) {
        let d = l * sigma_alpha2 + sigma_eps2;
        acc += r as f64 * d.ln() + s / d;
    }
    -0.5 * acc
}

/// σ̂_ε²(η) = Σ S_ℓ/(λ_ℓη + 1) / Σ r_ℓ.
pub fn profile_sigma_eps2(stats: &SuffStats, eta: f64) -> f64 {
    let num: f64 = stats
        .s()
        .iter()
        .zip(stats.lambdas())
        .map(|(s, l)| s / (l * eta + 1.0))
        .sum();
    num / stats.residual_df() as f64
}

/// Profile log-likelihood in η (constants dropped).
pub fn profile_loglik(stats: &SuffStats, eta: f64) -> f64 {
    let n = stats.residual_df() as f64;
    let logdet: f64 = stats
        .lambdas()
        .iter()
        .zip(stats.mults())
        .map(|(l, &r)| r as f64 * (l * eta + 1.0).ln())
        .sum();
    -0.5 * (logdet + n * profile_sigma_eps2(stats, eta).ln())
}

fn profile_score(stats: &SuffStats, eta: f64) -> f64 {
    let n = stats.residual_df() as f64;
    let (mut a, mut num, mut den) = (0.0, 0.0, 0.0);
    for ((&s, &l), &r) in stats.s().iter().zip(stats.lambdas()).zip(stats.mults()) {
        let w = 1.0 / (l * eta + 1.0);
        a += r as f64 * l * w;
        num += s * l * w * w;
        den += s * w;
    }
    -0.5 * (a - n * num / den)
}

const GRID: usize = 400;

/// Maximize the REML likelihood over σ_α² ≥ 0, σ_ε² > 0.
///
/// σ_ε² is profiled out in closed form; the score in η is scanned on a
/// log grid over [1e-8, 1e8], every +→− sign change is refined by
/// bisection, and the boundary η = 0 is a candidate whenever the score is
/// non-positive there.
pub fn reml_fit(stats: &SuffStats) -> Result<VarianceEstimate> {
    let grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..=GRID).map(|k| 10f64.powf(-8.0 + 16.0 * k as f64 / GRID as f64)))
        .collect();
    let scores: Vec<f64> = grid.iter().map(|&e| profile_score(stats, e)).collect();

    let mut candidates = Vec::new();
    if scores[0] <= 0.0 {
        candidates.push(0.0);
    }
    for i in 0..grid.len() - 1 {
        if scores[i] > 0.0 && scores[i + 1] <= 0.0 {
            candidates.push(bisect_score(stats, grid[i], grid[i + 1]));
        }
    }
    let best = candidates
        .into_iter()
        .map(|e| (e, profile_loglik(stats, e)))
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1));

    let last = *grid.last().unwrap();
    let rising_at_end = *scores.last().unwrap() > 0.0;
    let (eta, value) = match best {
        Some(b) => b,
        None => {
            return Err(Error::Estimation(format!(
                "REML profile still increasing at eta = {last:e}"
            )))
        }
    };
    if rising_at_end && profile_loglik(stats, 1e16) > value {
        return Err(Error::Estimation(
            "REML supremum lies at sigma_eps2 -> 0".into(),
        ));
    }
    let se2 = profile_sigma_eps2(stats, eta);
    if !(se2 > 0.0 && se2.is_finite()) {
        return Err(Error::Estimation(format!(
            "invalid sigma_eps2 estimate {se2}"
        )));
    }
    Ok(VarianceEstimate::from_ratio(eta, se2))
}

fn bisect_score(stats: &SuffStats, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if profile_score(stats, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};

    fn stats(s: Vec<f64>, lambdas: Vec<f64>, mults: Vec<usize>) -> SuffStats {
        SuffStats::from_parts(DVector::zeros(1), s, lambdas, mults).unwrap()
    }

    #[test]
    fn balanced_matches_anova() {
        // MSB = S₁/(I−1), MSW = S₂/(N−I): σ̂_ε² = MSW, σ̂_α² = (MSB − MSW)/n.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut interior = 0;
        for _ in 0..50 {
            let s1 = rng.random_range(1.0..200.0);
            let s2 = rng.random_range(1.0..50.0);
            let st = stats(vec![s1, s2], vec![6.0, 0.0], vec![4, 25]);
            let fit = reml_fit(&st).unwrap();
            let (msb, msw) = (s1 / 4.0, s2 / 25.0);
            if msb > msw {
                interior += 1;
                assert!((fit.sigma_eps2 - msw).abs() < 1e-8 * msw);
                let sa = (msb - msw) / 6.0;
                assert!((fit.sigma_alpha2 - sa).abs() < 1e-8 * sa.max(msw));
            } else {
                assert!(fit.boundary);
                assert_eq!(fit.sigma_alpha2, 0.0);
                assert!((fit.sigma_eps2 - (s1 + s2) / 29.0).abs() < 1e-12);
            }
        }
        assert!(interior > 10);
    }

    #[test]
    fn parametrizations_agree() {
        let st = stats(vec![40.0, 3.0, 9.0], vec![9.0, 4.0, 0.0], vec![1, 3, 25]);
        let f = reml_fit(&st).unwrap();
        assert!((f.eta_hat - f.sigma_alpha2 / f.sigma_eps2).abs() < 1e-12);
        assert!((f.rho_hat - f.sigma_alpha2 / (f.sigma_alpha2 + f.sigma_eps2)).abs() < 1e-12);
        assert!((0.0..1.0).contains(&f.rho_hat));
    }

    #[test]
    fn scale_equivariance() {
        let st = stats(vec![40.0, 3.0, 9.0], vec![9.0, 4.0, 0.0], vec![1, 3, 25]);
        let f = reml_fit(&st).unwrap();
        let g = reml_fit(&st.scaled(3.0)).unwrap();
        assert!((g.sigma_alpha2 - 9.0 * f.sigma_alpha2).abs() < 1e-8 * g.sigma_alpha2);
        assert!((g.sigma_eps2 - 9.0 * f.sigma_eps2).abs() < 1e-8 * g.sigma_eps2);
        assert!((g.eta_hat - f.eta_hat).abs() < 1e-8 * f.eta_hat);
    }

    #[test]
    fn beats_random_interior_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for case in 0..10 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..30.0)).collect();
            let st = stats(s, vec![9.16, 5.24, 4.0, 0.0], vec![1, 1, 2, 25]);
            let f = reml_fit(&st).unwrap();
            let best = reml_loglik(&st, f.sigma_alpha2, f.sigma_eps2);
            for _ in 0..100 {
                let sa = rng.random_range(0.0..(5.0 * f.sigma_alpha2 + 1.0));
                let se = rng.random_range(0.01..(5.0 * f.sigma_eps2));
                assert!(reml_loglik(&st, sa, se) <= best + 1e-10, "case {case}");
            }
        }
    }

    #[test]
    fn profile_matches_full_likelihood() {
        let st = stats(vec![40.0, 3.0, 9.0], vec![9.0, 4.0, 0.0], vec![1, 3, 25]);
        let n = st.residual_df() as f64;
        for eta in [0.0, 0.3, 2.0] {
            let se = profile_sigma_eps2(&st, eta);
            let full = reml_loglik(&st, eta * se, se);
            let expected = profile_loglik(&st, eta) - 0.5 * n;
            assert!((full - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn no_zero_eigenvalue_can_run_away() {
        // Tiny S at the smallest positive λ pushes σ_ε² toward zero.
        let st = stats(vec![1.0, 1e-9], vec![2.0, 1.0], vec![1, 20]);
        assert!(matches!(reml_fit(&st), Err(Error::Estimation(_))));
    }
}
