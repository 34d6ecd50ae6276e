use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::AuxDensity;
use crate::error::{Error, Result};
use crate::generalized::golden_max;

/// Adaptive random-walk Metropolis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    /// Retained draws (no thinning).
    pub draws: usize,
    /// Adaptation steps, discarded.
    pub burn_in: usize,
    pub target_acceptance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            draws: 5000,
            burn_in: 1000,
            target_acceptance: 0.3,
        }
    }
}

pub const MIN_DRAWS: usize = 1000;
const ACCEPTANCE_BAND: (f64, f64) = (0.1, 0.6);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    /// min of the u and v effective sample sizes.
    pub ess: f64,
    /// Acceptance after adaptation fell outside [0.1, 0.6].
    pub tuning_failure: bool,
}

/// Equally weighted draws of (u, v) with their log-densities.
#[derive(Debug, Clone)]
pub struct AuxDraws {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub log_density: Vec<f64>,
    pub diagnostics: ChainDiagnostics,
}

/// Draw from the auxiliary density by random-walk Metropolis.
///
/// The chain starts at the mode of f(·, 0) (concave in u) with a diagonal
/// proposal from the local curvature. During burn-in the proposal
/// covariance is re-estimated from the chain every 200 steps and its scale
/// follows a Robbins–Monro recursion toward the target acceptance; both are
/// then frozen.
pub fn sample_aux<R: Rng + ?Sized>(
    density: &AuxDensity,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<AuxDraws> {
    if config.draws < MIN_DRAWS {
        return Err(Error::Domain(format!(
            "at least {MIN_DRAWS} draws are required, got {}",
            config.draws
        )));
    }
    let f = |x: &Vector2<f64>| density.log_density(x[0], x[1]);

    let (u0, _) = golden_max(|u| density.log_density(u, 0.0), -200.0, 200.0, 1e-8);
    let mut x = Vector2::new(u0, 0.0);
    let mut fx = f(&x);
    let h = 1e-3;
    let curv = |dx: Vector2<f64>| -(f(&(x + dx)) - 2.0 * fx + f(&(x - dx))) / (h * h);
    let var_u = 1.0 / curv(Vector2::new(h, 0.0)).max(1e-6);
    let var_v = 1.0 / curv(Vector2::new(0.0, h)).max(1e-6);
    let mut chol = Matrix2::new(var_u.sqrt(), 0.0, 0.0, var_v.sqrt());
    let mut log_scale = (2.38f64 * 2.38 / 2.0).ln() * 0.5;

    let step =
        |x: &mut Vector2<f64>, fx: &mut f64, chol: &Matrix2<f64>, scale: f64, rng: &mut R| {
            let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let prop = *x + chol * z * scale;
            let fp = f(&prop);
            let accept = fp >= *fx || rng.random::<f64>().ln() < fp - *fx;
            if accept {
                *x = prop;
                *fx = fp;
            }
            accept
        };

    // Burn-in with adaptation.
    let window = 200;
    let mut mean = Vector2::zeros();
    let mut m2 = Matrix2::zeros();
    let mut count = 0.0;
    let mut since = 0usize;
    for t in 0..config.burn_in {
        let accepted = step(&mut x, &mut fx, &chol, log_scale.exp(), rng);
        since += 1;
        let gamma = 1.0 / (since as f64).sqrt();
        log_scale += gamma * ((accepted as u8 as f64) - config.target_acceptance);
        count += 1.0;
        let delta = x - mean;
        mean += delta / count;
        m2 += delta * (x - mean).transpose();
        // Covariance updates stop halfway so the scale can settle.
        if (t + 1) % window == 0 && 2 * (t + 1) <= config.burn_in && count > 10.0 {
            let est = m2 / (count - 1.0);
            if let Some(c) = (est + Matrix2::identity() * 1e-10 * est.trace()).cholesky() {
                if est[(0, 0)] > 0.0 && est[(1, 1)] > 0.0 {
                    chol = c.l();
                    log_scale = (2.38f64 * 2.38 / 2.0).ln() * 0.5;
                    since = 0;
                }
            }
            mean = Vector2::zeros();
            m2 = Matrix2::zeros();
            count = 0.0;
        }
    }
    let scale = log_scale.exp();
    let n = config.draws;
    let (mut us, mut vs, mut fs) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut accepted = 0usize;
    for _ in 0..n {
        accepted += step(&mut x, &mut fx, &chol, scale, rng) as usize;
        us.push(x[0]);
        vs.push(x[1]);
        fs.push(fx);
    }
    let acceptance_rate = accepted as f64 / n as f64;
    let ess = effective_sample_size(&us).min(effective_sample_size(&vs));
    Ok(AuxDraws {
        u: us,
        v: vs,
        log_density: fs,
        diagnostics: ChainDiagnostics {
            acceptance_rate,
            ess,
            tuning_failure: !(ACCEPTANCE_BAND.0..=ACCEPTANCE_BAND.1).contains(&acceptance_rate),
        },
    })
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        c[..n - lag]
            .iter()
            .zip(&c[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    // τ = 1 + 2Σ ρ_k, truncated at the first non-positive pair.
    let tau = (1.0 + 2.0 * sum).max(1.0);
    n as f64 / tau
}
