use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::reml::{reml_fit, VarianceEstimate};
use crate::dist::quantile_sorted;
use crate::error::{Error, Result};
use crate::intervals::{check_alpha, Diagnostics, IntervalReport, Method};
use crate::model::{
    prediction_constants, sufficient_stats, Dataset, PredictionTarget, Structure, TargetKind,
};
use crate::rng::{child_seed, substream};

/// Resamples whose refit fails beyond this fraction abort the bootstrap.
pub const MAX_FAILURE_RATE: f64 = 0.1;

/// Refit REML on a response simulated from `fit`; returns (BY-centre, fit).
fn refit(
    dataset: &Dataset,
    structure: &Structure,
    target: &PredictionTarget,
    beta: &nalgebra::DVector<f64>,
    fit: &VarianceEstimate,
    rng: &mut impl Rng,
) -> Result<(f64, VarianceEstimate)> {
    let y = dataset
        .design()
        .simulate_response(beta, fit.sigma_alpha2, fit.sigma_eps2, rng);
    let ds = dataset.with_response(y)?;
    let stats = sufficient_stats(&ds, structure)?;
    Ok((stats.center(target), reml_fit(&stats)?))
}

fn check_failures(failures: usize, total: usize) -> Result<()> {
    if failures as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::Estimation(format!(
            "{failures} of {total} bootstrap refits failed"
        )));
    }
    Ok(())
}

/// Sorted bootstrap draws of the target; cut at any level without
/// resampling again.
#[derive(Debug, Clone)]
pub struct BootstrapDraws {
    pub method: Method,
    pub kind: TargetKind,
    draws: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl BootstrapDraws {
    fn new(
        method: Method,
        kind: TargetKind,
        mut draws: Vec<f64>,
        diagnostics: Diagnostics,
    ) -> Self {
        draws.sort_by(|a, b| a.total_cmp(b));
        Self {
            method,
            kind,
            draws,
            diagnostics,
        }
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// Equal-tailed percentile interval.
    pub fn interval(&self, alpha: f64) -> Result<IntervalReport> {
        check_alpha(alpha)?;
        let lower = quantile_sorted(&self.draws, alpha / 2.0);
        let upper = quantile_sorted(&self.draws, 1.0 - alpha / 2.0);
        Ok(
            IntervalReport::new(self.method, self.kind, 1.0 - alpha, lower, upper)
                .with_diagnostics(self.diagnostics.clone()),
        )
    }
}

/// Parametric bootstrap percentile interval.
///
/// Each resample draws a response from the fitted model, refits REML, and
/// records θᵇ = xᵀBYᵇ + zᵇ·√(c1σ̂_α²ᵇ + c2σ̂_ε²ᵇ) with zᵇ standard normal.
/// Resamples run in parallel on independent streams derived from `rng`.
pub fn parametric_bootstrap_interval<R: Rng + ?Sized>(
    dataset: &Dataset,
    structure: &Structure,
    target: &PredictionTarget,
    fit: &VarianceEstimate,
    resamples: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<IntervalReport> {
    check_alpha(alpha)?;
    parametric_bootstrap_draws(dataset, structure, target, fit, resamples, rng)?.interval(alpha)
}

/// The resampled targets behind [`parametric_bootstrap_interval`].
pub fn parametric_bootstrap_draws<R: Rng + ?Sized>(
    dataset: &Dataset,
    structure: &Structure,
    target: &PredictionTarget,
    fit: &VarianceEstimate,
    resamples: usize,
    rng: &mut R,
) -> Result<BootstrapDraws> {
    if resamples < 2 {
        return Err(Error::Usage("bootstrap needs at least 2 resamples".into()));
    }
    let consts = prediction_constants(structure, target)?;
    let beta = structure.b() * dataset.y();
    let seed = child_seed(rng);
    let results: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut r = substream(seed, b as u64);
            let (center, f) = refit(dataset, structure, target, &beta, fit, &mut r).ok()?;
            let z: f64 = r.sample(StandardNormal);
            Some(center + z * consts.variance(f.sigma_alpha2, f.sigma_eps2).sqrt())
        })
        .collect();
    let draws: Vec<f64> = results.iter().flatten().copied().collect();
    let failures = resamples - draws.len();
    check_failures(failures, resamples)?;
    Ok(BootstrapDraws::new(
        Method::ParametricBootstrap,
        target.kind,
        draws,
        Diagnostics {
            bootstrap_b: Some(resamples),
            failures: Some(failures),
            boundary: Some(fit.boundary),
            ..Diagnostics::default()
        },
    ))
}

/// Stratified nonparametric bootstrap percentile interval.
///
/// Every resample draws each group's observations with replacement within
/// the group. For a group mean the pooled draws are the resampled group
/// means; for a new observation they are one resampled response per group.
pub fn nonparametric_bootstrap_interval<R: Rng + ?Sized>(
    dataset: &Dataset,
    kind: TargetKind,
    resamples: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<IntervalReport> {
    check_alpha(alpha)?;
    nonparametric_bootstrap_draws(dataset, kind, resamples, rng)?.interval(alpha)
}

/// The pooled resampled values behind [`nonparametric_bootstrap_interval`].
pub fn nonparametric_bootstrap_draws<R: Rng + ?Sized>(
    dataset: &Dataset,
    kind: TargetKind,
    resamples: usize,
    rng: &mut R,
) -> Result<BootstrapDraws> {
    if !dataset.design().is_random_intercept() {
        return Err(Error::Usage(
            "the nonparametric bootstrap needs a random-intercept dataset".into(),
        ));
    }
    if resamples < 2 {
        return Err(Error::Usage("bootstrap needs at least 2 resamples".into()));
    }
    let groups = dataset.grouped_responses();
    let mut diag = Diagnostics {
        bootstrap_b: Some(resamples),
        ..Diagnostics::default()
    };
    let singletons = groups.iter().filter(|g| g.len() == 1).count();
    if singletons > 0 {
        diag.warnings.push(format!(
            "{singletons} group(s) of size 1 resample a single point"
        ));
    }
    let seed = child_seed(rng);
    let draws: Vec<f64> = (0..resamples)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut r = substream(seed, b as u64);
            groups
                .iter()
                .map(|g| match kind {
                    TargetKind::GroupMean => {
                        (0..g.len())
                            .map(|_| g[r.random_range(0..g.len())])
                            .sum::<f64>()
                            / g.len() as f64
                    }
                    TargetKind::NewObservation => g[r.random_range(0..g.len())],
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(BootstrapDraws::new(
        Method::NonparametricBootstrap,
        kind,
        draws,
        diag,
    ))
}

/// Parametric-bootstrap standard error of η̂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaSe {
    pub se: f64,
    pub failures: usize,
    /// Fraction of successful refits with η̂ = 0.
    pub boundary_fraction: f64,
}

/// Standard deviation of η̂ over `resamples` refits from the REML fit.
pub fn bootstrap_se_eta<R: Rng + ?Sized>(
    dataset: &Dataset,
    structure: &Structure,
    fit: &VarianceEstimate,
    resamples: usize,
    rng: &mut R,
) -> Result<EtaSe> {
    if resamples < 2 {
        return Err(Error::Usage("bootstrap needs at least 2 resamples".into()));
    }
    let beta = structure.b() * dataset.y();
    let target = PredictionTarget::new(
        nalgebra::DVector::zeros(beta.len()),
        nalgebra::DVector::zeros(dataset.design().a_dim()),
        TargetKind::GroupMean,
    );
    let seed = child_seed(rng);
    let etas: Vec<f64> = (0..resamples)
        .into_par_iter()
        .filter_map(|b| {
            let mut r = substream(seed, b as u64);
            refit(dataset, structure, &target, &beta, fit, &mut r)
                .ok()
                .map(|(_, f)| f.eta_hat)
        })
        .collect();
    let failures = resamples - etas.len();
    check_failures(failures, resamples)?;
    let n = etas.len() as f64;
    let boundary_fraction = etas.iter().filter(|&&e| e == 0.0).count() as f64 / n;
    if boundary_fraction == 1.0 {
        return Ok(EtaSe {
            se: 0.0,
            failures,
            boundary_fraction,
        });
    }
    let mean = etas.iter().sum::<f64>() / n;
    let var = etas.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(EtaSe {
        se: var.sqrt(),
        failures,
        boundary_fraction,
    })
}
