#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DVector;
use predim::dist::t_cdf;
use predim::generalized::{GenContour, GenMode};
use predim::joint::{
    joint_plausibility, null_basis, sample_aux, v_scale, AuxDensity, LocalConditioner, RhoSlice,
    SamplerConfig,
};
use predim::model::{
    prediction_constants, sufficient_stats, Dataset, Design, PredictionTarget, Structure,
    TargetKind,
};
use predim::rng::substream;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Kolmogorov distance between a sample and a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-14 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample bivariate Kolmogorov-type distance: the largest difference in
/// the four quadrant probabilities over a grid of thresholds taken from the
/// quantiles of the reference sample.
pub fn ks_2d(a: &[(f64, f64)], reference: &[(f64, f64)], grid: usize) -> f64 {
    let thresholds = |pick: fn(&(f64, f64)) -> f64| {
        let mut v: Vec<f64> = reference.iter().map(pick).collect();
        v.sort_by(f64::total_cmp);
        (1..grid)
            .map(|i| v[i * v.len() / grid])
            .collect::<Vec<f64>>()
    };
    let tx = thresholds(|p| p.0);
    let ty = thresholds(|p| p.1);
    let cum = |s: &[(f64, f64)]| {
        let g = tx.len() + 1;
        let mut h = vec![vec![0.0; g]; g];
        for &(x, y) in s {
            let i = tx.partition_point(|&t| t < x);
            let j = ty.partition_point(|&t| t < y);
            h[i][j] += 1.0 / s.len() as f64;
        }
        // c[i][j] = P(X ≤ tx[i], Y ≤ ty[j]) via 2-D prefix sums.
        let mut c = vec![vec![0.0; g]; g];
        for i in 0..g {
            for j in 0..g {
                c[i][j] = h[i][j]
                    + if i > 0 { c[i - 1][j] } else { 0.0 }
                    + if j > 0 { c[i][j - 1] } else { 0.0 }
                    - if i > 0 && j > 0 { c[i - 1][j - 1] } else { 0.0 };
            }
        }
        c
    };
    let (ca, cr) = (cum(a), cum(reference));
    let last = tx.len();
    let mut d: f64 = 0.0;
    for i in 0..last {
        for j in 0..last {
            let quad = |c: &Vec<Vec<f64>>| {
                let both = c[i][j];
                let fx = c[i][last];
                let fy = c[last][j];
                [both, fx - both, fy - both, 1.0 - fx - fy + both]
            };
            let (qa, qr) = (quad(&ca), quad(&cr));
            for k in 0..4 {
                d = d.max((qa[k] - qr[k]).abs());
            }
        }
    }
    d
}

pub const DESIGN_A: &[usize] = &[6; 5];
pub const DESIGN_C: &[usize] = &[4, 4, 4, 6, 12];

pub fn random_intercept(sizes: &[usize]) -> (Arc<Design>, Structure) {
    let d = Design::random_intercept(&Design::balanced_labels(sizes)).unwrap();
    let s = Structure::new(&d).unwrap();
    (Arc::new(d), s)
}

/// Data from the random-intercept model with μ = 0, plus a realized new
/// group mean θ.
pub fn draw(design: &Arc<Design>, sa: f64, se: f64, rng: &mut impl Rng) -> (Dataset, f64) {
    let y = design.simulate_response(&DVector::zeros(1), sa, se, rng);
    let theta = design.draw_effect(sa.sqrt(), rng)[0];
    (Dataset::new(Arc::clone(design), y).unwrap(), theta)
}

/// Direct draws of the L = 2 auxiliary pair:
/// u = log[(V₁/V₂)(r₂/r₁)], v = W·√(r₂/V₂).
pub fn direct_pairs(r1: f64, r2: f64, n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let (c1, c2) = (ChiSquared::new(r1).unwrap(), ChiSquared::new(r2).unwrap());
    (0..n)
        .map(|_| {
            let (v1, v2) = (c1.sample(rng), c2.sample(rng));
            let w: f64 = rng.sample(StandardNormal);
            (((v1 / v2) * (r2 / r1)).ln(), w * (r2 / v2).sqrt())
        })
        .collect()
}

/// Bivariate KS distance between MCMC draws of the L = 2 auxiliary density
/// (design A) and 2×10⁵ direct simulations.
pub fn l2_sampler_distance(seed: u64) -> f64 {
    let (design, structure) = random_intercept(DESIGN_A);
    let (ds, _) = draw(&design, 0.5, 0.5, &mut substream(seed, 0));
    let stats = sufficient_stats(&ds, &structure).unwrap();
    let cond = LocalConditioner::new(0.5, &stats).unwrap();
    let density = AuxDensity::new(&cond, stats.mults());
    let cfg = SamplerConfig {
        draws: 100_000,
        ..SamplerConfig::default()
    };
    let chain = sample_aux(&density, &cfg, &mut substream(seed, 1)).unwrap();
    let mcmc: Vec<(f64, f64)> = chain
        .u
        .iter()
        .copied()
        .zip(chain.v.iter().copied())
        .collect();
    let direct = direct_pairs(4.0, 25.0, 200_000, &mut substream(seed, 2));
    ks_2d(&mcmc, &direct, 64)
}

/// Largest gap over 50 (ϑ, ρ₀) probes between the sampler-based
/// plausibility and the rank of the observed density among direct draws.
pub fn l2_plausibility_gap(seed: u64) -> f64 {
    let (design, structure) = random_intercept(DESIGN_A);
    let (ds, _) = draw(&design, 1.0, 0.5, &mut substream(seed, 0));
    let stats = sufficient_stats(&ds, &structure).unwrap();
    let consts = prediction_constants(
        &structure,
        &PredictionTarget::intercept(TargetKind::GroupMean),
    )
    .unwrap();
    let m0 = null_basis(stats.lambdas());
    let direct = direct_pairs(4.0, 25.0, 200_000, &mut substream(seed, 1));
    let cfg = SamplerConfig {
        draws: 60_000,
        ..SamplerConfig::default()
    };
    let mut worst: f64 = 0.0;
    for probe in 0..50u64 {
        let rho = 0.02 + 0.96 * (probe % 10) as f64 / 9.0;
        let offset = (probe / 10) as f64 * 0.6 - 1.2;
        let mut rng = substream(seed, 100 + probe);
        let slice = RhoSlice::build(rho, &stats, consts, &m0, &cfg, &mut rng).unwrap();
        let sampled = slice.plausibility(offset);

        let cond = LocalConditioner::new(rho, &stats).unwrap();
        let dens = AuxDensity::new(&cond, stats.mults());
        let f_obs = dens.log_density(cond.u_obs(), offset * v_scale(&stats, consts, rho));
        let below = direct
            .iter()
            .filter(|(u, v)| dens.log_density(*u, *v) <= f_obs)
            .count();
        worst = worst.max((sampled - below as f64 / direct.len() as f64).abs());
    }
    worst
}

/// KS p-value of π(θ, ρ) at the true (θ, ρ) over 500 replications.
pub fn uniformity_pvalue(sizes: &[usize], sa: f64, se: f64, seed: u64) -> f64 {
    let (design, structure) = random_intercept(sizes);
    let consts = prediction_constants(
        &structure,
        &PredictionTarget::intercept(TargetKind::GroupMean),
    )
    .unwrap();
    let rho = sa / (sa + se);
    let values: Vec<f64> = (0..500)
        .map(|rep| {
            let mut rng = substream(seed, rep);
            let (ds, theta) = draw(&design, sa, se, &mut rng);
            let stats = sufficient_stats(&ds, &structure).unwrap();
            joint_plausibility(
                theta,
                rho,
                &stats,
                consts,
                ds.mean(),
                &SamplerConfig::default(),
                &mut rng,
            )
            .unwrap()
        })
        .collect();
    ks_pvalue(ks_statistic(&values, |x| x.clamp(0.0, 1.0)), values.len())
}

/// KS distance of t′ at the true variance ratio from t_ν over 2000
/// replications.
pub fn pivot_distance(sizes: &[usize], sa: f64, se: f64, kind: TargetKind, seed: u64) -> f64 {
    let (design, structure) = random_intercept(sizes);
    let consts = prediction_constants(&structure, &PredictionTarget::intercept(kind)).unwrap();
    let mode = GenMode::PlugIn { eta: sa / se };
    let mut nu = 0.0;
    let t: Vec<f64> = (0..2000)
        .map(|rep| {
            let mut rng = substream(seed, rep);
            let (ds, mut theta) = draw(&design, sa, se, &mut rng);
            if kind == TargetKind::NewObservation {
                let e: f64 = rng.sample(StandardNormal);
                theta += se.sqrt() * e;
            }
            let stats = sufficient_stats(&ds, &structure).unwrap();
            let c = GenContour::new(&stats, consts, ds.mean(), mode, kind).unwrap();
            nu = c.nu();
            c.t_prime(theta)
        })
        .collect();
    ks_statistic(&t, |x| t_cdf(x, nu))
}
