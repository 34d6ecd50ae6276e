//! REML estimation and the comparison intervals: oracle, Student-t, two
//! Satterthwaite variants, parametric and nonparametric bootstraps, and
//! the iid-normal interval.

mod bootstrap;
mod reml;

pub use bootstrap::{
    bootstrap_se_eta, nonparametric_bootstrap_draws, nonparametric_bootstrap_interval,
    parametric_bootstrap_draws, parametric_bootstrap_interval, BootstrapDraws, EtaSe,
    MAX_FAILURE_RATE,
};
pub use reml::{profile_loglik, profile_sigma_eps2, reml_fit, reml_loglik, VarianceEstimate};

use nalgebra::Matrix2;

use crate::dist::{normal_quantile, t_quantile};
use crate::error::{Error, Result};
use crate::intervals::{check_alpha, Diagnostics, IntervalReport, Method};
use crate::model::{PredictionConstants, SuffStats, TargetKind};

/// Everything the closed-form intervals need about one dataset and target.
#[derive(Debug, Clone, Copy)]
pub struct PredictionSetup<'a> {
    pub stats: &'a SuffStats,
    pub consts: PredictionConstants,
    /// xᵀBy.
    pub center: f64,
    pub n_groups: usize,
    pub kind: TargetKind,
}

/// Oracle, Student-t, Satterthwaite and generalized Satterthwaite intervals.
///
/// `truth` is the (σ_α², σ_ε²) pair and is required for the oracle only.
/// `fit` is reused when given, otherwise REML is run on the statistics.
/// A boundary fit (σ̂_α² = 0) is used as is and flagged.
pub fn closed_form_interval(
    method: Method,
    setup: &PredictionSetup<'_>,
    truth: Option<(f64, f64)>,
    fit: Option<&VarianceEstimate>,
    alpha: f64,
) -> Result<IntervalReport> {
    check_alpha(alpha)?;
    let consts = setup.consts;
    if method == Method::Oracle {
        let (sa, se) = truth.ok_or_else(|| {
            Error::Usage("the oracle interval needs the true variance components".into())
        })?;
        let half = normal_quantile(1.0 - alpha / 2.0) * consts.variance(sa, se).sqrt();
        return Ok(symmetric(
            method,
            setup,
            alpha,
            half,
            Diagnostics::default(),
        ));
    }

    let owned;
    let fit = match fit {
        Some(f) => f,
        None => {
            owned = reml_fit(setup.stats)?;
            &owned
        }
    };
    let (sa, se) = (fit.sigma_alpha2, fit.sigma_eps2);
    let var = consts.variance(sa, se);
    let mut diag = Diagnostics {
        boundary: Some(fit.boundary),
        eta: Some(fit.eta_hat),
        ..Diagnostics::default()
    };

    let half = match method {
        Method::StudentT => {
            if setup.n_groups < 3 {
                return Err(Error::Usage(format!(
                    "the Student-t interval needs at least 3 groups, got {}",
                    setup.n_groups
                )));
            }
            let df = (setup.n_groups - 2) as f64;
            diag.df = Some(df);
            t_quantile(1.0 - alpha / 2.0, df) * var.sqrt()
        }
        Method::Satterthwaite => {
            let st = setup.stats;
            let (mut m1, mut m2) = (0.0, 0.0);
            for (&l, &r) in st.lambdas().iter().zip(st.mults()) {
                let d = l * sa + se;
                m1 += r as f64 * d;
                m2 += r as f64 * d * d;
            }
            let df = m1 * m1 / m2;
            diag.df = Some(df);
            let total: f64 = st.s().iter().sum();
            t_quantile(1.0 - alpha / 2.0, df) * var.sqrt() * (total / m1).sqrt()
        }
        Method::GenSatterthwaite => {
            let (df, expected) = gen_satterthwaite_df(setup.stats, consts, fit);
            if expected {
                diag.warnings.push(
                    "observed information not positive definite; used expected information".into(),
                );
            }
            diag.df = Some(df);
            t_quantile(1.0 - alpha / 2.0, df) * var.sqrt()
        }
        other => {
            return Err(Error::Usage(format!(
                "{other} is not a closed-form baseline"
            )));
        }
    };
    Ok(symmetric(method, setup, alpha, half, diag))
}

fn symmetric(
    method: Method,
    setup: &PredictionSetup<'_>,
    alpha: f64,
    half: f64,
    diag: Diagnostics,
) -> IntervalReport {
    IntervalReport::new(
        method,
        setup.kind,
        1.0 - alpha,
        setup.center - half,
        setup.center + half,
    )
    .with_diagnostics(diag)
}

/// τ = 2(c1σ̂_α² + c2σ̂_ε²)²/V̂, V̂ the delta-method variance of
/// c1σ̂_α² + c2σ̂_ε² from the inverse information of the REML likelihood.
///
/// A boundary fit (σ̂_α² = 0) treats σ_α² as fixed, so only σ̂_ε² carries
/// sampling variance. Returns τ and whether the expected information had to
/// replace the observed one.
pub fn gen_satterthwaite_df(
    stats: &SuffStats,
    consts: PredictionConstants,
    fit: &VarianceEstimate,
) -> (f64, bool) {
    let (sa, se) = (fit.sigma_alpha2, fit.sigma_eps2);
    let mut observed = Matrix2::zeros();
    let mut expected = Matrix2::zeros();
    for ((&s, &l), &r) in stats.s().iter().zip(stats.lambdas()).zip(stats.mults()) {
        let d = l * sa + se;
        let outer = Matrix2::new(l * l, l, l, 1.0);
        let r = r as f64;
        // −∂²/∂d² of −½[r log d + S/d].
        observed += outer * (s / (d * d * d) - 0.5 * r / (d * d));
        expected += outer * (0.5 * r / (d * d));
    }
    let var = consts.variance(sa, se);
    let delta_var = |info: &Matrix2<f64>| -> Option<f64> {
        let v = if fit.boundary {
            consts.c2 * consts.c2 / info[(1, 1)]
        } else {
            let g = nalgebra::Vector2::new(consts.c1, consts.c2);
            g.dot(&info.cholesky()?.solve(&g))
        };
        (v > 0.0 && v.is_finite()).then_some(v)
    };
    match delta_var(&observed) {
        Some(v) => (2.0 * var * var / v, false),
        None => {
            let v = delta_var(&expected).unwrap_or(f64::INFINITY);
            (2.0 * var * var / v, true)
        }
    }
}

/// Classical iid-normal prediction interval ȳ ± t_{n−1}·s·√(1 + 1/n).
pub fn iid_normal_interval(y: &[f64], alpha: f64) -> Result<IntervalReport> {
    check_alpha(alpha)?;
    let n = y.len();
    if n < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let s2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let half = t_quantile(1.0 - alpha / 2.0, nf - 1.0) * (s2 * (1.0 + 1.0 / nf)).sqrt();
    Ok(IntervalReport::new(
        Method::IidNormal,
        TargetKind::NewObservation,
        1.0 - alpha,
        mean - half,
        mean + half,
    )
    .with_diagnostics(Diagnostics {
        df: Some(nf - 1.0),
        ..Diagnostics::default()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generalized::t_tail_contour;
    use crate::intervals::{alpha_cut, FnContour, LevelMode};
    use nalgebra::DVector;

    fn design_a_stats(s1: f64, s2: f64) -> SuffStats {
        SuffStats::from_parts(DVector::zeros(1), vec![s1, s2], vec![6.0, 0.0], vec![4, 25]).unwrap()
    }

    fn setup(stats: &SuffStats) -> PredictionSetup<'_> {
        PredictionSetup {
            stats,
            consts: PredictionConstants {
                c1: 1.2,
                c2: 1.0 / 30.0,
            },
            center: 0.0,
            n_groups: 5,
            kind: TargetKind::GroupMean,
        }
    }

    #[test]
    fn oracle_design_a() {
        let st = design_a_stats(28.0, 25.0);
        let r = closed_form_interval(Method::Oracle, &setup(&st), Some((1.0, 1.0)), None, 0.05)
            .unwrap();
        assert!((r.upper - 2.176_649).abs() < 1e-5);
        assert!((r.lower + 2.176_649).abs() < 1e-5);
    }

    #[test]
    fn oracle_needs_truth() {
        let st = design_a_stats(28.0, 25.0);
        assert!(matches!(
            closed_form_interval(Method::Oracle, &setup(&st), None, None, 0.05),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn student_t_design_a() {
        // S₁ = 4·(6 + 1), S₂ = 25 gives REML (1, 1).
        let st = design_a_stats(28.0, 25.0);
        let fit = reml_fit(&st).unwrap();
        assert!((fit.sigma_alpha2 - 1.0).abs() < 1e-10);
        assert!((fit.sigma_eps2 - 1.0).abs() < 1e-10);
        let r =
            closed_form_interval(Method::StudentT, &setup(&st), None, Some(&fit), 0.05).unwrap();
        assert!((r.upper - 3.534_283).abs() < 1e-5);
        assert_eq!(r.diagnostics.df, Some(3.0));
    }

    #[test]
    fn satterthwaite_collapses_at_boundary() {
        let st = design_a_stats(2.0, 25.0);
        let fit = reml_fit(&st).unwrap();
        assert!(fit.boundary);
        let r = closed_form_interval(Method::Satterthwaite, &setup(&st), None, Some(&fit), 0.05)
            .unwrap();
        assert!((r.diagnostics.df.unwrap() - 29.0).abs() < 1e-10);
        assert_eq!(r.diagnostics.boundary, Some(true));
    }

    #[test]
    fn gen_satterthwaite_is_finite_and_positive() {
        let st = design_a_stats(28.0, 25.0);
        let r =
            closed_form_interval(Method::GenSatterthwaite, &setup(&st), None, None, 0.05).unwrap();
        let df = r.diagnostics.df.unwrap();
        assert!(df > 0.0 && df.is_finite());
        // Balanced case: c1σ̂_α² dominates, so τ tracks the 4 between-group df.
        assert!(df > 2.0 && df < 6.0, "{df}");
    }

    #[test]
    fn gen_satterthwaite_at_boundary_uses_residual_df() {
        // σ̂_α² = 0: V̂ = c2²·2σ̂_ε⁴/Σr, so τ = Σr = 29.
        let st = design_a_stats(2.0, 25.0);
        let fit = reml_fit(&st).unwrap();
        assert!(fit.boundary);
        let (df, expected) = gen_satterthwaite_df(&st, setup(&st).consts, &fit);
        assert!(!expected);
        assert!((df - 29.0).abs() < 1e-8, "{df}");
    }

    #[test]
    fn iid_examples() {
        let r = iid_normal_interval(&[-1.0, 1.0], 0.05).unwrap();
        assert!((r.upper - 22.007_792_2).abs() < 1e-6);
        let r = iid_normal_interval(&[0.0, 0.0], 0.05).unwrap();
        assert_eq!((r.lower, r.upper), (0.0, 0.0));
        assert!(matches!(
            iid_normal_interval(&[1.0], 0.05),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn iid_matches_contour_cut() {
        let y = [0.3, -1.2, 2.5, 0.9, 1.1, -0.4];
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let s2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let scale = (s2 * (1.0 + 1.0 / n)).sqrt();
        let c = FnContour {
            f: move |t: f64| t_tail_contour((t - mean) / scale, n - 1.0),
            center: mean,
            scale,
        };
        for alpha in [0.01, 0.05, 0.2] {
            let cut = alpha_cut(&c, alpha, LevelMode::Nominal).unwrap();
            let r = iid_normal_interval(&y, alpha).unwrap();
            assert!((cut.lower - r.lower).abs() < 1e-10);
            assert!((cut.upper - r.upper).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let st = design_a_stats(40.0, 20.0);
        let base = setup(&st);
        let scaled = st.scaled(2.0);
        let moved = PredictionSetup {
            stats: &scaled,
            center: 2.0 * base.center + 5.0,
            ..base
        };
        for m in [
            Method::StudentT,
            Method::Satterthwaite,
            Method::GenSatterthwaite,
        ] {
            let a = closed_form_interval(m, &base, None, None, 0.05).unwrap();
            let b = closed_form_interval(m, &moved, None, None, 0.05).unwrap();
            assert!((b.lower - (2.0 * a.lower + 5.0)).abs() < 1e-7, "{m}");
            assert!((b.upper - (2.0 * a.upper + 5.0)).abs() < 1e-7, "{m}");
        }
    }
}
