use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::{sample_aux, ChainDiagnostics, SamplerConfig};
use super::{null_basis, v_scale, AuxDensity, LocalConditioner};
use crate::error::{Error, Result};
use crate::intervals::{alpha_cut, Contour, IntervalReport, LevelMode, Method};
use crate::model::{PredictionConstants, SuffStats, TargetKind};
use crate::rng::{child_seed, substream};

/// ρ grid and sampler settings for the marginal contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub rho_grid: Vec<f64>,
    pub sampler: SamplerConfig,
}

impl JointConfig {
    /// 100 equally spaced ρ in [0.001, 0.999] and 5000 draws per ρ.
    pub fn full() -> Self {
        Self {
            rho_grid: Self::equally_spaced(100),
            sampler: SamplerConfig::default(),
        }
    }

    /// 50 ρ values and 2000 draws: the cheaper setting for large studies.
    pub fn thinned() -> Self {
        Self {
            rho_grid: Self::equally_spaced(50),
            sampler: SamplerConfig {
                draws: 2000,
                ..SamplerConfig::default()
            },
        }
    }

    pub fn equally_spaced(points: usize) -> Vec<f64> {
        let (lo, hi) = (0.001, 0.999);
        if points == 1 {
            return vec![0.5];
        }
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect()
    }
}

impl Default for JointConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Sorted Monte Carlo log-densities at one ρ, plus what is needed to place
/// an observed (u, v) among them.
#[derive(Debug, Clone)]
pub struct RhoSlice {
    rho: f64,
    u_obs: f64,
    v_scale: f64,
    density: AuxDensity,
    sorted: Vec<f64>,
    diagnostics: ChainDiagnostics,
}

impl RhoSlice {
    pub fn build<R: Rng + ?Sized>(
        rho: f64,
        stats: &SuffStats,
        consts: PredictionConstants,
        m0: &DMatrix<f64>,
        sampler: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let cond = LocalConditioner::with_basis(rho, stats, m0)?;
        let density = AuxDensity::new(&cond, stats.mults());
        let draws = sample_aux(&density, sampler, rng)?;
        let mut sorted = draws.log_density;
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            rho,
            u_obs: cond.u_obs(),
            v_scale: v_scale(stats, consts, rho),
            density,
            sorted,
            diagnostics: draws.diagnostics,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn diagnostics(&self) -> &ChainDiagnostics {
        &self.diagnostics
    }

    /// Fraction of draws whose density does not exceed that of the
    /// observed (u, v).
    pub fn plausibility_at_v(&self, v: f64) -> f64 {
        let f = self.density.log_density(self.u_obs, v);
        self.sorted.partition_point(|&x| x <= f) as f64 / self.sorted.len() as f64
    }

    /// π(ϑ, ρ) for ϑ measured from the centre xᵀBy.
    pub fn plausibility(&self, offset: f64) -> f64 {
        self.plausibility_at_v(offset * self.v_scale)
    }
}

/// Per-ρ sampler diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct JointDiagnostics {
    pub rho: Vec<f64>,
    pub acceptance_rate: Vec<f64>,
    pub ess: Vec<f64>,
    pub tuning_failures: Vec<f64>,
}

/// π_J(ϑ) = max_j π(ϑ, ρ_j).
#[derive(Debug, Clone)]
pub struct JointContour {
    center: f64,
    kind: TargetKind,
    slices: Vec<RhoSlice>,
}

impl JointContour {
    pub fn slices(&self) -> &[RhoSlice] {
        &self.slices
    }

    /// Plausibility and the grid ρ attaining it (the smallest on ties).
    pub fn evaluate(&self, theta: f64) -> (f64, f64) {
        let offset = theta - self.center;
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        for s in &self.slices {
            let p = s.plausibility(offset);
            if p > best.0 {
                best = (p, s.rho);
            }
        }
        best
    }

    pub fn diagnostics(&self) -> JointDiagnostics {
        JointDiagnostics {
            rho: self.slices.iter().map(|s| s.rho).collect(),
            acceptance_rate: self
                .slices
                .iter()
                .map(|s| s.diagnostics.acceptance_rate)
                .collect(),
            ess: self.slices.iter().map(|s| s.diagnostics.ess).collect(),
            tuning_failures: self
                .slices
                .iter()
                .filter(|s| s.diagnostics.tuning_failure)
                .map(|s| s.rho)
                .collect(),
        }
    }
}

impl Contour for JointContour {
    fn plausibility(&self, theta: f64) -> f64 {
        self.evaluate(theta).0
    }

    fn center(&self) -> f64 {
        self.center
    }

    fn scale(&self) -> f64 {
        let inv: f64 = self.slices.iter().map(|s| 1.0 / s.v_scale).sum();
        inv / self.slices.len() as f64
    }

    fn method(&self) -> Method {
        Method::JointIm
    }

    fn kind(&self) -> TargetKind {
        self.kind
    }

    fn argmax_rho(&self, theta: f64) -> Option<f64> {
        Some(self.evaluate(theta).1)
    }
}

/// Build the marginal contour: one chain per grid ρ, run in parallel on
/// streams keyed by the ρ value so nested grids share draws.
pub fn marginal_contour<R: Rng + ?Sized>(
    stats: &SuffStats,
    consts: PredictionConstants,
    center: f64,
    kind: TargetKind,
    config: &JointConfig,
    rng: &mut R,
) -> Result<JointContour> {
    if config.rho_grid.is_empty() {
        return Err(Error::Domain("rho grid is empty".into()));
    }
    let m0 = null_basis(stats.lambdas());
    let seed = child_seed(rng);
    let slices = config
        .rho_grid
        .par_iter()
        .map(|&rho| {
            let mut r = substream(seed, rho.to_bits());
            RhoSlice::build(rho, stats, consts, &m0, &config.sampler, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JointContour {
        center,
        kind,
        slices,
    })
}

/// π(ϑ, ρ₀) from a fresh chain at ρ₀.
pub fn joint_plausibility<R: Rng + ?Sized>(
    theta: f64,
    rho0: f64,
    stats: &SuffStats,
    consts: PredictionConstants,
    center: f64,
    sampler: &SamplerConfig,
    rng: &mut R,
) -> Result<f64> {
    let m0 = null_basis(stats.lambdas());
    let slice = RhoSlice::build(rho0, stats, consts, &m0, sampler, rng)?;
    Ok(slice.plausibility(theta - center))
}

/// α-cut of the joint contour; the adjusted variant cuts at 2α.
pub fn joint_interval(
    contour: &JointContour,
    alpha: f64,
    adjusted: bool,
) -> Result<IntervalReport> {
    let mode = if adjusted {
        LevelMode::JointAdjusted
    } else {
        LevelMode::Nominal
    };
    let mut report = alpha_cut(contour, alpha, mode)?;
    if adjusted {
        report.method = Method::AdjJointIm;
    }
    let failures = contour.diagnostics().tuning_failures.len();
    if failures > 0 {
        report.diagnostics.warnings.push(format!(
            "sampler tuning failed at {failures} grid value(s) of rho"
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::SeedableRng;

    fn stats() -> SuffStats {
        SuffStats::from_parts(
            DVector::zeros(1),
            vec![12.0, 3.0, 5.0, 30.0],
            vec![9.15959179, 5.24040821, 4.0, 0.0],
            vec![1, 1, 2, 25],
        )
        .unwrap()
    }

    const CONSTS: PredictionConstants = PredictionConstants { c1: 1.3, c2: 0.04 };

    fn small_config(points: usize) -> JointConfig {
        JointConfig {
            rho_grid: JointConfig::equally_spaced(points),
            sampler: SamplerConfig {
                draws: 1000,
                burn_in: 500,
                target_acceptance: 0.3,
            },
        }
    }

    #[test]
    fn grid_defaults() {
        let g = JointConfig::full().rho_grid;
        assert_eq!(g.len(), 100);
        assert!((g[0] - 0.001).abs() < 1e-15 && (g[99] - 0.999).abs() < 1e-15);
        assert_eq!(JointConfig::thinned().rho_grid.len(), 50);
    }

    #[test]
    fn contour_peaks_at_center_and_decays() {
        let st = stats();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = marginal_contour(
            &st,
            CONSTS,
            1.5,
            TargetKind::GroupMean,
            &small_config(10),
            &mut rng,
        )
        .unwrap();
        let top = c.plausibility(1.5);
        for d in [0.1, 0.5, 1.0, 3.0, 10.0] {
            assert!(c.plausibility(1.5 + d) <= top);
            assert!(c.plausibility(1.5 - d) <= top);
        }
        assert!(c.plausibility(1e6) < 1e-3);
        // Each ρ slice is non-increasing in |ϑ − centre|.
        for s in c.slices() {
            let mut prev = 1.0;
            for i in 0..100 {
                let p = s.plausibility(i as f64 * 0.1);
                assert!(p <= prev && (0.0..=1.0).contains(&p));
                prev = p;
            }
        }
    }

    #[test]
    fn nested_grid_never_lowers_contour() {
        let st = stats();
        let coarse = small_config(5);
        let fine = JointConfig {
            rho_grid: {
                let mut g = coarse.rho_grid.clone();
                g.extend(JointConfig::equally_spaced(9));
                g
            },
            ..coarse.clone()
        };
        let build = |cfg: &JointConfig| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            marginal_contour(&st, CONSTS, 0.0, TargetKind::GroupMean, cfg, &mut rng).unwrap()
        };
        let (a, b) = (build(&coarse), build(&fine));
        for i in -40..=40 {
            let t = i as f64 * 0.1;
            assert!(b.plausibility(t) >= a.plausibility(t));
        }
    }

    #[test]
    fn empty_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let cfg = JointConfig {
            rho_grid: vec![],
            ..small_config(1)
        };
        assert!(matches!(
            marginal_contour(&stats(), CONSTS, 0.0, TargetKind::GroupMean, &cfg, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn adjusted_interval_is_shorter() {
        let st = stats();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let c = marginal_contour(
            &st,
            CONSTS,
            0.0,
            TargetKind::GroupMean,
            &small_config(10),
            &mut rng,
        )
        .unwrap();
        let full = joint_interval(&c, 0.05, false).unwrap();
        let adj = joint_interval(&c, 0.05, true).unwrap();
        assert_eq!(full.method, Method::JointIm);
        assert_eq!(adj.method, Method::AdjJointIm);
        assert!(adj.length() <= full.length());
        assert!(full.contains(0.0));
        let d = c.diagnostics();
        assert_eq!(d.rho.len(), 10);
    }

    #[test]
    fn single_point_plausibility_bounds() {
        let st = stats();
        let cfg = SamplerConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let p = joint_plausibility(0.0, 0.5, &st, CONSTS, 0.0, &cfg, &mut rng).unwrap();
        assert!((0.0..=1.0).contains(&p));
        let far = joint_plausibility(1e8, 0.5, &st, CONSTS, 0.0, &cfg, &mut rng).unwrap();
        assert_eq!(far, 0.0);
    }
}
