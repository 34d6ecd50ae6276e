//! Joint IM for (θ, ρ).
//!
//! For each trial value ρ₀ of the intra-class correlation, the L − 1
//! log-ratio equations for ρ are reduced to a single one by conditioning on
//! the directions orthogonal to their ρ-derivative. Together with the
//! studentized θ equation this gives a 2-D auxiliary pair (u, v) with a
//! known log-density. The joint plausibility of (ϑ, ρ₀) ranks the observed
//! density against Monte Carlo draws, and the marginal contour for θ is its
//! maximum over a ρ grid.

mod contour;
mod sampler;

pub use contour::{
    joint_interval, joint_plausibility, marginal_contour, JointConfig, JointContour,
    JointDiagnostics, RhoSlice,
};
pub use sampler::{effective_sample_size, sample_aux, AuxDraws, ChainDiagnostics, SamplerConfig};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{PredictionConstants, SuffStats};

/// ρ-derivative of the variance ratios (λ_ℓρ + 1 − ρ)/(λ_Lρ + 1 − ρ),
/// ℓ < L: g_ℓ(ρ) = (λ_ℓ − λ_L)/(1 + ρ(λ_L − 1))².
pub fn ratio_gradient(lambdas: &[f64], rho: f64) -> DVector<f64> {
    let l = lambdas.len();
    let last = lambdas[l - 1];
    let denom = (1.0 + rho * (last - 1.0)).powi(2);
    DVector::from_iterator(l - 1, lambdas[..l - 1].iter().map(|x| (x - last) / denom))
}

/// Orthonormal basis of the complement of g in ℝ^{L−1}.
///
/// g(ρ) is proportional to (λ_ℓ − λ_L) for every ρ, so the basis does not
/// depend on ρ and is built once per spectrum.
pub fn null_basis(lambdas: &[f64]) -> DMatrix<f64> {
    let g = ratio_gradient(lambdas, 0.0);
    let k = g.len();
    let unit = g.normalize();
    let proj = DMatrix::identity(k, k) - &unit * unit.transpose();
    let eig = proj.symmetric_eigen();
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.5)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(k, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn variance_ratio(lambda: f64, rho: f64) -> f64 {
    rho * (lambda - 1.0) + 1.0
}

/// Local-conditional association at a fixed ρ₀.
///
/// Holds the observed r-scaled log-ratios T_ℓ = log[(S_ℓ/S_L)(r_L/r_ℓ)] −
/// log[(ρ₀(λ_ℓ−1)+1)/(ρ₀(λ_L−1)+1)], the conditioning value H = TᵀM₀ and
/// the map u ↦ u′ = (u, H)M₀′⁻¹ where M₀′ = [e₁ | M₀]. With u = T₁ the
/// observed u′ is T itself.
#[derive(Debug, Clone)]
pub struct LocalConditioner {
    rho0: f64,
    m0: DMatrix<f64>,
    m0p_inv: DMatrix<f64>,
    h_obs: DVector<f64>,
    t_obs: DVector<f64>,
    condition: f64,
}

impl LocalConditioner {
    pub fn new(rho0: f64, stats: &SuffStats) -> Result<Self> {
        Self::with_basis(rho0, stats, &null_basis(stats.lambdas()))
    }

    /// Reuse a precomputed basis from [`null_basis`].
    pub fn with_basis(rho0: f64, stats: &SuffStats, m0: &DMatrix<f64>) -> Result<Self> {
        if !(rho0 > 0.0 && rho0 < 1.0) {
            return Err(Error::Domain(format!("rho0 = {rho0} is not in (0, 1)")));
        }
        let (s, lambdas, mults) = (stats.s(), stats.lambdas(), stats.mults());
        let l = stats.len();
        if m0.nrows() != l - 1 || m0.ncols() != l - 2 {
            return Err(Error::Dimension(format!(
                "conditioning basis is {}x{}, expected {}x{}",
                m0.nrows(),
                m0.ncols(),
                l - 1,
                l - 2
            )));
        }
        let (s_last, r_last) = (s[l - 1], mults[l - 1] as f64);
        let base = variance_ratio(lambdas[l - 1], rho0);
        let t_obs = DVector::from_fn(l - 1, |i, _| {
            ((s[i] / s_last) * (r_last / mults[i] as f64)).ln()
                - (variance_ratio(lambdas[i], rho0) / base).ln()
        });
        let h_obs = m0.tr_mul(&t_obs);

        let mut m0p = DMatrix::zeros(l - 1, l - 1);
        m0p[(0, 0)] = 1.0;
        m0p.view_mut((0, 1), (l - 1, l - 2)).copy_from(m0);
        let sv = m0p.clone().singular_values();
        let condition = sv.max() / sv.min();
        let m0p_inv = m0p
            .try_inverse()
            .filter(|_| condition.is_finite() && condition < 1e12)
            .ok_or_else(|| Error::Domain("conditioning matrix is singular".into()))?;
        Ok(Self {
            rho0,
            m0: m0.clone(),
            m0p_inv,
            h_obs,
            t_obs,
            condition,
        })
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn m0(&self) -> &DMatrix<f64> {
        &self.m0
    }

    pub fn h_obs(&self) -> &DVector<f64> {
        &self.h_obs
    }

    /// Condition number of M₀′.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Observed u, the first r-scaled log-ratio.
    pub fn u_obs(&self) -> f64 {
        self.t_obs[0]
    }

    /// u′ for a given u: (u, H)M₀′⁻¹, as slope·u + offset.
    pub fn u_prime(&self, u: f64) -> DVector<f64> {
        let (slope, offset) = self.affine();
        slope * u + offset
    }

    fn affine(&self) -> (DVector<f64>, DVector<f64>) {
        let k = self.m0p_inv.nrows();
        let slope = self.m0p_inv.row(0).transpose();
        let offset = if k > 1 {
            self.m0p_inv.rows(1, k - 1).tr_mul(&self.h_obs)
        } else {
            DVector::zeros(k)
        };
        (slope, offset)
    }
}

/// The conditional log-density of (u, v) given the conditioning value:
/// f(u, v) = ½Σ_{ℓ<L} r_ℓu′_ℓ − ½(1 + Σ r_ℓ)·log(½ + v²/(2r_L) +
/// Σ_{ℓ<L} r_ℓe^{u′_ℓ}/(2r_L)), up to an additive constant.
#[derive(Debug, Clone)]
pub struct AuxDensity {
    half_r: Vec<f64>,
    log_weight: Vec<f64>,
    slope: Vec<f64>,
    offset: Vec<f64>,
    inv_2rl: f64,
    exponent: f64,
}

impl AuxDensity {
    pub fn new(cond: &LocalConditioner, mults: &[usize]) -> Self {
        let l = mults.len();
        let r_last = mults[l - 1] as f64;
        let (slope, offset) = cond.affine();
        Self {
            half_r: mults[..l - 1].iter().map(|&r| 0.5 * r as f64).collect(),
            log_weight: mults[..l - 1]
                .iter()
                .map(|&r| (r as f64 / (2.0 * r_last)).ln())
                .collect(),
            slope: slope.iter().copied().collect(),
            offset: offset.iter().copied().collect(),
            inv_2rl: 0.5 / r_last,
            exponent: 0.5 * (1.0 + mults.iter().sum::<usize>() as f64),
        }
    }

    pub fn log_density(&self, u: f64, v: f64) -> f64 {
        // log-sum-exp over ½, v²/(2r_L) and the r_ℓe^{u′_ℓ}/(2r_L) terms.
        let ln_half = -std::f64::consts::LN_2;
        let ln_v = if v == 0.0 {
            f64::NEG_INFINITY
        } else {
            2.0 * v.abs().ln() + self.inv_2rl.ln()
        };
        let mut linear = 0.0;
        let mut max = ln_half.max(ln_v);
        for i in 0..self.half_r.len() {
            let up = self.slope[i] * u + self.offset[i];
            linear += self.half_r[i] * up;
            max = max.max(self.log_weight[i] + up);
        }
        let mut sum = (ln_half - max).exp() + (ln_v - max).exp();
        for i in 0..self.half_r.len() {
            sum += (self.log_weight[i] + self.slope[i] * u + self.offset[i] - max).exp();
        }
        linear - self.exponent * (max + sum.ln())
    }
}

/// Scale mapping ϑ − centre to v at ρ:
/// √(r_L/S_L)·√((ρ(λ_L−1)+1)/(ρ(c1−c2)+c2)).
pub fn v_scale(stats: &SuffStats, consts: PredictionConstants, rho: f64) -> f64 {
    let l = stats.len();
    let r_last = stats.mults()[l - 1] as f64;
    let s_last = stats.s()[l - 1];
    let num = variance_ratio(stats.lambdas()[l - 1], rho);
    let den = rho * (consts.c1 - consts.c2) + consts.c2;
    (r_last / s_last).sqrt() * (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn stats(s: Vec<f64>, lambdas: Vec<f64>, mults: Vec<usize>) -> SuffStats {
        SuffStats::from_parts(DVector::zeros(1), s, lambdas, mults).unwrap()
    }

    #[test]
    fn l2_conditioner_is_trivial() {
        let st = stats(vec![30.0, 20.0], vec![6.0, 0.0], vec![4, 25]);
        let c = LocalConditioner::new(0.3, &st).unwrap();
        assert_eq!(c.m0().ncols(), 0);
        assert_eq!(c.h_obs().len(), 0);
        assert_eq!(c.u_prime(1.7)[0], 1.7);
    }

    #[test]
    fn l3_basis_is_fixed() {
        let m0 = null_basis(&[6.0, 2.0, 0.0]);
        let expected = DVector::from_vec(vec![-2.0, 6.0]) / 40f64.sqrt();
        let col = m0.column(0);
        assert!((col.dot(&expected).abs() - 1.0).abs() < 1e-12);
        for rho in [0.01, 0.2, 0.5, 0.8, 0.99] {
            let g = ratio_gradient(&[6.0, 2.0, 0.0], rho);
            // Central difference of the ratio map confirms the formula.
            let h = 1e-6;
            let ratio = |r: f64, lam: f64| (r * (lam - 1.0) + 1.0) / (1.0 - r);
            for (i, lam) in [6.0, 2.0].iter().enumerate() {
                let fd = (ratio(rho + h, *lam) - ratio(rho - h, *lam)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0));
            }
            assert!(g.tr_mul(&m0).norm() < 1e-10);
        }
    }

    #[test]
    fn basis_orthonormal_for_design_d() {
        let lambdas = [
            16.80311051,
            16.0,
            13.529626,
            11.47580793,
            7.55130537,
            4.60681686,
            4.0,
            0.0,
        ];
        let m0 = null_basis(&lambdas);
        assert_eq!(m0.shape(), (7, 6));
        let eye = m0.tr_mul(&m0);
        assert!((eye - DMatrix::identity(6, 6)).amax() < 1e-12);
        for rho in [0.1, 0.9] {
            assert!(ratio_gradient(&lambdas, rho).tr_mul(&m0).norm() < 1e-10);
        }
    }

    #[test]
    fn observed_u_prime_is_t() {
        let st = stats(
            vec![12.0, 3.0, 5.0, 30.0],
            vec![9.16, 5.24, 4.0, 0.0],
            vec![1, 1, 2, 25],
        );
        let c = LocalConditioner::new(0.4, &st).unwrap();
        let up = c.u_prime(c.u_obs());
        assert!((up - &c.t_obs).norm() < 1e-12);
        assert!(c.condition() >= 1.0);
    }

    #[test]
    fn rho_out_of_range() {
        let st = stats(vec![30.0, 20.0], vec![6.0, 0.0], vec![4, 25]);
        assert!(matches!(
            LocalConditioner::new(0.0, &st),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            LocalConditioner::new(1.0, &st),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn l2_density_value_and_normalization() {
        // S₁/S₂ chosen so that T₁ = 0 at ρ₀ = 0.5 does not matter for L = 2:
        // the density depends on u only.
        let st = stats(vec![30.0, 20.0], vec![6.0, 0.0], vec![4, 25]);
        let c = LocalConditioner::new(0.5, &st).unwrap();
        let d = AuxDensity::new(&c, st.mults());
        assert!((d.log_density(0.0, 0.0) - 8.170_907_631_625_083).abs() < 1e-12);
        assert_eq!(d.log_density(0.3, 1.5), d.log_density(0.3, -1.5));
        assert!(d.log_density(0.3, 1.5) < d.log_density(0.3, 1.0));

        // ∫∫ e^f = Γ(k)⁻¹·√(2πr_L)·Π 2^{r/2}Γ(r/2)·(r_L/r₁)^{r₁/2} = 17806.1613643789.
        let (du, dv) = (0.02, 0.02);
        let mut total = 0.0;
        let mut u = -40.0;
        while u < 15.0 {
            let mut v = -60.0;
            while v < 60.0 {
                total += d.log_density(u + du / 2.0, v + dv / 2.0).exp();
                v += dv;
            }
            u += du;
        }
        total *= du * dv;
        assert!(
            (total / 17_806.161_364_378_86 - 1.0).abs() < 1e-4,
            "{total}"
        );
    }

    #[test]
    fn density_survives_extreme_arguments() {
        let st = stats(
            vec![12.0, 3.0, 5.0, 30.0],
            vec![9.16, 5.24, 4.0, 0.0],
            vec![1, 1, 2, 25],
        );
        let c = LocalConditioner::new(0.4, &st).unwrap();
        let d = AuxDensity::new(&c, st.mults());
        for (u, v) in [(800.0, 0.0), (-800.0, 1e150), (0.0, 1e-300)] {
            assert!(d.log_density(u, v).is_finite(), "{u} {v}");
        }
    }

    #[test]
    fn v_scale_studentizes() {
        // ρ(c1 − c2) + c2 at ρ = 1 is c1, and (ρ(λ_L − 1) + 1) = λ_L.
        let st = stats(vec![30.0, 20.0], vec![6.0, 1.0], vec![4, 25]);
        let c = PredictionConstants { c1: 2.0, c2: 0.5 };
        let k = v_scale(&st, c, 1.0 - 1e-15);
        assert!((k - (25.0f64 / 20.0).sqrt() * (1.0f64 / 2.0).sqrt()).abs() < 1e-9);
    }
}
