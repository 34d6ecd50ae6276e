//! Generalized IM contour for θ.
//!
//! With η = σ_α²/σ_ε² known, the studentized quantity
//! `(θ − xᵀBY)·√ν / √D(η)`, `D(η) = Σ_{ℓ<L} S_ℓ (c1η + c2)/(λ_ℓη + 1)`,
//! is exactly t_ν with ν = Σ_{ℓ<L} r_ℓ. Replacing D(η) by its supremum over
//! η gives a contour that is valid whatever η is; plugging in a point value
//! (or an inflated one) trades that guarantee for length.

use serde::Serialize;

use crate::dist::t_sf;
use crate::error::{Error, Result};
use crate::intervals::{Contour, Method};
use crate::model::{PredictionConstants, SuffStats, TargetKind};

/// Maximum-specificity contour of a symmetric t_ν auxiliary:
/// π(t) = P(f_ν(T) < f_ν(t)) = 2(1 − F_ν(|t|)).
pub fn t_tail_contour(t: f64, nu: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    (2.0 * t_sf(t.abs(), nu)).min(1.0)
}

/// How the variance ratio η enters the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GenMode {
    /// Supremum over η ≥ 0 (valid for every η).
    Sup,
    /// Fixed η.
    PlugIn { eta: f64 },
    /// η̂ ± δ, whichever sign gives the larger denominator.
    Adjusted { eta_hat: f64, delta: f64 },
}

/// Where the supremum of the denominator is attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaStar {
    Finite(f64),
    Infinite,
}

/// The one-dimensional association for θ.
#[derive(Debug, Clone)]
pub struct GenAssociation {
    center: f64,
    nu: f64,
    s: Vec<f64>,
    lambdas: Vec<f64>,
    consts: PredictionConstants,
}

impl GenAssociation {
    pub fn new(center: f64, stats: &SuffStats, consts: PredictionConstants) -> Self {
        let l = stats.len();
        Self {
            center,
            nu: stats.mults()[..l - 1].iter().sum::<usize>() as f64,
            s: stats.s()[..l - 1].to_vec(),
            lambdas: stats.lambdas()[..l - 1].to_vec(),
            consts,
        }
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// ν = Σ_{ℓ<L} r_ℓ.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// D(η) = Σ_{ℓ<L} S_ℓ (c1η + c2)/(λ_ℓη + 1).
    pub fn denom(&self, eta: f64) -> f64 {
        let PredictionConstants { c1, c2 } = self.consts;
        self.s
            .iter()
            .zip(&self.lambdas)
            .map(|(s, l)| s * (c1 * eta + c2) / (l * eta + 1.0))
            .sum()
    }

    /// lim_{η→∞} D(η) = Σ_{ℓ<L} S_ℓ c1/λ_ℓ.
    pub fn denom_at_infinity(&self) -> Result<f64> {
        if let Some(i) = self.lambdas.iter().position(|&l| l <= 0.0) {
            return Err(Error::UnboundedDenominator(i));
        }
        Ok(self
            .s
            .iter()
            .zip(&self.lambdas)
            .map(|(s, l)| s * self.consts.c1 / l)
            .sum())
    }

    fn denom_u(&self, u: f64) -> f64 {
        if u >= 1.0 {
            self.denom_at_infinity().unwrap_or(f64::INFINITY)
        } else {
            self.denom(u / (1.0 - u))
        }
    }

    /// Denominator value and the η it was evaluated at, for a given mode.
    pub fn resolve(&self, mode: GenMode) -> Result<(EtaStar, f64)> {
        match mode {
            GenMode::Sup => sup_denominator(self),
            GenMode::PlugIn { eta } => {
                if eta.is_nan() || eta < 0.0 {
                    return Err(Error::Domain(format!("eta = {eta} must be non-negative")));
                }
                Ok((EtaStar::Finite(eta), self.denom(eta)))
            }
            GenMode::Adjusted { eta_hat, delta } => {
                if !(eta_hat >= 0.0 && delta >= 0.0) {
                    return Err(Error::Domain(
                        "eta_hat and delta must be non-negative".into(),
                    ));
                }
                let up = eta_hat + delta;
                let down = (eta_hat - delta).max(0.0);
                let (d_up, d_down) = (self.denom(up), self.denom(down));
                Ok(if d_down > d_up {
                    (EtaStar::Finite(down), d_down)
                } else {
                    (EtaStar::Finite(up), d_up)
                })
            }
        }
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const SCAN_POINTS: usize = 256;

/// Global supremum of D(η) over η ∈ [0, ∞].
///
/// Works on u = η/(1+η) ∈ [0, 1]: a coarse scan picks the best cell, golden
/// section refines inside it to 1e-10 in u, and both endpoints are compared.
pub fn sup_denominator(assoc: &GenAssociation) -> Result<(EtaStar, f64)> {
    let at_inf = assoc.denom_at_infinity()?;
    let values: Vec<f64> = (0..=SCAN_POINTS)
        .map(|i| assoc.denom_u(i as f64 / SCAN_POINTS as f64))
        .collect();
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();

    let mut best_u = best as f64 / SCAN_POINTS as f64;
    let mut best_val = values[best];
    let lo = best.saturating_sub(1) as f64 / SCAN_POINTS as f64;
    let hi = ((best + 1).min(SCAN_POINTS)) as f64 / SCAN_POINTS as f64;
    let (u, v) = golden_max(|u| assoc.denom_u(u), lo, hi.min(1.0 - 1e-15), 1e-10);
    if v > best_val {
        best_u = u;
        best_val = v;
    }
    if at_inf >= best_val {
        return Ok((EtaStar::Infinite, at_inf));
    }
    let d0 = assoc.denom(0.0);
    if d0 >= best_val {
        return Ok((EtaStar::Finite(0.0), d0));
    }
    Ok((EtaStar::Finite(best_u / (1.0 - best_u)), best_val))
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// The generalized plausibility contour π_G(ϑ) = π(t′).
#[derive(Debug, Clone, Serialize)]
pub struct GenContour {
    center: f64,
    nu: f64,
    denom: f64,
    eta: EtaStar,
    mode: GenMode,
    kind: TargetKind,
}

impl GenContour {
    pub fn new(
        stats: &SuffStats,
        consts: PredictionConstants,
        center: f64,
        mode: GenMode,
        kind: TargetKind,
    ) -> Result<Self> {
        let assoc = GenAssociation::new(center, stats, consts);
        let (eta, denom) = assoc.resolve(mode)?;
        Ok(Self {
            center,
            nu: assoc.nu(),
            denom,
            eta,
            mode,
            kind,
        })
    }

    /// t′ = (ϑ − centre)·√ν / √D.
    pub fn t_prime(&self, theta: f64) -> f64 {
        (theta - self.center) * (self.nu / self.denom).sqrt()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn denom(&self) -> f64 {
        self.denom
    }

    pub fn eta(&self) -> EtaStar {
        self.eta
    }

    pub fn mode(&self) -> GenMode {
        self.mode
    }

    /// Closed-form α-cut: centre ± t_{ν,1−α/2}·√(D/ν).
    pub fn closed_form_cut(&self, alpha: f64) -> (f64, f64) {
        let half = crate::dist::t_quantile(1.0 - alpha / 2.0, self.nu) * self.scale();
        (self.center - half, self.center + half)
    }
}

impl Contour for GenContour {
    fn plausibility(&self, theta: f64) -> f64 {
        t_tail_contour(self.t_prime(theta), self.nu)
    }

    fn center(&self) -> f64 {
        self.center
    }

    fn scale(&self) -> f64 {
        (self.denom / self.nu).sqrt()
    }

    fn method(&self) -> Method {
        match self.mode {
            GenMode::Sup => Method::GenIm,
            GenMode::PlugIn { .. } => Method::PlugInGenIm,
            GenMode::Adjusted { .. } => Method::AdjGenIm,
        }
    }

    fn kind(&self) -> TargetKind {
        self.kind
    }
}

/// π_G(ϑ) for a single value.
pub fn gen_plausibility(
    theta: f64,
    stats: &SuffStats,
    consts: PredictionConstants,
    center: f64,
    mode: GenMode,
) -> Result<f64> {
    Ok(GenContour::new(stats, consts, center, mode, TargetKind::GroupMean)?.plausibility(theta))
}
