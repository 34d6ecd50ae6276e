use nalgebra::DVector;
use serde::Serialize;

use super::{Dataset, PredictionTarget, Structure, TargetKind};
use crate::error::{Error, Result};

/// Minimal sufficient statistics (BY, S₁…S_L) with the eigenvalues and
/// multiplicities that give them their distribution:
/// S_ℓ ~ (λ_ℓσ_α² + σ_ε²)·χ²(r_ℓ).
#[derive(Debug, Clone, Serialize)]
pub struct SuffStats {
    #[serde(serialize_with = "ser_vec")]
    by: DVector<f64>,
    s: Vec<f64>,
    lambdas: Vec<f64>,
    mults: Vec<usize>,
}

fn ser_vec<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

impl SuffStats {
    /// Assemble statistics directly, e.g. when they were simulated from
    /// their known distribution rather than computed from data.
    pub fn from_parts(
        by: DVector<f64>,
        s: Vec<f64>,
        lambdas: Vec<f64>,
        mults: Vec<usize>,
    ) -> Result<Self> {
        if s.len() != lambdas.len() || s.len() != mults.len() {
            return Err(Error::Dimension(format!(
                "{} sums of squares for {} eigenvalues and {} multiplicities",
                s.len(),
                lambdas.len(),
                mults.len()
            )));
        }
        if s.len() < 2 {
            return Err(Error::DegenerateSpectrum(s.len()));
        }
        if lambdas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Domain(
                "eigenvalues must be strictly decreasing".into(),
            ));
        }
        if mults.contains(&0) {
            return Err(Error::Domain("multiplicities must be positive".into()));
        }
        let total: f64 = s.iter().sum();
        for (index, &value) in s.iter().enumerate() {
            if !value.is_finite() || value <= 1e-20 * total || total <= 0.0 {
                return Err(Error::DegenerateData { index, value });
            }
        }
        Ok(Self {
            by,
            s,
            lambdas,
            mults,
        })
    }

    /// BY = (XᵀX)⁻¹Xᵀy.
    pub fn by(&self) -> &DVector<f64> {
        &self.by
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn mults(&self) -> &[usize] {
        &self.mults
    }

    /// Number of distinct eigenvalues L.
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// n − p.
    pub fn residual_df(&self) -> usize {
        self.mults.iter().sum()
    }

    /// xᵀBy, the centre of every interval for a target with covariates x.
    pub fn center(&self, target: &PredictionTarget) -> f64 {
        target.x.dot(&self.by)
    }

    /// Statistics of k·y: BY scales by k and every S_ℓ by k².
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            by: &self.by * k,
            s: self.s.iter().map(|s| s * k * k).collect(),
            lambdas: self.lambdas.clone(),
            mults: self.mults.clone(),
        }
    }
}

/// Compute (BY, S₁…S_L) for a dataset whose design produced `structure`.
pub fn sufficient_stats(dataset: &Dataset, structure: &Structure) -> Result<SuffStats> {
    let y = dataset.y();
    let s = structure.sums_of_squares(y);
    let total: f64 = s.iter().sum();
    let scale = y.norm_squared().max(f64::MIN_POSITIVE);
    if total <= 1e-20 * scale {
        return Err(Error::DegenerateData {
            index: 0,
            value: total,
        });
    }
    let by = structure.b() * y;
    let spectrum = structure.spectrum();
    SuffStats::from_parts(
        by,
        s,
        spectrum.lambdas().to_vec(),
        spectrum.mults().to_vec(),
    )
}

/// Coefficients of the prediction-error variance:
/// Var(target − xᵀBY) = c1·σ_α² + c2·σ_ε².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionConstants {
    pub c1: f64,
    pub c2: f64,
}

impl PredictionConstants {
    /// Prediction-error variance at the given variance components.
    pub fn variance(&self, sigma_alpha2: f64, sigma_eps2: f64) -> f64 {
        self.c1 * sigma_alpha2 + self.c2 * sigma_eps2
    }
}

/// c1 = xᵀBGBᵀx + zᵀAz and c2 = xᵀBBᵀx, plus one for a new observation.
pub fn prediction_constants(
    structure: &Structure,
    target: &PredictionTarget,
) -> Result<PredictionConstants> {
    let p = structure.bbt().nrows();
    let a = structure.a_dim();
    if target.x.len() != p || target.z.len() != a {
        return Err(Error::Dimension(format!(
            "target has x of length {} and z of length {}, design expects {p} and {a}",
            target.x.len(),
            target.z.len()
        )));
    }
    let x = &target.x;
    let c1 = x.dot(&(structure.bgbt() * x)) + structure.zaz(&target.z);
    let mut c2 = x.dot(&(structure.bbt() * x));
    if target.kind == TargetKind::NewObservation {
        c2 += 1.0;
    }
    Ok(PredictionConstants { c1, c2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Design;
    use std::sync::Arc;

    fn design_a() -> (Arc<Design>, Structure) {
        let d = Design::random_intercept(&Design::balanced_labels(&[6; 5])).unwrap();
        let s = Structure::new(&d).unwrap();
        (Arc::new(d), s)
    }

    #[test]
    fn design_a_constants() {
        let (_, s) = design_a();
        let c =
            prediction_constants(&s, &PredictionTarget::intercept(TargetKind::GroupMean)).unwrap();
        assert!((c.c1 - 1.2).abs() < 1e-12);
        assert!((c.c2 - 1.0 / 30.0).abs() < 1e-12);
        let c = prediction_constants(&s, &PredictionTarget::intercept(TargetKind::NewObservation))
            .unwrap();
        assert!((c.c1 - 1.2).abs() < 1e-12);
        assert!((c.c2 - (1.0 / 30.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fixed_effect_only_target() {
        let (_, s) = design_a();
        let t = PredictionTarget::new(
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
            TargetKind::GroupMean,
        );
        let c = prediction_constants(&s, &t).unwrap();
        assert!((c.c1 - 0.2).abs() < 1e-12);
        assert!((c.c2 - 1.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let (_, s) = design_a();
        let t = PredictionTarget::new(DVector::zeros(2), DVector::zeros(1), TargetKind::GroupMean);
        assert!(matches!(
            prediction_constants(&s, &t),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn exact_fit_is_degenerate() {
        let (d, s) = design_a();
        let ds = Dataset::new(d, DVector::from_element(30, 3.25)).unwrap();
        assert!(matches!(
            sufficient_stats(&ds, &s),
            Err(Error::DegenerateData { .. })
        ));
    }

    #[test]
    fn sums_add_up_and_ignore_shifts() {
        let (d, s) = design_a();
        let y = DVector::from_fn(30, |i, _| ((i * 37 % 11) as f64).sin() + i as f64 * 0.01);
        let ds = Dataset::new(d.clone(), y.clone()).unwrap();
        let st = sufficient_stats(&ds, &s).unwrap();
        let mean = y.mean();
        let rss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let total: f64 = st.s().iter().sum();
        assert!((total - rss).abs() < 1e-8 * rss);

        let shifted = ds.with_response(y.add_scalar(17.5)).unwrap();
        let st2 = sufficient_stats(&shifted, &s).unwrap();
        for (a, b) in st.s().iter().zip(st2.s()) {
            assert!((a - b).abs() < 1e-8 * a.max(1.0));
        }
        assert!((st2.by()[0] - st.by()[0] - 17.5).abs() < 1e-10);
    }
}
