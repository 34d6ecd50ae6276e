//! Two-stage linear mixed model: data, residual-space eigenstructure,
//! minimal sufficient statistics and prediction-variance constants.

mod io;
mod stats;
mod structure;

pub use io::{load_dataset, read_dataset, Schema};
pub use stats::{prediction_constants, sufficient_stats, PredictionConstants, SuffStats};
pub use structure::{
    eigen_structure, projection_basis, DatasetSummary, Spectrum, Structure, DEFAULT_CLUSTER_TOL,
};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The fixed part of a dataset: covariates, random-effect design and grouping.
///
/// Everything here is shared between a dataset and responses simulated from
/// the same design, so it lives behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Design {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    a: DMatrix<f64>,
    /// Lower Cholesky factor of A, for simulation.
    a_chol: DMatrix<f64>,
    group_of: Vec<usize>,
    group_labels: Vec<String>,
    group_sizes: Vec<usize>,
}

impl Design {
    /// Build and validate a design.
    ///
    /// `x` is the n×p fixed-effects matrix, `z` holds the random-effect
    /// covariates of each observation as an n×a matrix (row j is the row of
    /// Z_i belonging to observation j), `a` is the known a×a covariance
    /// scaling and `groups` labels each observation. Groups are ordered by
    /// first appearance.
    pub fn new(
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        a: DMatrix<f64>,
        groups: &[String],
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if z.nrows() != n || groups.len() != n {
            return Err(Error::Dimension(format!(
                "X has {n} rows, Z has {}, group labels {}",
                z.nrows(),
                groups.len()
            )));
        }
        if a.nrows() != z.ncols() || a.ncols() != z.ncols() {
            return Err(Error::Dimension(format!(
                "A must be {0}x{0}, got {1}x{2}",
                z.ncols(),
                a.nrows(),
                a.ncols()
            )));
        }
        if x.iter()
            .chain(z.iter())
            .chain(a.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation(
                "design contains non-finite values".into(),
            ));
        }
        check_spd(&a)?;
        let a_chol = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Validation("A is not positive definite".into()))?
            .l();

        let mut group_labels: Vec<String> = Vec::new();
        let mut group_sizes: Vec<usize> = Vec::new();
        let mut group_of = Vec::with_capacity(n);
        let mut index = std::collections::HashMap::new();
        for label in groups {
            let id = *index.entry(label.clone()).or_insert_with(|| {
                group_labels.push(label.clone());
                group_sizes.push(0);
                group_labels.len() - 1
            });
            group_sizes[id] += 1;
            group_of.push(id);
        }

        Ok(Self {
            x,
            z,
            a,
            a_chol,
            group_of,
            group_labels,
            group_sizes,
        })
    }

    /// Random-intercept design: intercept-only X, Z = 1, A = [1].
    pub fn random_intercept(groups: &[String]) -> Result<Self> {
        let n = groups.len();
        Self::new(
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::identity(1, 1),
            groups,
        )
    }

    /// Random-intercept design with consecutive groups of the given sizes,
    /// labelled `g1`, `g2`, ...
    pub fn balanced_labels(sizes: &[usize]) -> Vec<String> {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &s)| std::iter::repeat_n(format!("g{}", i + 1), s))
            .collect()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of random-effect covariates per group.
    pub fn a_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    /// Group index (into [`Design::group_labels`]) of every observation.
    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// True for the intercept-only random-intercept special case.
    pub fn is_random_intercept(&self) -> bool {
        self.p() == 1
            && self.a_dim() == 1
            && (self.a[(0, 0)] - 1.0).abs() < 1e-12
            && self.x.iter().all(|&v| v == 1.0)
            && self.z.iter().all(|&v| v == 1.0)
    }

    /// Row indices of each group, in group order.
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_groups()];
        for (row, &g) in self.group_of.iter().enumerate() {
            members[g].push(row);
        }
        members
    }

    /// The n×n block-diagonal matrix G with blocks Z_i A Z_iᵀ.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let za = &self.z * &self.a;
        let mut g = DMatrix::zeros(n, n);
        for members in self.group_members() {
            for &j in &members {
                for &k in &members {
                    g[(j, k)] = za.row(j).dot(&self.z.row(k));
                }
            }
        }
        g
    }

    /// Draw y = Xβ + Zα + ε with α_i ~ N(0, σ_α²A) and ε ~ N(0, σ_ε²I).
    pub fn simulate_response<R: Rng + ?Sized>(
        &self,
        beta: &DVector<f64>,
        sigma_alpha2: f64,
        sigma_eps2: f64,
        rng: &mut R,
    ) -> DVector<f64> {
        let mut y = &self.x * beta;
        let (sa, se) = (sigma_alpha2.max(0.0).sqrt(), sigma_eps2.max(0.0).sqrt());
        let effects: Vec<DVector<f64>> = (0..self.n_groups())
            .map(|_| self.draw_effect(sa, rng))
            .collect();
        for (j, &g) in self.group_of.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            y[j] += self.z.row(j).transpose().dot(&effects[g]) + se * noise;
        }
        y
    }

    /// One random-effect vector α ~ N(0, σ_α²A), given σ_α.
    pub fn draw_effect<R: Rng + ?Sized>(&self, sigma_alpha: f64, rng: &mut R) -> DVector<f64> {
        let u = DVector::from_fn(self.a_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.a_chol * u * sigma_alpha
    }
}

fn check_spd(a: &DMatrix<f64>) -> Result<()> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Validation("A is not symmetric".into()));
    }
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.max();
    if eig.iter().any(|&e| e <= 1e-10 * max.abs()) || max <= 0.0 {
        return Err(Error::Validation("A is not positive definite".into()));
    }
    Ok(())
}

/// Observed responses paired with their design.
#[derive(Debug, Clone)]
pub struct Dataset {
    design: Arc<Design>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(design: Arc<Design>, y: DVector<f64>) -> Result<Self> {
        if y.len() != design.n() {
            return Err(Error::Dimension(format!(
                "response has length {}, design has {} rows",
                y.len(),
                design.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "response contains non-finite values".into(),
            ));
        }
        Ok(Self { design, y })
    }

    /// Random-intercept dataset from responses and group labels.
    pub fn random_intercept<S: ToString>(y: Vec<f64>, groups: &[S]) -> Result<Self> {
        let labels: Vec<String> = groups.iter().map(|g| g.to_string()).collect();
        let design = Design::random_intercept(&labels)?;
        Self::new(Arc::new(design), DVector::from_vec(y))
    }

    /// Same design, different responses.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(Arc::clone(&self.design), y)
    }

    pub fn design(&self) -> &Arc<Design> {
        &self.design
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Responses split by group, in group order.
    pub fn grouped_responses(&self) -> Vec<Vec<f64>> {
        self.design
            .group_members()
            .into_iter()
            .map(|rows| rows.into_iter().map(|r| self.y[r]).collect())
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.y.mean()
    }
}

/// What is being predicted for a new group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// θ = xᵀβ + zᵀα*, the mean of a new group.
    GroupMean,
    /// Y* = θ + ε*, a single new observation from a new group.
    NewObservation,
}

/// Covariates of the quantity being predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTarget {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub kind: TargetKind,
}

impl PredictionTarget {
    pub fn new(x: DVector<f64>, z: DVector<f64>, kind: TargetKind) -> Self {
        Self { x, z, kind }
    }

    /// x = 1, z = 1: the random-intercept target.
    pub fn intercept(kind: TargetKind) -> Self {
        Self::new(
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            kind,
        )
    }

    pub fn check(&self, design: &Design) -> Result<()> {
        if self.x.len() != design.p() || self.z.len() != design.a_dim() {
            return Err(Error::Dimension(format!(
                "target has x of length {} and z of length {}, design expects {} and {}",
                self.x.len(),
                self.z.len(),
                design.p(),
                design.a_dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_in_first_appearance_order() {
        let labels: Vec<String> = ["b", "a", "b", "c", "a"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let d = Design::random_intercept(&labels).unwrap();
        assert_eq!(d.group_labels(), &["b", "a", "c"]);
        assert_eq!(d.group_sizes(), &[2, 2, 1]);
        assert_eq!(d.group_of(), &[0, 1, 0, 2, 1]);
    }

    #[test]
    fn g_matrix_blocks() {
        let labels = Design::balanced_labels(&[2, 3]);
        let d = Design::random_intercept(&labels).unwrap();
        let g = d.g_matrix();
        assert_eq!(g[(0, 1)], 1.0);
        assert_eq!(g[(1, 2)], 0.0);
        assert_eq!(g[(4, 2)], 1.0);
        assert_eq!(g.sum(), 4.0 + 9.0);
    }

    #[test]
    fn rejects_indefinite_a() {
        let labels = Design::balanced_labels(&[2, 2]);
        let z = DMatrix::from_element(4, 1, 1.0);
        let x = DMatrix::from_element(4, 1, 1.0);
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            Design::new(x.clone(), z.clone(), bad, &labels),
            Err(Error::Validation(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        let z2 = DMatrix::from_element(4, 2, 1.0);
        assert!(Design::new(x, z2, asym, &labels).is_err());
    }

    #[test]
    fn simulated_moments() {
        use rand::SeedableRng;
        let d = Design::random_intercept(&Design::balanced_labels(&[4; 2])).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let beta = DVector::from_element(1, 2.0);
        let reps = 20_000;
        let (mut m, mut within, mut between) = (0.0, 0.0, 0.0);
        for _ in 0..reps {
            let y = d.simulate_response(&beta, 0.5, 0.25, &mut rng);
            m += y.mean();
            within += (y[0] - y[1]).powi(2) / 2.0;
            between += (y[0] - y[4]).powi(2) / 2.0;
        }
        let r = reps as f64;
        assert!((m / r - 2.0).abs() < 0.02);
        assert!((within / r - 0.25).abs() < 0.02);
        assert!((between / r - 0.75).abs() < 0.03);
    }

    #[test]
    fn random_intercept_flag() {
        let d = Design::random_intercept(&Design::balanced_labels(&[3, 3])).unwrap();
        assert!(d.is_random_intercept());
    }
}
