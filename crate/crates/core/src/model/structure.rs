use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::Design;
use crate::error::{Error, Result};

/// Relative gap below which eigenvalues of H are treated as one cluster.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-8;

/// Orthonormal basis K of the residual space: KᵀK = I and KᵀX = 0.
///
/// Built from the eigenvectors of the projector I − X(XᵀX)⁻¹Xᵀ whose
/// eigenvalue is one.
pub fn projection_basis(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let rank = numerical_rank(x);
    if rank < p {
        return Err(Error::RankDeficientDesign { rank, p });
    }
    if n <= p {
        return Err(Error::NoResidualSpace { n, p });
    }
    let xtx = x.transpose() * x;
    let chol = xtx
        .cholesky()
        .ok_or(Error::RankDeficientDesign { rank, p })?;
    let hat = x * chol.solve(&x.transpose());
    let projector = DMatrix::identity(n, n) - hat;
    let projector = (&projector + projector.transpose()) * 0.5;

    let eig = projector.symmetric_eigen();
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    if keep.len() != n - p {
        return Err(Error::RankDeficientDesign {
            rank: n - keep.len(),
            p,
        });
    }
    let mut k = DMatrix::zeros(n, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        k.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(k)
}

fn numerical_rank(x: &DMatrix<f64>) -> usize {
    if x.ncols() == 0 {
        return 0;
    }
    let sv = x.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    let tol = max * 1e-10 * x.nrows().max(x.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Distinct eigenvalues of H = KᵀGK with their multiplicities and
/// orthonormal eigenvector blocks.
#[derive(Debug, Clone)]
pub struct Spectrum {
    lambdas: Vec<f64>,
    mults: Vec<usize>,
    blocks: Vec<DMatrix<f64>>,
}

impl Spectrum {
    /// Distinct eigenvalues, decreasing.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn mults(&self) -> &[usize] {
        &self.mults
    }

    /// (n−p)×r_ℓ eigenvector blocks, one per distinct eigenvalue.
    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Number of distinct eigenvalues L.
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Σ r_ℓ = n − p.
    pub fn total_mult(&self) -> usize {
        self.mults.iter().sum()
    }
}

/// Eigenstructure of H = KᵀGK, clustered into distinct eigenvalues.
///
/// Eigenvalues whose distance to the largest member of their cluster is
/// within `tol_cluster · max(1, λ₁)` are merged; the cluster value is the
/// mean of its members.
pub fn eigen_structure(g: &DMatrix<f64>, k: &DMatrix<f64>, tol_cluster: f64) -> Result<Spectrum> {
    let h = k.transpose() * g * k;
    let h = (&h + h.transpose()) * 0.5;
    let m = h.nrows();
    let eig = h.symmetric_eigen();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]];
    let tol = tol_cluster * top.abs().max(1.0);

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut head = f64::INFINITY;
    for &i in &order {
        let value = eig.eigenvalues[i];
        match clusters.last_mut() {
            Some(c) if head - value <= tol => c.push(i),
            _ => {
                clusters.push(vec![i]);
                head = value;
            }
        }
    }
    if clusters.len() < 2 {
        return Err(Error::DegenerateSpectrum(clusters.len()));
    }

    let mut lambdas = Vec::with_capacity(clusters.len());
    let mut mults = Vec::with_capacity(clusters.len());
    let mut blocks = Vec::with_capacity(clusters.len());
    for members in clusters {
        let mean = members.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / members.len() as f64;
        lambdas.push(if mean.abs() <= tol { 0.0 } else { mean });
        mults.push(members.len());
        let mut block = DMatrix::zeros(m, members.len());
        for (col, &i) in members.iter().enumerate() {
            block.set_column(col, &eig.eigenvectors.column(i));
        }
        blocks.push(block);
    }
    Ok(Spectrum {
        lambdas,
        mults,
        blocks,
    })
}

/// Everything about a design that does not depend on the responses:
/// residual basis, eigenstructure and the B-matrix products.
///
/// Computing this is O(n³); simulations and bootstraps reuse one instance
/// across every response vector drawn from the same design.
#[derive(Debug, Clone)]
pub struct Structure {
    spectrum: Spectrum,
    /// K·P with columns grouped by eigenvalue cluster; S_ℓ is the squared
    /// norm of the matching slice of rotatedᵀ y.
    rotated: DMatrix<f64>,
    ranges: Vec<Range<usize>>,
    b: DMatrix<f64>,
    bbt: DMatrix<f64>,
    bgbt: DMatrix<f64>,
    a: DMatrix<f64>,
}

impl Structure {
    pub fn new(design: &Design) -> Result<Self> {
        Self::with_tolerance(design, DEFAULT_CLUSTER_TOL)
    }

    pub fn with_tolerance(design: &Design, tol_cluster: f64) -> Result<Self> {
        let x = design.x();
        let k = projection_basis(x)?;
        let g = design.g_matrix();
        let spectrum = eigen_structure(&g, &k, tol_cluster)?;

        let full_p = DMatrix::from_columns(
            &spectrum
                .blocks
                .iter()
                .flat_map(|b| b.column_iter().map(|c| c.into_owned()))
                .collect::<Vec<DVector<f64>>>(),
        );
        let rotated = &k * full_p;
        let mut ranges = Vec::with_capacity(spectrum.len());
        let mut start = 0;
        for &r in &spectrum.mults {
            ranges.push(start..start + r);
            start += r;
        }

        let xtx = x.transpose() * x;
        let chol = xtx.cholesky().ok_or(Error::RankDeficientDesign {
            rank: 0,
            p: design.p(),
        })?;
        let b = chol.solve(&x.transpose());
        let bbt = &b * b.transpose();
        let bgbt = &b * &g * b.transpose();

        Ok(Self {
            spectrum,
            rotated,
            ranges,
            b,
            bbt,
            bgbt,
            a: design.a().clone(),
        })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// B = (XᵀX)⁻¹Xᵀ.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn bbt(&self) -> &DMatrix<f64> {
        &self.bbt
    }

    pub fn bgbt(&self) -> &DMatrix<f64> {
        &self.bgbt
    }

    pub(crate) fn a_dim(&self) -> usize {
        self.a.nrows()
    }

    pub(crate) fn zaz(&self, z: &DVector<f64>) -> f64 {
        (z.transpose() * &self.a * z)[(0, 0)]
    }

    /// Per-cluster sums of squares S_ℓ = ‖P_ℓᵀKᵀy‖².
    pub(crate) fn sums_of_squares(&self, y: &DVector<f64>) -> Vec<f64> {
        let proj = self.rotated.tr_mul(y);
        self.ranges
            .iter()
            .map(|r| proj.rows(r.start, r.len()).norm_squared())
            .collect()
    }

    pub fn summary(&self, design: &Design) -> DatasetSummary {
        DatasetSummary {
            n: design.n(),
            groups: design.n_groups(),
            p: design.p(),
            distinct_eigenvalues: self.spectrum.len(),
            lambdas: self.spectrum.lambdas.clone(),
            mults: self.spectrum.mults.clone(),
            group_labels: design.group_labels().to_vec(),
            group_sizes: design.group_sizes().to_vec(),
        }
    }
}

/// JSON-exportable description of a dataset's structure.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    #[serde(rename = "N")]
    pub groups: usize,
    pub p: usize,
    #[serde(rename = "L")]
    pub distinct_eigenvalues: usize,
    pub lambdas: Vec<f64>,
    pub mults: Vec<usize>,
    pub group_labels: Vec<String>,
    pub group_sizes: Vec<usize>,
}
