//! Principal-component reduction of the concatenated run matrix.
//!
//! Rows of the run matrix are model runs (expensive block first, then the
//! cheap block interpolated onto the same locations), columns are
//! locations. The basis holds scaled eigenvectors `k_j = sqrt(lambda_j) e_j`
//! of the sample covariance (divisor `p - 1`), computed from an SVD of the
//! column-centered matrix.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::grid::LocationSet;
use crate::io::{self, IoError};
use crate::scalar::{from_usize, lit, to_f64, Real};

#[derive(Debug, thiserror::Error)]
pub enum ReduceError {
    #[error("ensemble has zero variance")]
    DegenerateEnsemble,
    #[error("need at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target fraction must lie in (0, 1], got {0}")]
    InvalidTarget(f64),
    #[error("basis matrix K^T K is singular")]
    SingularBasis,
    #[error("non-finite value in run matrix at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Concatenated run matrix with its design and locations.
#[derive(Debug, Clone)]
pub struct RunEnsemble<T: Real> {
    y: DMatrix<T>,
    n_expensive: usize,
    design: Design,
    locations: LocationSet,
}

impl<T: Real> RunEnsemble<T> {
    /// `expensive` rows are the fine runs at `design.expensive_points()`,
    /// `cheap` rows the coarse runs (already on `locations`) at every design point.
    pub fn new(
        expensive: Vec<Vec<T>>,
        cheap: Vec<Vec<T>>,
        design: Design,
        locations: LocationSet,
    ) -> Result<Self, ReduceError> {
        if expensive.len() != design.n_expensive() || cheap.len() != design.n_cheap() {
            return Err(ReduceError::DimensionMismatch {
                expected: design.n_expensive() + design.n_cheap(),
                got: expensive.len() + cheap.len(),
            });
        }
        let n = locations.len();
        let rows: Vec<Vec<T>> = expensive.into_iter().chain(cheap).collect();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(ReduceError::DimensionMismatch { expected: n, got: bad.len() });
        }
        let y = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
        Ok(Self { y, n_expensive: design.n_expensive(), design, locations })
    }

    /// Wraps a matrix whose first `n_expensive` rows are expensive runs.
    pub fn from_matrix(y: DMatrix<T>, n_expensive: usize, design: Design, locations: LocationSet) -> Result<Self, ReduceError> {
        if y.nrows() != n_expensive + design.n_cheap() || n_expensive != design.n_expensive() {
            return Err(ReduceError::DimensionMismatch { expected: design.n_expensive() + design.n_cheap(), got: y.nrows() });
        }
        if y.ncols() != locations.len() {
            return Err(ReduceError::DimensionMismatch { expected: locations.len(), got: y.ncols() });
        }
        Ok(Self { y, n_expensive, design, locations })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.y
    }

    pub fn n_expensive(&self) -> usize {
        self.n_expensive
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }
}

/// Leading principal components of a run ensemble.
#[derive(Debug, Clone)]
pub struct ReducedBasis<T: Real> {
    mu: DVector<T>,
    k_y: DMatrix<T>,
    eigenvalues: Vec<T>,
    target_fraction: f64,
    variance_fraction: f64,
    n_runs: usize,
    /// `(K^T K)^{-1} K^T`, cached.
    projector: DMatrix<T>,
}

impl<T: Real> ReducedBasis<T> {
    /// Assembles a basis and caches its left inverse.
    pub fn from_parts(
        mu: DVector<T>,
        k_y: DMatrix<T>,
        eigenvalues: Vec<T>,
        target_fraction: f64,
        n_runs: usize,
    ) -> Result<Self, ReduceError> {
        if k_y.nrows() != mu.len() {
            return Err(ReduceError::DimensionMismatch { expected: mu.len(), got: k_y.nrows() });
        }
        let projector = left_inverse(&k_y)?;
        let total: f64 = eigenvalues.iter().map(|&l| to_f64(l)).sum();
        let kept: f64 = eigenvalues.iter().take(k_y.ncols()).map(|&l| to_f64(l)).sum();
        let variance_fraction = if total > 0.0 { kept / total } else { 0.0 };
        Ok(Self { mu, k_y, eigenvalues, target_fraction, variance_fraction, n_runs, projector })
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mu
    }

    /// Scaled eigenvectors, one column per retained component.
    pub fn k_y(&self) -> &DMatrix<T> {
        &self.k_y
    }

    /// All eigenvalues of the sample covariance, nonincreasing.
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn j_y(&self) -> usize {
        self.k_y.ncols()
    }

    pub fn n_locations(&self) -> usize {
        self.mu.len()
    }

    pub fn variance_fraction(&self) -> f64 {
        self.variance_fraction
    }

    pub fn target_fraction(&self) -> f64 {
        self.target_fraction
    }

    /// Number of components needed to reach `fraction` of the variance.
    pub fn components_for(&self, fraction: f64) -> usize {
        components_for(&self.eigenvalues, fraction).min(self.j_y())
    }

    /// `(rows - mu) K (K^T K)^{-1}`.
    pub fn project(&self, rows: &DMatrix<T>) -> Result<DMatrix<T>, ReduceError> {
        if rows.ncols() != self.n_locations() {
            return Err(ReduceError::DimensionMismatch { expected: self.n_locations(), got: rows.ncols() });
        }
        let mut centered = rows.clone();
        for mut r in centered.row_iter_mut() {
            r -= self.mu.transpose();
        }
        Ok(centered * self.projector.transpose())
    }

    pub fn project_row(&self, row: &[T]) -> Result<DVector<T>, ReduceError> {
        let m = DMatrix::from_row_slice(1, row.len(), row);
        Ok(self.project(&m)?.row(0).transpose())
    }

    /// `scores K^T + mu`.
    pub fn reconstruct(&self, scores: &DMatrix<T>) -> Result<DMatrix<T>, ReduceError> {
        if scores.ncols() != self.j_y() {
            return Err(ReduceError::DimensionMismatch { expected: self.j_y(), got: scores.ncols() });
        }
        let mut rows = scores * self.k_y.transpose();
        for mut r in rows.row_iter_mut() {
            r += self.mu.transpose();
        }
        Ok(rows)
    }

    pub fn reconstruct_row(&self, scores: &[T]) -> Result<DVector<T>, ReduceError> {
        let m = DMatrix::from_row_slice(1, scores.len(), scores);
        Ok(self.reconstruct(&m)?.row(0).transpose())
    }

    /// Writes `mu.csv`, `k_y.csv`, `eigenvalues.csv` and `basis.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ReduceError> {
        io::ensure_dir(dir)?;
        io::write_vector_csv(&dir.join("mu.csv"), &self.mu)?;
        io::write_matrix_csv(&dir.join("k_y.csv"), &self.k_y)?;
        io::write_vector_csv(&dir.join("eigenvalues.csv"), &DVector::from_vec(self.eigenvalues.clone()))?;
        let manifest = BasisManifest {
            j_y: self.j_y(),
            n_locations: self.n_locations(),
            n_runs: self.n_runs,
            target_fraction: self.target_fraction,
            variance_fraction: self.variance_fraction,
            centering_divisor: "p-1".into(),
        };
        io::write_toml(&dir.join("basis.toml"), &manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ReduceError> {
        let manifest: BasisManifest = io::read_toml(&dir.join("basis.toml"))?;
        let mu = io::read_vector_csv(&dir.join("mu.csv"))?;
        let k_y = io::read_matrix_csv(&dir.join("k_y.csv"))?;
        let eig = io::read_vector_csv::<T>(&dir.join("eigenvalues.csv"))?;
        if k_y.ncols() != manifest.j_y || mu.len() != manifest.n_locations {
            return Err(ReduceError::DimensionMismatch { expected: manifest.j_y, got: k_y.ncols() });
        }
        Self::from_parts(mu, k_y, eig.as_slice().to_vec(), manifest.target_fraction, manifest.n_runs)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisManifest {
    j_y: usize,
    n_locations: usize,
    n_runs: usize,
    target_fraction: f64,
    variance_fraction: f64,
    centering_divisor: String,
}

fn left_inverse<T: Real>(k: &DMatrix<T>) -> Result<DMatrix<T>, ReduceError> {
    let gram = k.transpose() * k;
    let chol = gram.cholesky().ok_or(ReduceError::SingularBasis)?;
    Ok(chol.solve(&k.transpose()))
}

fn components_for<T: Real>(eigenvalues: &[T], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|&l| to_f64(l)).sum();
    let mut acc = 0.0;
    for (j, &l) in eigenvalues.iter().enumerate() {
        acc += to_f64(l);
        // Guard the comparison against round-off in the running sum.
        if acc >= fraction * total * (1.0 - 1e-12) {
            return j + 1;
        }
    }
    eigenvalues.len()
}

/// Fits the basis retaining the fewest components whose variance share
/// reaches `target_fraction`.
pub fn fit_basis<T: Real>(ensemble: &RunEnsemble<T>, target_fraction: f64) -> Result<ReducedBasis<T>, ReduceError> {
    fit_basis_matrix(ensemble.matrix(), target_fraction)
}

/// [`fit_basis`] on a bare run matrix.
pub fn fit_basis_matrix<T: Real>(y: &DMatrix<T>, target_fraction: f64) -> Result<ReducedBasis<T>, ReduceError> {
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(ReduceError::InvalidTarget(target_fraction));
    }
    let (p, n) = y.shape();
    if p < 2 {
        return Err(ReduceError::TooFewRuns(p));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(ReduceError::NonFinite { row: i % p, col: i / p });
    }
    let mu = y.row_mean().transpose();
    let mut centered = y.clone();
    for mut r in centered.row_iter_mut() {
        r -= mu.transpose();
    }
    let scale = y.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let ss = centered.norm_squared();
    let floor = scale * T::default_epsilon() * lit(1e3);
    if ss <= floor * floor * from_usize::<T>(p * n) {
        return Err(ReduceError::DegenerateEnsemble);
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let divisor = from_usize::<T>(p - 1);
    let eigenvalues: Vec<T> = order.iter().map(|&i| svd.singular_values[i].powi(2) / divisor).collect();

    let j_y = components_for(&eigenvalues, target_fraction);
    let mut k_y = DMatrix::zeros(n, j_y);
    for (j, &i) in order.iter().take(j_y).enumerate() {
        let mut e: DVector<T> = v_t.row(i).transpose();
        let lead = e.iter().enumerate().fold((0, T::zero()), |best, (idx, &v)| if v.abs() > best.1 { (idx, v.abs()) } else { best }).0;
        if e[lead] < T::zero() {
            e.neg_mut();
        }
        k_y.set_column(j, &(e * eigenvalues[j].sqrt()));
    }
    ReducedBasis::from_parts(mu, k_y, eigenvalues, target_fraction, p)
}

/// Scores of the training runs, split by fidelity.
#[derive(Debug, Clone)]
pub struct ReducedRuns<T: Real> {
    scores: DMatrix<T>,
    n_expensive: usize,
}

impl<T: Real> ReducedRuns<T> {
    pub fn new(scores: DMatrix<T>, n_expensive: usize) -> Self {
        Self { scores, n_expensive }
    }

    pub fn from_ensemble(basis: &ReducedBasis<T>, ensemble: &RunEnsemble<T>) -> Result<Self, ReduceError> {
        Ok(Self::new(basis.project(ensemble.matrix())?, ensemble.n_expensive()))
    }

    pub fn scores(&self) -> &DMatrix<T> {
        &self.scores
    }

    pub fn n_expensive(&self) -> usize {
        self.n_expensive
    }

    /// Expensive-block scores of component `j`.
    pub fn expensive(&self, j: usize) -> DVector<T> {
        self.scores.view((0, j), (self.n_expensive, 1)).column(0).into_owned()
    }

    /// Cheap-block scores of component `j`.
    pub fn cheap(&self, j: usize) -> DVector<T> {
        let n_cheap = self.scores.nrows() - self.n_expensive;
        self.scores.view((self.n_expensive, j), (n_cheap, 1)).column(0).into_owned()
    }
}

/// Squared Frobenius residual of `reconstruct(project(y))` relative to the
/// squared Frobenius norm of the centered matrix.
pub fn residual_fraction<T: Real>(basis: &ReducedBasis<T>, y: &DMatrix<T>) -> Result<f64, ReduceError> {
    let recon = basis.reconstruct(&basis.project(y)?)?;
    let mut centered = y.clone();
    for mut r in centered.row_iter_mut() {
        r -= basis.mean().transpose();
    }
    Ok(to_f64((y - recon).norm_squared()) / to_f64(centered.norm_squared()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(p, n, |_, _| rng.random::<f64>())
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let y = DMatrix::from_fn(5, 7, |_, c| 0.1 * c as f64 + 0.3);
        assert!(matches!(fit_basis_matrix(&y, 0.95), Err(ReduceError::DegenerateEnsemble)));
    }

    #[test]
    fn rank_one_ensemble() {
        let v: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let c = [0.5, 1.0, 2.5, -1.0, 3.0];
        let y = DMatrix::from_fn(5, 30, |r, j| c[r] * v[j]);
        let basis = fit_basis_matrix(&y, 0.95).unwrap();
        assert_eq!(basis.j_y(), 1);
        let recon = basis.reconstruct(&basis.project(&y).unwrap()).unwrap();
        assert!((recon - &y).abs().max() < 1e-10);
        // Scores are affine in c_i with zero at the mean coefficient.
        let scores = basis.project(&y).unwrap();
        let cbar = c.iter().sum::<f64>() / 5.0;
        let ratio = scores[(0, 0)] / (c[0] - cbar);
        for (i, &ci) in c.iter().enumerate() {
            assert!((scores[(i, 0)] - ratio * (ci - cbar)).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenvalues_match_dense_covariance() {
        let y = random_matrix(20, 50, 11);
        let basis = fit_basis_matrix(&y, 0.95).unwrap();
        // Oracle: symmetric eigendecomposition of the sample covariance.
        let mu = y.row_mean();
        let mut c = y.clone();
        for mut r in c.row_iter_mut() {
            r -= &mu;
        }
        let cov = c.transpose() * &c / 19.0;
        let mut ev: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in basis.eigenvalues().iter().zip(&ev) {
            assert!((a - b).abs() <= 1e-8 * ev[0], "{a} vs {b}");
        }
        assert!(basis.variance_fraction() >= 0.95);
    }

    #[test]
    fn mean_projects_to_zero_and_zero_reconstructs_mean() {
        let y = random_matrix(12, 9, 3);
        let b = fit_basis_matrix(&y, 0.95).unwrap();
        let s = b.project_row(b.mean().as_slice()).unwrap();
        assert!(s.amax() < 1e-12);
        let m = b.reconstruct_row(&vec![0.0; b.j_y()]).unwrap();
        assert!((m - b.mean()).amax() < 1e-15);
    }

    #[test]
    fn projection_identity_on_span() {
        let y = random_matrix(15, 25, 5);
        let b = fit_basis_matrix(&y, 0.9).unwrap();
        let c: Vec<f64> = (0..b.j_y()).map(|j| 0.3 * j as f64 - 0.4).collect();
        let x = b.k_y() * DVector::from_vec(c.clone()) + b.mean();
        let back = b.reconstruct_row(b.project_row(x.as_slice()).unwrap().as_slice()).unwrap();
        assert!((back - x).amax() < 1e-10);
    }

    #[test]
    fn gram_is_diagonal_eigenvalues_and_signs_fixed() {
        let y = random_matrix(25, 40, 8);
        let b = fit_basis_matrix(&y, 0.95).unwrap();
        let g = b.k_y().transpose() * b.k_y();
        for i in 0..b.j_y() {
            for j in 0..b.j_y() {
                let expect = if i == j { b.eigenvalues()[i] } else { 0.0 };
                assert!((g[(i, j)] - expect).abs() <= 1e-10 * b.eigenvalues()[0]);
            }
            let col = b.k_y().column(i);
            let lead = col.iamax();
            assert!(col[lead] > 0.0);
        }
        let again = fit_basis_matrix(&y, 0.95).unwrap();
        assert_eq!(again.k_y(), b.k_y());
    }

    #[test]
    fn truncation_bound() {
        for seed in 0..5 {
            let y = random_matrix(18, 30, seed);
            let b = fit_basis_matrix(&y, 0.95).unwrap();
            let frac = residual_fraction(&b, &y).unwrap();
            assert!(frac <= 1.0 - b.variance_fraction() + 1e-6);
            assert!(frac <= 1.0 - 0.95 + 1e-6);
        }
    }

    #[test]
    fn dimension_errors() {
        let b = fit_basis_matrix(&random_matrix(6, 5, 1), 0.95).unwrap();
        assert!(matches!(b.project(&DMatrix::zeros(1, 4)), Err(ReduceError::DimensionMismatch { .. })));
        assert!(matches!(b.reconstruct(&DMatrix::zeros(1, b.j_y() + 1)), Err(ReduceError::DimensionMismatch { .. })));
    }

    #[test]
    fn archive_round_trip() {
        let b = fit_basis_matrix(&random_matrix(8, 6, 2), 0.95).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let back = ReducedBasis::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.k_y(), b.k_y());
        assert_eq!(back.mean(), b.mean());
        assert_eq!(back.j_y(), b.j_y());
    }

    #[test]
    fn single_precision_basis() {
        let y = random_matrix(10, 12, 4).map(|v| v as f32);
        let b = fit_basis_matrix(&y, 0.95).unwrap();
        assert!(residual_fraction(&b, &y).unwrap() <= 0.05 + 1e-4);
    }
}
