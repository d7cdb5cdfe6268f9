//! Principal component pursuit.
//!
//! Splits a matrix `X` into a low-rank part `L` and a sparse part `S` by
//! solving
//!
//! ```text
//! minimize ||L||_* + lambda * ||S||_1   subject to   L + S = X
//! ```
//!
//! with the inexact augmented Lagrangian method:
//!
//! ```text
//! L <- SVT(X - S + Y / mu, 1 / mu)
//! S <- shrink(X - L + Y / mu, lambda / mu)
//! Y <- Y + mu * (X - L - S)
//! mu <- min(mu * growth, mu_max)
//! ```
//!
//! The solver is single-threaded and fully deterministic: identical inputs
//! produce bit-identical outputs on one platform.

use nalgebra::{DMatrix, Dyn, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LatencyMatrix;

/// Iteration cap handed to the SVD routine. Hitting it is reported as
/// [`Error::SvdFailure`].
pub(crate) const SVD_MAX_SWEEPS: usize = 10_000;
// Exactly machine epsilon mis-deflates rank-deficient inputs.
pub(crate) const SVD_EPS: f64 = 5.0 * f64::EPSILON;

/// Tuning knobs for [`decompose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Weight on the l1 term. `None` selects `1 / sqrt(max(m, n))`.
    pub lambda: Option<f64>,
    /// Stop once `||X - L - S||_F / ||X||_F` drops to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial penalty. `None` selects `1.25 / ||X||_2`.
    pub mu_initial: Option<f64>,
    pub mu_growth: f64,
    /// `mu` is capped at `mu_initial * mu_max_factor`.
    pub mu_max_factor: f64,
    /// Singular values at or below `rank_tolerance * sigma_1` do not count
    /// towards the reported rank.
    pub rank_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            tolerance: 1e-7,
            max_iterations: 1000,
            mu_initial: None,
            mu_growth: 1.5,
            mu_max_factor: 1e7,
            rank_tolerance: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        }
        if let Some(lambda) = self.lambda {
            positive("lambda", lambda)?;
        }
        if let Some(mu) = self.mu_initial {
            positive("mu_initial", mu)?;
        }
        positive("tolerance", self.tolerance)?;
        positive("rank_tolerance", self.rank_tolerance)?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.mu_growth.is_finite() && self.mu_growth > 1.0) {
            return Err(Error::InvalidInput(format!(
                "mu_growth must exceed 1, got {}",
                self.mu_growth
            )));
        }
        if !(self.mu_max_factor.is_finite() && self.mu_max_factor >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "mu_max_factor must be at least 1, got {}",
                self.mu_max_factor
            )));
        }
        Ok(())
    }

    /// The l1 weight used for an `rows x cols` input.
    pub fn lambda_for(&self, rows: usize, cols: usize) -> f64 {
        self.lambda
            .unwrap_or_else(|| 1.0 / (rows.max(cols) as f64).sqrt())
    }
}

/// Result of a principal component pursuit run.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Expected latency `L`.
    pub low_rank: DMatrix<f64>,
    /// Inflation `S`.
    pub sparse: DMatrix<f64>,
    /// Numerical rank of `low_rank` under the run's rank tolerance.
    pub rank: usize,
    pub iterations: usize,
    /// Final relative residual `||X - L - S||_F / ||X||_F`.
    pub residual: f64,
    pub lambda_used: f64,
    pub converged: bool,
    /// Relative residual after each iteration.
    pub residual_history: Vec<f64>,
}

impl Decomposition {
    pub fn shape(&self) -> (usize, usize) {
        self.low_rank.shape()
    }
}

fn ensure_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix contains non-finite entries".into()))
    }
}

fn svd(m: &DMatrix<f64>) -> Result<SVD<f64, Dyn, Dyn>> {
    ensure_finite(m)?;
    SVD::try_new(m.clone(), true, true, SVD_EPS, SVD_MAX_SWEEPS).ok_or(Error::SvdFailure)
}

fn shrink(x: f64, tau: f64) -> f64 {
    x.signum() * (x.abs() - tau).max(0.0)
}

/// Entrywise shrinkage `sign(x) * max(|x| - tau, 0)`.
pub fn soft_threshold(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {tau}")));
    }
    ensure_finite(m)?;
    Ok(m.map(|x| shrink(x, tau)))
}

/// Shrinks the singular values of `m` by `tau`.
///
/// Returns the reconstructed matrix and the number of singular values that
/// survived (strictly greater than `tau`).
pub fn singular_value_threshold(m: &DMatrix<f64>, tau: f64) -> Result<(DMatrix<f64>, usize)> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {tau}")));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok((m.clone(), 0));
    }
    let decomposition = svd(m)?;
    let u = decomposition.u.as_ref().ok_or(Error::SvdFailure)?;
    let v_t = decomposition.v_t.as_ref().ok_or(Error::SvdFailure)?;

    let kept: Vec<(usize, f64)> = decomposition
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tau)
        .map(|(k, &s)| (k, s - tau))
        .collect();

    let mut out = DMatrix::zeros(rows, cols);
    for &(k, shrunk) in &kept {
        // out += shrunk * u_k * v_k^T
        out.ger(shrunk, &u.column(k), &v_t.row(k).transpose(), 1.0);
    }
    Ok((out, kept.len()))
}

fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let values = SVD::try_new(m.clone(), false, false, SVD_EPS, SVD_MAX_SWEEPS)
        .ok_or(Error::SvdFailure)?
        .singular_values;
    Ok(values.iter().cloned().fold(0.0, f64::max))
}

/// Counts singular values above `rank_tolerance * sigma_1`.
pub fn numerical_rank(m: &DMatrix<f64>, rank_tolerance: f64) -> Result<usize> {
    if m.is_empty() {
        return Ok(0);
    }
    ensure_finite(m)?;
    let values = SVD::try_new(m.clone(), false, false, SVD_EPS, SVD_MAX_SWEEPS)
        .ok_or(Error::SvdFailure)?
        .singular_values;
    let largest = values.iter().cloned().fold(0.0_f64, f64::max);
    if largest == 0.0 {
        return Ok(0);
    }
    let cutoff = rank_tolerance * largest;
    Ok(values.iter().filter(|&&s| s > cutoff).count())
}

/// Runs principal component pursuit on a dense matrix.
///
/// Non-convergence within `opts.max_iterations` is not an error; the result
/// carries `converged == false`.
pub fn decompose(x: &DMatrix<f64>, opts: &SolverOptions) -> Result<Decomposition> {
    opts.validate()?;
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput(format!(
            "cannot decompose a {rows}x{cols} matrix"
        )));
    }
    ensure_finite(x)?;

    let lambda = opts.lambda_for(rows, cols);
    let norm_x = x.norm();
    if norm_x == 0.0 {
        return Ok(Decomposition {
            low_rank: DMatrix::zeros(rows, cols),
            sparse: DMatrix::zeros(rows, cols),
            rank: 0,
            iterations: 0,
            residual: 0.0,
            lambda_used: lambda,
            converged: true,
            residual_history: Vec::new(),
        });
    }

    let mut mu = match opts.mu_initial {
        Some(mu) => mu,
        None => 1.25 / spectral_norm(x)?,
    };
    let mu_max = mu * opts.mu_max_factor;

    let mut low_rank = DMatrix::zeros(rows, cols);
    let mut sparse = DMatrix::zeros(rows, cols);
    let mut multiplier: DMatrix<f64> = DMatrix::zeros(rows, cols);
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..opts.max_iterations {
        let inv_mu = 1.0 / mu;

        let mut target = x - &sparse;
        target.zip_apply(&multiplier, |t: &mut f64, y: f64| *t += inv_mu * y);
        low_rank = singular_value_threshold(&target, inv_mu)?.0;

        let mut target = x - &low_rank;
        target.zip_apply(&multiplier, |t: &mut f64, y: f64| *t += inv_mu * y);
        let shrink_by = lambda * inv_mu;
        target.apply(|v| *v = shrink(*v, shrink_by));
        sparse = target;

        let gap = x - &low_rank - &sparse;
        multiplier.zip_apply(&gap, |y: &mut f64, g: f64| *y += mu * g);
        mu = (mu * opts.mu_growth).min(mu_max);

        let residual = gap.norm() / norm_x;
        history.push(residual);
        if residual <= opts.tolerance {
            converged = true;
            break;
        }
    }

    let rank = numerical_rank(&low_rank, opts.rank_tolerance)?;
    Ok(Decomposition {
        low_rank,
        sparse,
        rank,
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(0.0),
        lambda_used: lambda,
        converged,
        residual_history: history,
    })
}

/// Decomposes a latency matrix.
///
/// Interpolated cells are treated as observed; cells still missing enter the
/// solver as zero. Observed and interpolated values must be non-negative.
pub fn decompose_matrix(x: &LatencyMatrix, opts: &SolverOptions) -> Result<Decomposition> {
    x.check_values()?;
    decompose(x.values(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    // Singular values through the eigenvalues of M^T M, independent of the
    // bidiagonal SVD route used by the implementation.
    fn singular_values_via_gram(m: &DMatrix<f64>) -> Vec<f64> {
        let gram = m.transpose() * m;
        let mut values: Vec<f64> = SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .map(|&e| e.max(0.0).sqrt())
            .collect();
        values.sort_by(|a, b| b.total_cmp(a));
        values
    }

    #[test]
    fn soft_threshold_small_example() {
        let m = DMatrix::from_row_slice(2, 2, &[5.0, -0.5, 0.0, 2.0]);
        let out = soft_threshold(&m, 1.0).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn soft_threshold_above_max_is_zero() {
        let m = random_matrix(5, 7, 3);
        let tau = m.amax() + 0.01;
        assert!(soft_threshold(&m, tau).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn soft_threshold_matches_entrywise_formula() {
        let m = random_matrix(8, 8, 11);
        let out = soft_threshold(&m, 0.3).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let x = m[(i, j)];
                let expected = if x > 0.3 {
                    x - 0.3
                } else if x < -0.3 {
                    x + 0.3
                } else {
                    0.0
                };
                assert!((out[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn soft_threshold_rejects_bad_input() {
        let mut m = DMatrix::zeros(2, 2);
        assert!(soft_threshold(&m, 0.0).is_err());
        m[(0, 1)] = f64::NAN;
        assert!(matches!(soft_threshold(&m, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn svt_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0, 0.1]));
        let (out, count) = singular_value_threshold(&m, 1.0).unwrap();
        let expected =
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 0.0]));
        assert_eq!(count, 2);
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn svt_zero_matrix() {
        let (out, count) = singular_value_threshold(&DMatrix::zeros(3, 4), 1.0).unwrap();
        assert_eq!(count, 0);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn svt_nuclear_norm_matches_gram_oracle() {
        let m = random_matrix(10, 6, 5);
        let (out, count) = singular_value_threshold(&m, 0.5).unwrap();
        let before = singular_values_via_gram(&m);
        let expected: f64 = before.iter().map(|s| (s - 0.5).max(0.0)).sum();
        let nuclear: f64 = singular_values_via_gram(&out).iter().sum();
        assert!((nuclear - expected).abs() < 1e-9, "{nuclear} vs {expected}");
        assert_eq!(count, before.iter().filter(|&&s| s > 0.5).count());
    }

    #[test]
    fn numerical_rank_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![10.0, 5.0, 1e-9]));
        assert_eq!(numerical_rank(&d, 1e-6).unwrap(), 2);
        assert_eq!(numerical_rank(&DMatrix::zeros(4, 7), 1e-6).unwrap(), 0);

        let a = random_matrix(50, 3, 1);
        let b = random_matrix(3, 40, 2);
        assert_eq!(numerical_rank(&(a * b), 1e-6).unwrap(), 3);
    }

    #[test]
    fn decompose_zero_matrix() {
        let d = decompose(&DMatrix::zeros(3, 5), &SolverOptions::default()).unwrap();
        assert!(d.converged);
        assert_eq!(d.rank, 0);
        assert!(d.low_rank.iter().chain(d.sparse.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn decompose_rank_one_positive_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = nalgebra::DVector::from_fn(30, |_, _| rng.random_range(1.0..5.0));
        let v = nalgebra::DVector::from_fn(20, |_, _| rng.random_range(1.0..5.0));
        let x = &u * v.transpose();
        let d = decompose(&x, &SolverOptions::default()).unwrap();
        assert!(d.converged);
        assert_eq!(d.rank, 1);
        assert!((&d.low_rank - &x).norm() / x.norm() <= 1e-6);
        assert!(d.sparse.norm() / x.norm() <= 1e-6);
    }

    #[test]
    fn decompose_rejects_empty_and_invalid_options() {
        assert!(decompose(&DMatrix::zeros(0, 3), &SolverOptions::default()).is_err());
        let opts = SolverOptions {
            mu_growth: 1.0,
            ..Default::default()
        };
        assert!(decompose(&DMatrix::zeros(2, 2), &opts).is_err());
    }

    #[test]
    fn degenerate_shapes_are_allowed() {
        let row = DMatrix::from_row_slice(1, 4, &[3.0, 4.0, 5.0, 6.0]);
        let d = decompose(&row, &SolverOptions::default()).unwrap();
        assert!(d.rank <= 1);
        let col = row.transpose();
        let d = decompose(&col, &SolverOptions::default()).unwrap();
        assert!(d.rank <= 1);
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let x = random_matrix(20, 20, 4);
        let opts = SolverOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let d = decompose(&x, &opts).unwrap();
        assert!(!d.converged);
        assert_eq!(d.iterations, 2);
    }
}
