//! Linear regression baselines: unregularized least squares, ridge and
//! lasso.
//!
//! All three fit an unpenalized intercept by centering `X` and `y` first.

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinearError {
    #[error("X has {rows} rows but y has {len} entries")]
    LengthMismatch { rows: usize, len: usize },
    #[error("empty training data")]
    Empty,
    #[error("lambda must be a finite non-negative number, got {0}")]
    InvalidLambda(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("model expects {expected} columns, got {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("linear system could not be factorized")]
    Factorization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    None,
    L2,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub penalty: Penalty,
    pub converged: bool,
    pub iterations: usize,
}

impl LinearFit {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, LinearError> {
        if x.ncols() != self.coefficients.len() {
            return Err(LinearError::ColumnMismatch { expected: self.coefficients.len(), found: x.ncols() });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| self.intercept + row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// JSON record `{penalty, lambda, intercept, coefficients, column_meta_digest}`.
    pub fn to_json(&self, column_meta_digest: &str) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            penalty: Penalty,
            lambda: f64,
            intercept: f64,
            coefficients: &'a [f64],
            column_meta_digest: &'a str,
        }
        serde_json::to_string(&Record {
            penalty: self.penalty,
            lambda: self.lambda,
            intercept: self.intercept,
            coefficients: &self.coefficients,
            column_meta_digest,
        })
        .expect("model serialization")
    }
}

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_LASSO_TOL: f64 = 1e-7;
pub const DEFAULT_LASSO_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoOptions {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { lambda: DEFAULT_LAMBDA, tol: DEFAULT_LASSO_TOL, max_iter: DEFAULT_LASSO_MAX_ITER }
    }
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(x: ArrayView2<f64>, y: &[f64]) -> Result<Centered, LinearError> {
    let (n, p) = x.dim();
    if n != y.len() {
        return Err(LinearError::LengthMismatch { rows: n, len: y.len() });
    }
    if n == 0 {
        return Err(LinearError::Empty);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(LinearError::NonFinite);
    }
    let x_mean: Vec<f64> = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[[i, j]] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    Ok(Centered { x: xc, y: yc, x_mean, y_mean })
}

fn intercept(c: &Centered, beta: &[f64]) -> f64 {
    c.y_mean - c.x_mean.iter().zip(beta).map(|(m, b)| m * b).sum::<f64>()
}

/// Minimum-norm least-squares solution of `a · x ≈ b` and the numerical rank.
///
/// Uses a complete orthogonal decomposition: column-pivoted QR `A P = Q R`,
/// rank truncation on `|R_ii|`, then an unpivoted QR of the leading rows of
/// `R` transposed so the solution lies in the row space of `A`.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DVector::zeros(n), 0);
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows();
    let scale = r[(0, 0)].abs();
    let tol = (m.max(n) as f64) * f64::EPSILON * scale;
    let rank = if scale == 0.0 { 0 } else { (0..k).take_while(|&i| r[(i, i)].abs() > tol).count() };
    if rank == 0 {
        return (DVector::zeros(n), 0);
    }
    let qtb = qr.q().tr_mul(b);
    let c = qtb.rows(0, rank).into_owned();
    let r1 = r.rows(0, rank).into_owned();
    // R1 = Tᵀ Zᵀ with R1ᵀ = Z T.
    let zt = r1.transpose().qr();
    let z = zt.q();
    let t = zt.r();
    let w = t
        .transpose()
        .solve_lower_triangular(&c)
        .expect("rank-truncated triangle has a non-zero diagonal");
    let mut y = z * w;
    qr.p().inv_permute_rows(&mut y);
    (y, rank)
}

/// Ordinary least squares; rank-deficient designs get the minimum-norm
/// coefficient vector.
pub fn fit_ols(x: ArrayView2<f64>, y: &[f64]) -> Result<LinearFit, LinearError> {
    let c = center(x, y)?;
    let (beta, _) = min_norm_lstsq(&c.x, &c.y);
    let beta: Vec<f64> = beta.iter().copied().collect();
    Ok(LinearFit {
        intercept: intercept(&c, &beta),
        coefficients: beta,
        lambda: 0.0,
        penalty: Penalty::None,
        converged: true,
        iterations: 1,
    })
}

/// Minimizes `Σ(y − Xβ − b)² + λ‖β‖²`.
pub fn fit_ridge(x: ArrayView2<f64>, y: &[f64], lambda: f64) -> Result<LinearFit, LinearError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LinearError::InvalidLambda(lambda));
    }
    if lambda == 0.0 {
        let mut fit = fit_ols(x, y)?;
        fit.penalty = Penalty::L2;
        return Ok(fit);
    }
    let c = center(x, y)?;
    let (n, p) = c.x.shape();
    let beta = if p <= n {
        let mut gram = c.x.tr_mul(&c.x);
        for i in 0..p {
            gram[(i, i)] += lambda;
        }
        let rhs = c.x.tr_mul(&c.y);
        gram.cholesky().ok_or(LinearError::Factorization)?.solve(&rhs)
    } else {
        // Dual form: β = Xᵀ (X Xᵀ + λI)⁻¹ y.
        let mut gram = &c.x * c.x.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let alpha = gram.cholesky().ok_or(LinearError::Factorization)?.solve(&c.y);
        c.x.tr_mul(&alpha)
    };
    let beta: Vec<f64> = beta.iter().copied().collect();
    Ok(LinearFit {
        intercept: intercept(&c, &beta),
        coefficients: beta,
        lambda,
        penalty: Penalty::L2,
        converged: true,
        iterations: 1,
    })
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest λ for which every lasso coefficient is zero:
/// `max_j |Xⱼᵀ(y − ȳ)| / n` on centered columns.
pub fn lasso_lambda_max(x: ArrayView2<f64>, y: &[f64]) -> Result<f64, LinearError> {
    let c = center(x, y)?;
    let n = c.x.nrows() as f64;
    Ok(c.x.column_iter().map(|col| (col.dot(&c.y) / n).abs()).fold(0.0, f64::max))
}

/// Lasso objective `(1/2n)‖y − Xβ − b‖² + λ‖β‖₁`.
pub fn lasso_objective(x: ArrayView2<f64>, y: &[f64], fit: &LinearFit) -> Result<f64, LinearError> {
    let pred = fit.predict(x)?;
    let n = y.len() as f64;
    let rss: f64 = pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(rss / (2.0 * n) + fit.lambda * fit.coefficients.iter().map(|b| b.abs()).sum::<f64>())
}

/// Cyclic coordinate descent on `(1/2n)‖y − Xβ − b‖² + λ‖β‖₁`.
pub fn fit_lasso(x: ArrayView2<f64>, y: &[f64], opts: &LassoOptions) -> Result<LinearFit, LinearError> {
    fit_lasso_traced(x, y, opts).map(|(fit, _)| fit)
}

/// Like [`fit_lasso`] and also returns the objective after every sweep.
pub fn fit_lasso_traced(
    x: ArrayView2<f64>,
    y: &[f64],
    opts: &LassoOptions,
) -> Result<(LinearFit, Vec<f64>), LinearError> {
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(LinearError::InvalidLambda(opts.lambda));
    }
    if !(opts.tol > 0.0) {
        return Err(LinearError::InvalidTolerance(opts.tol));
    }
    let c = center(x, y)?;
    let (n, p) = c.x.shape();
    let nf = n as f64;
    let col_sq: Vec<f64> = c.x.column_iter().map(|col| col.norm_squared() / nf).collect();
    let mut beta = vec![0.0; p];
    let mut resid = c.y.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_iter {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = c.x.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) / nf + col_sq[j] * old;
            let new = soft_threshold(rho, opts.lambda) / col_sq[j];
            let delta = new - old;
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let obj = resid.norm_squared() / (2.0 * nf) + opts.lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
        trace.push(obj);
        if max_delta < opts.tol {
            converged = true;
            break;
        }
    }
    Ok((
        LinearFit {
            intercept: intercept(&c, &beta),
            coefficients: beta,
            lambda: opts.lambda,
            penalty: Penalty::L1,
            converged,
            iterations: sweeps,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_problem(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        (x, y)
    }

    #[test]
    fn exact_line() {
        let x = array![[1.0], [2.0], [3.0]];
        let fit = fit_ols(x.view(), &[2.0, 4.0, 6.0]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        let pred = fit.predict(x.view()).unwrap();
        assert!(pred.iter().zip([2.0, 4.0, 6.0]).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn constant_target() {
        let (x, _) = random_problem(10, 3, 1);
        let fit = fit_ols(x.view(), &[4.0; 10]).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-12));
        assert!((fit.intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_splits_weight_evenly() {
        // Minimum norm splits the coefficient of a duplicated column in half.
        let x = array![[1.0, 1.0], [2.0, 2.0], [4.0, 4.0], [5.0, 5.0]];
        let y = [3.0, 6.0, 12.0, 15.0];
        let fit = fit_ols(x.view(), &y).unwrap();
        assert!((fit.coefficients[0] - 1.5).abs() < 1e-10, "{:?}", fit.coefficients);
        assert!((fit.coefficients[1] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn min_norm_matches_pseudo_inverse_when_wide() {
        let (x, y) = random_problem(6, 10, 3);
        let a = DMatrix::from_fn(6, 10, |i, j| x[[i, j]]);
        let b = DVector::from_vec(y.clone());
        let (sol, rank) = min_norm_lstsq(&a, &b);
        assert_eq!(rank, 6);
        let pinv = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
        assert!((sol - pinv).norm() < 1e-9);
    }

    #[test]
    fn ridge_lambda_zero_is_ols() {
        let (x, y) = random_problem(30, 4, 5);
        let a = fit_ols(x.view(), &y).unwrap();
        let b = fit_ridge(x.view(), &y, 0.0).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_huge_lambda_shrinks_to_zero() {
        let (x, y) = random_problem(30, 4, 6);
        let fit = fit_ridge(x.view(), &y, 1e12).unwrap();
        let norm = fit.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(norm < 1e-6);
    }

    #[test]
    fn ridge_primal_and_dual_agree() {
        let (x, y) = random_problem(8, 12, 7);
        let dual = fit_ridge(x.view(), &y, 0.5).unwrap();
        // primal route on the same centered data
        let c = center(x.view(), &y).unwrap();
        let mut gram = c.x.tr_mul(&c.x);
        for i in 0..12 {
            gram[(i, i)] += 0.5;
        }
        let primal = gram.cholesky().unwrap().solve(&c.x.tr_mul(&c.y));
        for (u, v) in dual.coefficients.iter().zip(primal.iter()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let (x, y) = random_problem(5, 2, 8);
        assert_eq!(fit_ridge(x.view(), &y, -1.0), Err(LinearError::InvalidLambda(-1.0)));
        let opts = LassoOptions { lambda: -0.1, ..Default::default() };
        assert!(fit_lasso(x.view(), &y, &opts).is_err());
        let opts = LassoOptions { tol: 0.0, ..Default::default() };
        assert!(matches!(fit_lasso(x.view(), &y, &opts), Err(LinearError::InvalidTolerance(_))));
    }

    #[test]
    fn lasso_scalar_soft_threshold() {
        let x = array![[1.0], [-1.0]];
        let y = [1.0, -1.0];
        // xᵀy/n = 1, ‖x‖²/n = 1, so β = S(1, λ).
        for (lambda, expected) in [(0.5, 0.5), (0.25, 0.75), (1.0, 0.0), (2.0, 0.0)] {
            let fit = fit_lasso(x.view(), &y, &LassoOptions { lambda, ..Default::default() }).unwrap();
            assert!((fit.coefficients[0] - expected).abs() < 1e-12, "λ={lambda}");
        }
    }

    #[test]
    fn lasso_at_lambda_max_is_all_zero() {
        let (x, y) = random_problem(40, 6, 9);
        let lmax = lasso_lambda_max(x.view(), &y).unwrap();
        let fit = fit_lasso(x.view(), &y, &LassoOptions { lambda: lmax, ..Default::default() }).unwrap();
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        let below = fit_lasso(x.view(), &y, &LassoOptions { lambda: 0.9 * lmax, ..Default::default() }).unwrap();
        assert!(below.coefficients.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn lasso_max_iter_reports_non_convergence() {
        let (x, y) = random_problem(40, 6, 10);
        let opts = LassoOptions { lambda: 0.0, tol: 1e-300, max_iter: 3 };
        let fit = fit_lasso(x.view(), &y, &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 3);
    }

    #[test]
    fn predict_checks_columns() {
        let fit = fit_ols(array![[1.0], [2.0]].view(), &[1.0, 2.0]).unwrap();
        assert!(matches!(
            fit.predict(array![[1.0, 2.0]].view()),
            Err(LinearError::ColumnMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn serializes_with_digest() {
        let fit = fit_ols(array![[1.0], [2.0]].view(), &[1.0, 3.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fit.to_json("abc")).unwrap();
        assert_eq!(v["penalty"], "none");
        assert_eq!(v["column_meta_digest"], "abc");
        assert_eq!(v["coefficients"].as_array().unwrap().len(), 1);
    }
}
