//! Best rank-one least-squares approximation of an outcome matrix, computed
//! by power iteration. In the Gaussian model without regressors this is the
//! maximum-likelihood fit, so it serves as an independent check on the
//! alternating estimator.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::estimator::{finalize_effects, fit_ife, objective, FitOptions, Params};
use crate::family::Family;
use crate::panel::Panel;

const START_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Fit {
    pub alpha: Array1<f64>,
    pub gamma: Array1<f64>,
    /// `Σ (Y − αγ')²`.
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub singular_value: f64,
    pub second_singular_value: f64,
    /// Top two singular values agree within the tolerance, so the leading
    /// direction is not unique.
    pub ambiguous: bool,
}

/// Sweep cap for a matrix with `nt` cells.
pub fn max_sweeps(nt: usize) -> usize {
    ((10.0 * (nt as f64).ln()).ceil() as usize).max(10_000)
}

/// Leading eigenpair of a symmetric positive semidefinite matrix.
fn power_iteration(m: &DMatrix<f64>, start: DVector<f64>, tol: f64, max_iter: usize) -> (f64, DVector<f64>, usize, bool) {
    let mut u = start.normalize();
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let next = m * &u;
        let norm = next.norm();
        if norm == 0.0 {
            return (0.0, u, it, true);
        }
        let next = next / norm;
        let change = (&next - &u).amax();
        lambda = next.dot(&(m * &next));
        u = next;
        if change <= tol {
            return (lambda, u, it, true);
        }
    }
    (lambda, u, max_iter, false)
}

/// Rank-one fit `(α, γ) = (√σ₁ u, √σ₁ v)` with the estimator's
/// normalisation and sign convention.
pub fn rank1_fit(y: &Array2<f64>, tol: f64) -> Result<Rank1Fit> {
    let (n, t) = y.dim();
    if n == 0 || t == 0 || y.iter().all(|&v| v == 0.0) {
        return Err(Error::Argument("outcome matrix must be nonzero".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("outcome matrix must be finite".into()));
    }
    let ym = DMatrix::from_fn(n, t, |i, tt| y[[i, tt]]);
    let units_side = n <= t;
    let gram = if units_side { &ym * ym.transpose() } else { ym.transpose() * &ym };
    let dim = gram.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let start = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
    let cap = max_sweeps(n * t);
    let (lambda1, u, iterations, converged) = power_iteration(&gram, start.clone(), tol, cap);

    // second eigenvalue of the deflated matrix, for the tie warning
    let deflated = &gram - &u * u.transpose() * lambda1;
    let second_start = &start - &u * u.dot(&start);
    let lambda2 = if dim > 1 && second_start.norm() > 0.0 {
        power_iteration(&deflated, second_start, tol, cap).0.max(0.0)
    } else {
        0.0
    };
    let sigma1 = lambda1.max(0.0).sqrt();
    let sigma2 = lambda2.sqrt();
    let (left, right) = if units_side {
        (u.clone(), ym.transpose() * &u / sigma1)
    } else {
        (&ym * &u / sigma1, u.clone())
    };
    let root = sigma1.sqrt();
    let alpha = Array1::from_iter(left.iter().map(|v| v * root));
    let gamma = Array1::from_iter(right.iter().map(|v| v * root));
    let (alpha, gamma) = finalize_effects(&alpha, &gamma)?;
    let total: f64 = y.iter().map(|v| v * v).sum();
    Ok(Rank1Fit {
        alpha,
        gamma,
        sse: (total - sigma1 * sigma1).max(0.0),
        iterations,
        converged,
        singular_value: sigma1,
        second_singular_value: sigma2,
        ambiguous: (sigma1 - sigma2) <= tol.sqrt() * sigma1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    /// `max_it |α̂γ̂'_ife − α̂γ̂'_pca|`.
    pub max_product_diff: f64,
    /// `|δ̂_ife − δ̂_pca|` with `δ̂ = (NT)⁻¹ Σ residual²`.
    pub delta_diff: f64,
    pub ife_loglik: f64,
    pub pca_loglik: f64,
    pub ambiguous: bool,
    pub ife_converged: bool,
}

impl OracleComparison {
    pub fn discrepancy(&self) -> f64 {
        self.max_product_diff.max(self.delta_diff)
    }
}

/// Fits the Gaussian model without regressors both ways and reports the
/// largest disagreement.
pub fn compare_with_ife(panel: &Panel, sigma: f64, opts: &FitOptions) -> Result<OracleComparison> {
    if panel.n_regressors() != 0 {
        return Err(Error::Argument("the principal-components check needs a panel without regressors".into()));
    }
    let family = Family::linear(sigma)?;
    let y = panel.outcomes();
    let fit = fit_ife(panel, &family, opts)?;
    let pca = rank1_fit(y, 1e-14)?;
    let nt = y.len() as f64;
    let ife_prod = fit.params.interactive();
    let pca_params = Params {
        beta: Array1::zeros(0),
        alpha: pca.alpha.clone(),
        gamma: pca.gamma.clone(),
    };
    let pca_prod = pca_params.interactive();
    let max_product_diff = ife_prod
        .iter()
        .zip(pca_prod.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let ife_sse: f64 = y.iter().zip(ife_prod.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(OracleComparison {
        max_product_diff,
        delta_diff: (ife_sse / nt - pca.sse / nt).abs(),
        ife_loglik: fit.loglik,
        pca_loglik: objective(panel, &family, &pca_params)?,
        ambiguous: pca.ambiguous,
        ife_converged: fit.converged,
    })
}
