//! Analytical bias correction for `β̂`: the information matrix `Ŵ`, the
//! time-series bias `B̂` (with a trimmed spectral sum) and the cross-section
//! bias `D̂`, all as plug-in sums at the estimates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimator::{FitResult, Params};
use crate::family::Family;
use crate::panel::Panel;
use crate::projection::{build_hessian, xi_residualize, HessianInverse, ProjectionResult};

/// `∂_zℓ`, `∂_{z²}ℓ`, `∂_{z³}ℓ` at every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDerivatives {
    pub d1: Array2<f64>,
    pub d2: Array2<f64>,
    pub d3: Array2<f64>,
}

pub fn cell_derivatives(panel: &Panel, family: &Family, params: &Params) -> Result<CellDerivatives> {
    panel.check_support(family)?;
    let z = params.index(panel);
    let (n, t) = z.dim();
    let (mut d1, mut d2, mut d3) = (Array2::zeros((n, t)), Array2::zeros((n, t)), Array2::zeros((n, t)));
    for ((i, tt), &zz) in z.indexed_iter() {
        let b = family.derivs(panel.outcomes()[[i, tt]], zz);
        d1[[i, tt]] = b.d1;
        d2[[i, tt]] = b.d2;
        d3[[i, tt]] = b.d3;
    }
    Ok(CellDerivatives { d1, d2, d3 })
}

/// Trimming used when the caller does not choose one: none for strictly
/// exogenous regressors, one lag otherwise.
pub fn default_trim(strictly_exogenous: bool) -> usize {
    if strictly_exogenous {
        0
    } else {
        1
    }
}

/// `Ŵ = −(NT)⁻¹ Σ_it ∂_{z²}ℓ̂_it X̃_it X̃_it'`. Errors if it is not positive
/// definite.
pub fn compute_w(d: &CellDerivatives, proj: &ProjectionResult) -> Result<Array2<f64>> {
    let (n, t, k) = proj.residual.dim();
    let mut w = Array2::zeros((k, k));
    for i in 0..n {
        for tt in 0..t {
            let x = proj.residual.slice(s![i, tt, ..]);
            let h = -d.d2[[i, tt]];
            for a in 0..k {
                for b in 0..=a {
                    w[[a, b]] += h * x[a] * x[b];
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            w[[b, a]] = w[[a, b]];
        }
    }
    w /= (n * t) as f64;
    check_positive_definite(&w)?;
    Ok(w)
}

/// Smallest eigenvalue of a symmetric matrix (`+∞` for an empty one).
pub fn min_eigenvalue(m: &Array2<f64>) -> f64 {
    eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

fn eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let k = m.nrows();
    if k == 0 {
        return Vec::new();
    }
    let dm = DMatrix::from_fn(k, k, |r, c| m[[r, c]]);
    let mut v: Vec<f64> = SymmetricEigen::new(dm).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn check_positive_definite(m: &Array2<f64>) -> Result<()> {
    let ev = eigenvalues(m);
    let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if ev.iter().any(|&v| !(v > 1e-12 * max) || !v.is_finite()) {
        return Err(Error::SingularInformation { eigenvalues: ev });
    }
    Ok(())
}

/// Solves `W x = v` for symmetric positive definite `W`.
pub fn solve_w(w: &Array2<f64>, v: &Array1<f64>) -> Result<Array1<f64>> {
    let k = w.nrows();
    if k == 0 {
        return Ok(Array1::zeros(0));
    }
    let dm = DMatrix::from_fn(k, k, |r, c| w[[r, c]]);
    let chol = dm.cholesky().ok_or_else(|| Error::SingularInformation {
        eigenvalues: eigenvalues(w),
    })?;
    let x = chol.solve(&DVector::from_iterator(k, v.iter().copied()));
    Ok(Array1::from_iter(x.iter().copied()))
}

/// `Ŵ⁻¹`.
pub fn invert_w(w: &Array2<f64>) -> Result<Array2<f64>> {
    let k = w.nrows();
    let mut inv = Array2::zeros((k, k));
    for c in 0..k {
        let mut e = Array1::zeros(k);
        e[c] = 1.0;
        inv.column_mut(c).assign(&solve_w(w, &e)?);
    }
    Ok(inv)
}

/// `Σ_{j=0}^{L} [T/(T−j)] Σ_{t=j+1}^{T} γ_t γ_{t−j} ∂_zℓ_{i,t−j} ∂_{z²}ℓ_it q_it`
/// for one unit.
pub(crate) fn spectral_sum(d: &CellDerivatives, gamma: &Array1<f64>, q: ArrayView2<f64>, i: usize, trim: usize) -> f64 {
    let t_len = gamma.len();
    let mut total = 0.0;
    for j in 0..=trim {
        let mut inner = 0.0;
        for t in j..t_len {
            inner += gamma[t] * gamma[t - j] * d.d1[[i, t - j]] * d.d2[[i, t]] * q[[i, t]];
        }
        total += t_len as f64 / (t_len - j) as f64 * inner;
    }
    total
}

pub(crate) fn unit_denominator(d: &CellDerivatives, gamma: &Array1<f64>, i: usize) -> Result<f64> {
    let den: f64 = (0..gamma.len()).map(|t| gamma[t] * gamma[t] * d.d2[[i, t]]).sum();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::DegenerateUnit(i));
    }
    Ok(den)
}

pub(crate) fn period_denominator(d: &CellDerivatives, alpha: &Array1<f64>, t: usize) -> Result<f64> {
    let den: f64 = (0..alpha.len()).map(|i| alpha[i] * alpha[i] * d.d2[[i, t]]).sum();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::DegeneratePeriod(t));
    }
    Ok(den)
}

fn check_trim(trim: usize, t: usize) -> Result<()> {
    if trim >= t {
        return Err(Error::Argument(format!("trimming L={trim} must be below T={t}")));
    }
    Ok(())
}

/// `B̂ = −N⁻¹ Σ_i [spectral sum + ½ Σ_t γ̂_t² ∂_{z³}ℓ̂_it X̃_it] / Σ_t γ̂_t² ∂_{z²}ℓ̂_it`.
pub fn compute_b(d: &CellDerivatives, gamma: &Array1<f64>, proj: &ProjectionResult, trim: usize) -> Result<Array1<f64>> {
    let (n, t, k) = proj.residual.dim();
    check_trim(trim, t)?;
    let mut b = Array1::zeros(k);
    for i in 0..n {
        let den = unit_denominator(d, gamma, i)?;
        for kk in 0..k {
            let xt = proj.residual.slice(s![.., .., kk]);
            let third: f64 = (0..t).map(|tt| gamma[tt] * gamma[tt] * d.d3[[i, tt]] * xt[[i, tt]]).sum();
            b[kk] += (spectral_sum(d, gamma, xt, i, trim) + 0.5 * third) / den;
        }
    }
    Ok(b * (-1.0 / n as f64))
}

/// `D̂ = −T⁻¹ Σ_t Σ_i α̂_i²[∂_zℓ̂ ∂_{z²}ℓ̂ X̃ + ½ ∂_{z³}ℓ̂ X̃] / Σ_i α̂_i² ∂_{z²}ℓ̂_it`.
pub fn compute_d(d: &CellDerivatives, alpha: &Array1<f64>, proj: &ProjectionResult) -> Result<Array1<f64>> {
    let (n, t, k) = proj.residual.dim();
    let mut out = Array1::zeros(k);
    for tt in 0..t {
        let den = period_denominator(d, alpha, tt)?;
        for kk in 0..k {
            let num: f64 = (0..n)
                .map(|i| {
                    let x = proj.residual[[i, tt, kk]];
                    alpha[i] * alpha[i] * (d.d1[[i, tt]] * d.d2[[i, tt]] * x + 0.5 * d.d3[[i, tt]] * x)
                })
                .sum();
            out[kk] += num / den;
        }
    }
    Ok(out * (-1.0 / t as f64))
}

/// `β̃^A = β̂ − Ŵ⁻¹B̂/T − Ŵ⁻¹D̂/N`.
pub fn correct_beta_analytic(
    beta_hat: &Array1<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    d: &Array1<f64>,
    n: usize,
    t: usize,
) -> Result<Array1<f64>> {
    let wb = solve_w(w, b)?;
    let wd = solve_w(w, d)?;
    Ok(beta_hat - &(wb / t as f64) - &(wd / n as f64))
}

/// Two-sided standard normal critical value for coverage `level`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("confidence level {level} must lie in (0, 1)")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + 0.5 * level))
}

/// `β̃_k ± z √(Ŵ⁻¹_kk / NT)`.
pub fn beta_confidence_interval(
    beta: &Array1<f64>,
    w: &Array2<f64>,
    n: usize,
    t: usize,
    level: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let z = normal_critical_value(level)?;
    let inv = invert_w(w)?;
    let nt = (n * t) as f64;
    let half = Array1::from_iter((0..beta.len()).map(|k| z * (inv[[k, k]] / nt).sqrt()));
    Ok((beta - &half, beta + &half))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionReport {
    pub w_hat: Array2<f64>,
    pub w_min_eigenvalue: f64,
    pub b_hat: Array1<f64>,
    pub d_hat: Array1<f64>,
    pub beta_hat: Array1<f64>,
    pub beta_corrected: Array1<f64>,
    pub trimming_l: usize,
    pub ci_lower: Array1<f64>,
    pub ci_upper: Array1<f64>,
    pub level: f64,
}

/// Hessian, projections and derivatives at a set of estimates, shared by the
/// coefficient and partial-effect corrections.
#[derive(Debug, Clone)]
pub struct PluginState {
    pub params: Params,
    pub derivs: CellDerivatives,
    pub hessian: crate::projection::IncidentalHessian,
    pub inverse: HessianInverse,
    pub projection: ProjectionResult,
}

impl PluginState {
    pub fn new(panel: &Panel, family: &Family, params: &Params) -> Result<Self> {
        let derivs = cell_derivatives(panel, family, params)?;
        let hessian = build_hessian(panel, family, params)?;
        let inverse = HessianInverse::new(&hessian)?;
        let projection = xi_residualize(panel, &hessian, &inverse);
        Ok(PluginState {
            params: params.clone(),
            derivs,
            hessian,
            inverse,
            projection,
        })
    }
}

/// Full analytical correction of `β̂` with confidence intervals.
pub fn analytic_correction(panel: &Panel, family: &Family, fit: &FitResult, trim: usize, level: f64) -> Result<CorrectionReport> {
    if panel.n_regressors() == 0 {
        return Err(Error::Argument("coefficient correction needs at least one regressor".into()));
    }
    let state = PluginState::new(panel, family, &fit.params)?;
    correction_from_state(&state, panel.n_units(), panel.n_periods(), trim, level)
}

pub fn correction_from_state(state: &PluginState, n: usize, t: usize, trim: usize, level: f64) -> Result<CorrectionReport> {
    let w = compute_w(&state.derivs, &state.projection)?;
    let b = compute_b(&state.derivs, &state.params.gamma, &state.projection, trim)?;
    let d = compute_d(&state.derivs, &state.params.alpha, &state.projection)?;
    let beta_corrected = correct_beta_analytic(&state.params.beta, &w, &b, &d, n, t)?;
    let (ci_lower, ci_upper) = beta_confidence_interval(&beta_corrected, &w, n, t, level)?;
    Ok(CorrectionReport {
        w_min_eigenvalue: min_eigenvalue(&w),
        w_hat: w,
        b_hat: b,
        d_hat: d,
        beta_hat: state.params.beta.clone(),
        beta_corrected,
        trimming_l: trim,
        ci_lower,
        ci_upper,
        level,
    })
}
