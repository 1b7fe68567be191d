//! Average partial effects `δ = (NT)⁻¹ Σ_it Δ(Y_it, X_it, β, α_i γ_t)`, their
//! analytical bias corrections and standard errors.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::bias::{
    analytic_correction, normal_critical_value, period_denominator, solve_w, spectral_sum, unit_denominator,
    CellDerivatives, PluginState,
};
use crate::error::{Error, Result};
use crate::estimator::{profile_effects, FitOptions, FitResult, Params};
use crate::family::Family;
use crate::panel::Panel;
use crate::projection::psi_projection;

/// Built-in partial effects. Regressor indices are 0-based here and 1-based
/// in the string form (`binary:k=1` is the first regressor).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectSpec {
    /// `m(β_k + X_{-k}'β_{-k} + π) − m(X_{-k}'β_{-k} + π)` with `m` the
    /// conditional mean.
    BinaryDiff { k: usize },
    /// `β_k m'(X'β + π)`.
    ContinuousDeriv { k: usize },
    /// `(Y − X'β − π)²`, the error variance in the Gaussian model.
    LinearVariance,
}

/// `Δ` and its derivatives at one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectValue {
    pub value: f64,
    pub d_pi: f64,
    pub d_pi2: f64,
    pub d_beta: Vec<f64>,
}

impl EffectSpec {
    pub fn validate(&self, family: &Family, n_regressors: usize) -> Result<()> {
        match *self {
            EffectSpec::BinaryDiff { k } | EffectSpec::ContinuousDeriv { k } if k >= n_regressors => Err(Error::Argument(
                format!("effect refers to regressor {} but the panel has {n_regressors}", k + 1),
            )),
            EffectSpec::LinearVariance if !matches!(family, Family::Linear { .. }) => Err(Error::Argument(
                "the variance effect is only defined for the linear family".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Evaluates `Δ(y, x, β, π)` and its derivatives in `π` and `β`.
    pub fn evaluate(&self, family: &Family, y: f64, x: &[f64], beta: &Array1<f64>, pi: f64) -> EffectValue {
        let xb: f64 = x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let z = xb + pi;
        match *self {
            EffectSpec::BinaryDiff { k } => {
                let z0 = z - x[k] * beta[k];
                let z1 = z0 + beta[k];
                let (m0, m1) = (family.mean(z0), family.mean(z1));
                let diff1 = m1.m1 - m0.m1;
                let d_beta = (0..x.len())
                    .map(|j| if j == k { m1.m1 } else { x[j] * diff1 })
                    .collect();
                EffectValue {
                    value: m1.m0 - m0.m0,
                    d_pi: diff1,
                    d_pi2: m1.m2 - m0.m2,
                    d_beta,
                }
            }
            EffectSpec::ContinuousDeriv { k } => {
                let m = family.mean(z);
                let bk = beta[k];
                let d_beta = (0..x.len())
                    .map(|j| bk * m.m2 * x[j] + if j == k { m.m1 } else { 0.0 })
                    .collect();
                EffectValue {
                    value: bk * m.m1,
                    d_pi: bk * m.m2,
                    d_pi2: bk * m.m3,
                    d_beta,
                }
            }
            EffectSpec::LinearVariance => {
                let e = y - z;
                EffectValue {
                    value: e * e,
                    d_pi: -2.0 * e,
                    d_pi2: 2.0,
                    d_beta: x.iter().map(|xj| -2.0 * e * xj).collect(),
                }
            }
        }
    }
}

impl fmt::Display for EffectSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EffectSpec::BinaryDiff { k } => write!(f, "binary:k={}", k + 1),
            EffectSpec::ContinuousDeriv { k } => write!(f, "deriv:k={}", k + 1),
            EffectSpec::LinearVariance => f.write_str("variance"),
        }
    }
}

impl FromStr for EffectSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "variance" {
            return Ok(EffectSpec::LinearVariance);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Argument(format!("unknown effect '{s}' (expected binary:k=<j>, deriv:k=<j> or variance)")))?;
        let k: usize = rest
            .trim()
            .strip_prefix("k=")
            .and_then(|v| v.trim().parse().ok())
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::Argument(format!("effect '{s}' needs k=<regressor number, from 1>")))?;
        match kind.trim() {
            "binary" => Ok(EffectSpec::BinaryDiff { k: k - 1 }),
            "deriv" => Ok(EffectSpec::ContinuousDeriv { k: k - 1 }),
            other => Err(Error::Argument(format!("unknown effect kind '{other}'"))),
        }
    }
}

/// Cell-level effect values at a set of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectCells {
    pub delta: Array2<f64>,
    pub d_pi: Array2<f64>,
    pub d_pi2: Array2<f64>,
    /// `(NT)⁻¹ Σ_it ∂_βΔ_it`.
    pub d_beta_mean: Array1<f64>,
}

impl EffectCells {
    pub fn mean(&self) -> f64 {
        self.delta.mean().unwrap_or(0.0)
    }
}

pub fn effect_cells(panel: &Panel, family: &Family, spec: &EffectSpec, params: &Params) -> Result<EffectCells> {
    spec.validate(family, panel.n_regressors())?;
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let x = panel.regressors().as_slice().expect("standard layout");
    let mut delta = Array2::zeros((n, t));
    let mut d_pi = Array2::zeros((n, t));
    let mut d_pi2 = Array2::zeros((n, t));
    let mut d_beta = Array1::zeros(k);
    for i in 0..n {
        for tt in 0..t {
            let c = i * t + tt;
            let pi = params.alpha[i] * params.gamma[tt];
            let v = spec.evaluate(family, panel.outcomes()[[i, tt]], &x[c * k..(c + 1) * k], &params.beta, pi);
            delta[[i, tt]] = v.value;
            d_pi[[i, tt]] = v.d_pi;
            d_pi2[[i, tt]] = v.d_pi2;
            for (acc, g) in d_beta.iter_mut().zip(&v.d_beta) {
                *acc += g;
            }
        }
    }
    Ok(EffectCells {
        delta,
        d_pi,
        d_pi2,
        d_beta_mean: d_beta / (n * t) as f64,
    })
}

/// `δ̂ = (NT)⁻¹ Σ Δ(Y, X, β, α̂γ̂)`. With `refit`, the effects are first
/// re-profiled at `params.beta` (starting from `params`). Returns the
/// estimate and the parameters it was evaluated at.
pub fn estimate_ape(
    panel: &Panel,
    family: &Family,
    spec: &EffectSpec,
    params: &Params,
    refit: Option<&FitOptions>,
) -> Result<(f64, Params)> {
    let at = match refit {
        Some(opts) => profile_effects(panel, family, &params.beta, (&params.alpha, &params.gamma), opts)?.params,
        None => params.clone(),
    };
    let cells = effect_cells(panel, family, spec, &at)?;
    Ok((cells.mean(), at))
}

/// General plug-in time-series bias of `δ̂`.
pub fn plugin_b_delta(
    d: &CellDerivatives,
    gamma: &Array1<f64>,
    cells: &EffectCells,
    psi: &Array2<f64>,
    trim: usize,
) -> Result<f64> {
    let (n, t) = psi.dim();
    if trim >= t {
        return Err(Error::Argument(format!("trimming L={trim} must be below T={t}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let den = unit_denominator(d, gamma, i)?;
        let first = spectral_sum(d, gamma, psi.view(), i, trim);
        let second: f64 = (0..t)
            .map(|tt| gamma[tt] * gamma[tt] * (cells.d_pi2[[i, tt]] - d.d3[[i, tt]] * psi[[i, tt]]))
            .sum();
        total += first / den - 0.5 * second / den;
    }
    Ok(total / n as f64)
}

/// General plug-in cross-section bias of `δ̂`.
pub fn plugin_d_delta(d: &CellDerivatives, alpha: &Array1<f64>, cells: &EffectCells, psi: &Array2<f64>) -> Result<f64> {
    let (n, t) = psi.dim();
    let mut total = 0.0;
    for tt in 0..t {
        let den = period_denominator(d, alpha, tt)?;
        let num: f64 = (0..n)
            .map(|i| {
                alpha[i]
                    * alpha[i]
                    * (d.d1[[i, tt]] * d.d2[[i, tt]] * psi[[i, tt]] - 0.5 * cells.d_pi2[[i, tt]]
                        + 0.5 * d.d3[[i, tt]] * psi[[i, tt]])
            })
            .sum();
        total += num / den;
    }
    Ok(total / t as f64)
}

/// `B̂^δ`. The variance effect uses its exact value `−δ̂`: the general
/// plug-in omits the covariance between `Δ_it` and the score of the same
/// observation, which is the whole bias when `Δ` depends on `Y`.
pub fn compute_b_delta(
    spec: &EffectSpec,
    d: &CellDerivatives,
    gamma: &Array1<f64>,
    cells: &EffectCells,
    psi: &Array2<f64>,
    trim: usize,
) -> Result<f64> {
    match spec {
        EffectSpec::LinearVariance => Ok(-cells.mean()),
        _ => plugin_b_delta(d, gamma, cells, psi, trim),
    }
}

/// `D̂^δ`, with the same special case as [`compute_b_delta`].
pub fn compute_d_delta(
    spec: &EffectSpec,
    d: &CellDerivatives,
    alpha: &Array1<f64>,
    cells: &EffectCells,
    psi: &Array2<f64>,
) -> Result<f64> {
    match spec {
        EffectSpec::LinearVariance => Ok(-cells.mean()),
        _ => plugin_d_delta(d, alpha, cells, psi),
    }
}

/// `V̂^δ` under independent effects, together with the influence terms
/// `Γ̂_it = [mean ∂_βΔ̂]'Ŵ⁻¹ ∂_zℓ̂_it X_it − Ψ̂_it ∂_zℓ̂_it`. The return value
/// is the squared standard error, free of the convergence rate.
pub fn variance_delta(
    panel: &Panel,
    d: &CellDerivatives,
    cells: &EffectCells,
    psi: &Array2<f64>,
    w: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let delta_hat = cells.mean();
    let lin = if k > 0 { solve_w(w, &cells.d_beta_mean)? } else { Array1::zeros(0) };
    let x = panel.regressors();
    let mut gamma_inf = Array2::zeros((n, t));
    for i in 0..n {
        for tt in 0..t {
            let xw: f64 = (0..k).map(|kk| lin[kk] * x[[i, tt, kk]]).sum();
            gamma_inf[[i, tt]] = d.d1[[i, tt]] * (xw - psi[[i, tt]]);
        }
    }
    let centred = cells.delta.mapv(|v| v - delta_hat);
    let col_sums = centred.sum_axis(ndarray::Axis(0));
    let mut total = 0.0;
    for i in 0..n {
        let row = centred.row(i);
        let rs = row.sum();
        let cross: f64 = (0..t).map(|tt| row[tt] * (col_sums[tt] - row[tt])).sum();
        let own: f64 = gamma_inf.row(i).iter().map(|g| g * g).sum();
        total += rs * rs + cross + own;
    }
    let nt = (n * t) as f64;
    Ok(((total / (nt * nt)).max(0.0), gamma_inf))
}

/// `δ̃^A = δ̂ − B̂^δ/T − D̂^δ/N`.
pub fn correct_ape_analytic(delta_hat: f64, b_delta: f64, d_delta: f64, n: usize, t: usize) -> f64 {
    delta_hat - b_delta / t as f64 - d_delta / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApeOptions {
    pub trim: usize,
    pub level: f64,
    /// Evaluate `δ̂` at the analytically corrected `β̃` with re-profiled
    /// effects (the default) instead of at `(β̂, φ̂)`.
    pub correct_beta_first: bool,
    pub keep_influence: bool,
    pub fit: FitOptions,
}

impl Default for ApeOptions {
    fn default() -> Self {
        ApeOptions {
            trim: 1,
            level: 0.95,
            correct_beta_first: true,
            keep_influence: false,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApeReport {
    pub spec: EffectSpec,
    pub delta_hat: f64,
    pub b_delta: f64,
    pub d_delta: f64,
    pub v_delta: f64,
    pub delta_corrected: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub level: f64,
    /// Coefficients at which `δ̂` was evaluated.
    pub beta_used: Array1<f64>,
    pub gamma_influence: Option<Array2<f64>>,
}

/// Full analytical pipeline for one effect starting from a converged fit.
pub fn ape_analytic(panel: &Panel, family: &Family, fit: &FitResult, spec: &EffectSpec, opts: &ApeOptions) -> Result<ApeReport> {
    spec.validate(family, panel.n_regressors())?;
    let (n, t) = (panel.n_units(), panel.n_periods());
    let (w, params) = if panel.n_regressors() > 0 {
        let corr = analytic_correction(panel, family, fit, opts.trim, opts.level)?;
        let params = if opts.correct_beta_first {
            let p = &fit.params;
            profile_effects(panel, family, &corr.beta_corrected, (&p.alpha, &p.gamma), &opts.fit)?.params
        } else {
            fit.params.clone()
        };
        (corr.w_hat, params)
    } else {
        (Array2::zeros((0, 0)), fit.params.clone())
    };
    let state = PluginState::new(panel, family, &params)?;
    let cells = effect_cells(panel, family, spec, &params)?;
    let psi = psi_projection(&state.hessian, &state.inverse, &cells.d_pi);
    let b = compute_b_delta(spec, &state.derivs, &params.gamma, &cells, &psi, opts.trim)?;
    let d = compute_d_delta(spec, &state.derivs, &params.alpha, &cells, &psi)?;
    let (v, gamma_inf) = variance_delta(panel, &state.derivs, &cells, &psi, &w)?;
    let delta_hat = cells.mean();
    let corrected = correct_ape_analytic(delta_hat, b, d, n, t);
    let se = v.sqrt();
    let z = normal_critical_value(opts.level)?;
    Ok(ApeReport {
        spec: *spec,
        delta_hat,
        b_delta: b,
        d_delta: d,
        v_delta: v,
        delta_corrected: corrected,
        se,
        ci: (corrected - z * se, corrected + z * se),
        level: opts.level,
        beta_used: params.beta,
        gamma_influence: opts.keep_influence.then_some(gamma_inf),
    })
}
