//! Alternating concave maximisation of the interactive-effects likelihood.
//!
//! The objective is `𝓛(β, α, γ) = (NT)^{-1/2} Σ_{i,t} ℓ(Y_it, X_it'β + α_i γ_t)`.
//! It is not jointly concave, but it is concave in `γ` for fixed `(β, α)` and
//! in `(β, α)` for fixed `γ`. Each block update is a Newton ascent started at
//! the current iterate with backtracking, so the outer objective sequence is
//! non-decreasing.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::panel::Panel;

/// Coefficients and factor loadings. The index is `X_it'β + α_i γ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub beta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub gamma: Array1<f64>,
}

impl Params {
    /// `π_it = α_i γ_t`.
    pub fn interactive(&self) -> Array2<f64> {
        outer(&self.alpha, &self.gamma)
    }

    /// Full index `z_it`.
    pub fn index(&self, panel: &Panel) -> Array2<f64> {
        panel.linear_index(&self.beta) + self.interactive()
    }

    pub fn negated_effects(&self) -> Params {
        Params {
            beta: self.beta.clone(),
            alpha: -&self.alpha,
            gamma: -&self.gamma,
        }
    }

    fn check_dims(&self, panel: &Panel) -> Result<()> {
        if self.beta.len() != panel.n_regressors()
            || self.alpha.len() != panel.n_units()
            || self.gamma.len() != panel.n_periods()
        {
            return Err(Error::Argument(format!(
                "parameter dimensions (K={}, N={}, T={}) do not match panel ({}, {}, {})",
                self.beta.len(),
                self.alpha.len(),
                self.gamma.len(),
                panel.n_regressors(),
                panel.n_units(),
                panel.n_periods()
            )));
        }
        if self.beta.iter().chain(&self.alpha).chain(&self.gamma).any(|v| !v.is_finite()) {
            return Err(Error::Argument("parameters must be finite".into()));
        }
        Ok(())
    }
}

pub fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, t)| a[i] * b[t])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Stop when the outer objective increase falls below this.
    pub tol: f64,
    pub max_outer_iters: usize,
    /// Sup-norm of the (scaled) gradient at which inner Newton solves stop.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Backtracking contraction factor in (0, 1).
    pub damping: f64,
    /// Sup-norm of the full gradient also required for outer convergence.
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_outer_iters: 1000,
            newton_tol: 1e-10,
            max_newton_iters: 200,
            damping: 0.5,
            grad_tol: 1e-7,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.newton_tol > 0.0) || !(self.grad_tol > 0.0) {
            return Err(Error::Argument("tolerances must be positive".into()));
        }
        if self.max_outer_iters < 1 || self.max_newton_iters < 1 {
            return Err(Error::Argument("iteration limits must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Argument("damping must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Tight settings used when comparing against closed-form oracles.
    pub fn precise() -> Self {
        FitOptions {
            tol: 1e-15,
            grad_tol: 1e-11,
            newton_tol: 1e-12,
            max_outer_iters: 20_000,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Params,
    /// `𝓛` at the returned parameters.
    pub loglik: f64,
    pub outer_iterations: usize,
    /// Objective after iteration 0 and after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Sup-norm of the scaled gradient at the returned parameters.
    pub gradient_sup_norm: f64,
}

impl FitResult {
    /// Largest decrease between consecutive trace entries (0 if monotone).
    pub fn max_objective_decrease(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

/// Scaled gradient of `𝓛` with respect to each parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub beta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub gamma: Array1<f64>,
}

impl Gradient {
    pub fn sup_norm(&self) -> f64 {
        self.beta
            .iter()
            .chain(&self.alpha)
            .chain(&self.gamma)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn scale(panel: &Panel) -> f64 {
    1.0 / ((panel.n_units() * panel.n_periods()) as f64).sqrt()
}

/// `𝓛 = (NT)^{-1/2} Σ ℓ(Y_it, X_it'β + α_i γ_t)`.
pub fn objective(panel: &Panel, family: &Family, params: &Params) -> Result<f64> {
    params.check_dims(panel)?;
    panel.check_support(family)?;
    Ok(objective_unchecked(panel, family, params))
}

fn objective_unchecked(panel: &Panel, family: &Family, params: &Params) -> f64 {
    let z = params.index(panel);
    let total: f64 = panel
        .outcomes()
        .iter()
        .zip(z.iter())
        .map(|(&y, &zz)| family.loglik_unchecked(y, zz))
        .sum();
    total * scale(panel)
}

pub fn gradient(panel: &Panel, family: &Family, params: &Params) -> Result<Gradient> {
    params.check_dims(panel)?;
    panel.check_support(family)?;
    Ok(gradient_unchecked(panel, family, params))
}

fn gradient_unchecked(panel: &Panel, family: &Family, params: &Params) -> Gradient {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let z = params.index(panel);
    let y = panel.outcomes();
    let x = panel.regressors();
    let s = scale(panel);
    let mut gb = Array1::zeros(k);
    let mut ga = Array1::zeros(n);
    let mut gg = Array1::zeros(t);
    for i in 0..n {
        for tt in 0..t {
            let d1 = family.derivs(y[[i, tt]], z[[i, tt]]).d1;
            ga[i] += d1 * params.gamma[tt];
            gg[tt] += d1 * params.alpha[i];
            for kk in 0..k {
                gb[kk] += d1 * x[[i, tt, kk]];
            }
        }
    }
    Gradient {
        beta: gb * s,
        alpha: ga * s,
        gamma: gg * s,
    }
}

/// Which set of effects is free in a block update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// Free effects indexed by unit; the factor over periods is held fixed.
    Units,
    /// Free effects indexed by period; the factor over units is held fixed.
    Periods,
}

/// Flat views of the panel used by the block solvers.
struct Cells<'a> {
    y: &'a [f64],
    x: &'a [f64],
    n: usize,
    t: usize,
    k: usize,
}

impl<'a> Cells<'a> {
    fn new(panel: &'a Panel) -> Self {
        Cells {
            y: panel.outcomes().as_slice().expect("standard layout"),
            x: panel.regressors().as_slice().expect("standard layout"),
            n: panel.n_units(),
            t: panel.n_periods(),
            k: panel.n_regressors(),
        }
    }

    /// Number of free effects and length of the fixed factor.
    fn dims(&self, side: Side) -> (usize, usize) {
        match side {
            Side::Units => (self.n, self.t),
            Side::Periods => (self.t, self.n),
        }
    }

    #[inline]
    fn cell(&self, side: Side, e: usize, o: usize) -> usize {
        match side {
            Side::Units => e * self.t + o,
            Side::Periods => o * self.t + e,
        }
    }
}

/// 1-D concave maximisation by safeguarded Newton. `eval` returns
/// `(value, first derivative, second derivative)`; `grad_scale` converts the
/// derivative to the scale on which `tol` is measured.
fn newton_1d(
    eval: impl Fn(f64) -> (f64, f64, f64),
    start: f64,
    grad_scale: f64,
    opts: &FitOptions,
) -> std::result::Result<f64, ()> {
    let mut g = start;
    let (mut v, mut d1, mut d2) = eval(g);
    if !v.is_finite() {
        return Err(());
    }
    for _ in 0..opts.max_newton_iters {
        if (d1 * grad_scale).abs() <= opts.newton_tol {
            return Ok(g);
        }
        let step = -d1 / d2;
        if !(d2 < 0.0) || !step.is_finite() {
            return bracket_1d(&eval, g, grad_scale, opts);
        }
        let mut s = 1.0;
        loop {
            let cand = g + s * step;
            let (cv, c1, c2) = eval(cand);
            if cv.is_finite() && (cv >= v || (cv >= v - 4.0 * f64::EPSILON * (v.abs() + 1.0) && c1.abs() < d1.abs())) {
                let moved = (cand - g).abs();
                g = cand;
                v = cv;
                d1 = c1;
                d2 = c2;
                if moved <= 1e-15 * (1.0 + g.abs()) {
                    return Ok(g);
                }
                break;
            }
            s *= opts.damping;
            if s < 1e-14 {
                return bracket_1d(&eval, g, grad_scale, opts);
            }
        }
    }
    if (d1 * grad_scale).abs() <= opts.newton_tol.sqrt() {
        Ok(g)
    } else {
        Err(())
    }
}

/// Bisection on the sign of the derivative; the function is concave so the
/// derivative is decreasing.
fn bracket_1d(
    eval: &impl Fn(f64) -> (f64, f64, f64),
    start: f64,
    grad_scale: f64,
    opts: &FitOptions,
) -> std::result::Result<f64, ()> {
    let d0 = eval(start).1;
    if !d0.is_finite() {
        return Err(());
    }
    if (d0 * grad_scale).abs() <= opts.newton_tol {
        return Ok(start);
    }
    let dir = d0.signum();
    let mut width = 1.0;
    let (mut lo, mut hi) = (start, start);
    let mut found = false;
    for _ in 0..80 {
        let probe = start + dir * width;
        let d = eval(probe).1;
        if !d.is_finite() {
            return Err(());
        }
        if d.signum() != dir || d == 0.0 {
            if dir > 0.0 {
                hi = probe;
            } else {
                lo = probe;
            }
            found = true;
            break;
        }
        if dir > 0.0 {
            lo = probe;
        } else {
            hi = probe;
        }
        width *= 2.0;
    }
    if !found {
        return Err(());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let d = eval(mid).1;
        if (d * grad_scale).abs() <= opts.newton_tol || (hi - lo) <= 1e-15 * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if d > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-effect 1-D updates with `β` fixed: for `Side::Periods` each `γ_t`
/// maximises `Σ_i ℓ(Y_it, X_it'β + α_i γ_t)`.
fn profile_side(
    panel: &Panel,
    family: &Family,
    side: Side,
    xb: &Array2<f64>,
    factor: &Array1<f64>,
    start: &Array1<f64>,
    opts: &FitOptions,
) -> Result<Array1<f64>> {
    let cells = Cells::new(panel);
    let xb = xb.as_slice().expect("standard layout");
    let (m, o_len) = cells.dims(side);
    if factor.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateFactor(match side {
            Side::Periods => "alpha is identically zero".into(),
            Side::Units => "gamma is identically zero".into(),
        }));
    }
    let s = scale(panel);
    let mut out = Array1::zeros(m);
    for e in 0..m {
        let eval = |g: f64| {
            let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
            for o in 0..o_len {
                let c = cells.cell(side, e, o);
                let f = factor[o];
                let b = family.derivs(cells.y[c], xb[c] + f * g);
                v += b.value;
                d1 += b.d1 * f;
                d2 += b.d2 * f * f;
            }
            (v, d1, d2)
        };
        out[e] = newton_1d(eval, start[e], s, opts).map_err(|_| {
            Error::Convergence(match side {
                Side::Periods => format!("time effect update failed for period {e}"),
                Side::Units => format!("unit effect update failed for unit {e}"),
            })
        })?;
    }
    Ok(out)
}

/// Joint Newton ascent over `(β, effects)` for one side with the other
/// factor fixed. The Hessian is arrow-shaped: diagonal in the effects, dense
/// `K × K` in `β`, with a `K × M` coupling block, so each step costs
/// `O(NTK² + K³)`.
fn solve_coef_effects(
    panel: &Panel,
    family: &Family,
    side: Side,
    factor: &Array1<f64>,
    beta_start: &Array1<f64>,
    effects_start: &Array1<f64>,
    opts: &FitOptions,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let cells = Cells::new(panel);
    let (m, o_len) = cells.dims(side);
    let k = cells.k;
    let s = scale(panel);
    if factor.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateFactor("fixed factor is identically zero".into()));
    }

    // index for given (beta, effects)
    let index = |beta: &Array1<f64>, eff: &Array1<f64>| -> Vec<f64> {
        let mut z = vec![0.0; cells.n * cells.t];
        for (c, zc) in z.iter_mut().enumerate() {
            let xr = &cells.x[c * k..(c + 1) * k];
            *zc = xr.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        }
        for e in 0..m {
            for o in 0..o_len {
                z[cells.cell(side, e, o)] += eff[e] * factor[o];
            }
        }
        z
    };
    let value = |z: &[f64]| -> f64 {
        cells
            .y
            .iter()
            .zip(z)
            .map(|(&y, &zz)| family.loglik_unchecked(y, zz))
            .sum()
    };

    let mut beta = beta_start.clone();
    let mut eff = effects_start.clone();
    let mut z = index(&beta, &eff);
    let mut v = value(&z);
    if !v.is_finite() {
        return Err(Error::Convergence("objective is not finite at the starting values".into()));
    }

    for _ in 0..opts.max_newton_iters {
        let mut gb = vec![0.0; k];
        let mut hbb = DMatrix::<f64>::zeros(k, k);
        let mut ge = vec![0.0; m];
        let mut de = vec![0.0; m];
        let mut coup = vec![0.0; m * k];
        for e in 0..m {
            for o in 0..o_len {
                let c = cells.cell(side, e, o);
                let b = family.derivs(cells.y[c], z[c]);
                let f = factor[o];
                ge[e] += b.d1 * f;
                de[e] += b.d2 * f * f;
                if k > 0 {
                    let xr = &cells.x[c * k..(c + 1) * k];
                    for a in 0..k {
                        gb[a] += b.d1 * xr[a];
                        coup[e * k + a] += b.d2 * f * xr[a];
                        for bb in 0..=a {
                            hbb[(a, bb)] += b.d2 * xr[a] * xr[bb];
                        }
                    }
                }
            }
        }
        let gsup = gb.iter().chain(&ge).fold(0.0f64, |acc, g| acc.max(g.abs())) * s;
        if gsup <= opts.newton_tol {
            return Ok((beta, eff));
        }
        if let Some(e) = de.iter().position(|&d| !(d < 0.0)) {
            return Err(Error::DegenerateFactor(format!(
                "zero curvature for effect {e}: the fixed factor gives it no weight"
            )));
        }

        // Schur complement on β: (A − C'D⁻¹C) Δβ = −g_β + C'D⁻¹g_e
        let mut dbeta = DVector::zeros(k);
        if k > 0 {
            for a in 0..k {
                for bb in 0..a {
                    hbb[(bb, a)] = hbb[(a, bb)];
                }
            }
            let mut schur = -hbb;
            let mut rhs = DVector::from_iterator(k, gb.iter().copied());
            for e in 0..m {
                let ce = &coup[e * k..(e + 1) * k];
                for a in 0..k {
                    rhs[a] -= ce[a] * ge[e] / de[e];
                    for bb in 0..k {
                        schur[(a, bb)] += ce[a] * ce[bb] / de[e];
                    }
                }
            }
            // schur = −(A − C'D⁻¹C) is positive definite; solve schur Δβ = rhs
            let chol = Cholesky::new(schur).ok_or_else(|| {
                Error::Noncolinearity("coefficient block is singular after eliminating the effects".into())
            })?;
            dbeta = chol.solve(&rhs);
        }
        let mut deff = Array1::zeros(m);
        for e in 0..m {
            let ce = &coup[e * k..(e + 1) * k];
            let cb: f64 = ce.iter().zip(dbeta.iter()).map(|(a, b)| a * b).sum();
            deff[e] = (-ge[e] - cb) / de[e];
        }
        if dbeta.iter().chain(deff.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Convergence("non-finite Newton step in block update".into()));
        }

        let mut step = 1.0;
        let mut accepted = false;
        let step_size = dbeta.iter().chain(deff.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
        while step >= 1e-14 {
            let nb = &beta + &(Array1::from_iter(dbeta.iter().copied()) * step);
            let ne = &eff + &(&deff * step);
            let nz = index(&nb, &ne);
            let nv = value(&nz);
            if nv.is_finite() && nv >= v - 4.0 * f64::EPSILON * (v.abs() + 1.0) * f64::from(u8::from(step_size * step < 1e-6)) {
                beta = nb;
                eff = ne;
                z = nz;
                v = nv;
                accepted = true;
                break;
            }
            step *= opts.damping;
        }
        if !accepted || step_size * step <= 1e-15 {
            if gsup <= opts.newton_tol.sqrt() {
                return Ok((beta, eff));
            }
            return Err(Error::Convergence(format!(
                "block Newton stalled with gradient sup-norm {gsup:.3e}"
            )));
        }
    }
    Err(Error::Convergence("block Newton hit its iteration limit".into()))
}

/// Step 1: every `γ_t` maximised for fixed `(β, α)`. Starts at `start`
/// (zeros when `None`).
pub fn profile_gamma(
    panel: &Panel,
    family: &Family,
    beta: &Array1<f64>,
    alpha: &Array1<f64>,
    start: Option<&Array1<f64>>,
    opts: &FitOptions,
) -> Result<Array1<f64>> {
    let zeros = Array1::zeros(panel.n_periods());
    let xb = panel.linear_index(beta);
    profile_side(panel, family, Side::Periods, &xb, alpha, start.unwrap_or(&zeros), opts)
}

/// Per-unit counterpart of [`profile_gamma`]: every `α_i` for fixed `(β, γ)`.
pub fn profile_alpha(
    panel: &Panel,
    family: &Family,
    beta: &Array1<f64>,
    gamma: &Array1<f64>,
    start: Option<&Array1<f64>>,
    opts: &FitOptions,
) -> Result<Array1<f64>> {
    let zeros = Array1::zeros(panel.n_units());
    let xb = panel.linear_index(beta);
    profile_side(panel, family, Side::Units, &xb, gamma, start.unwrap_or(&zeros), opts)
}

/// Step 2: joint maximiser over `(β, α)` for fixed `γ`.
pub fn profile_beta_alpha(
    panel: &Panel,
    family: &Family,
    gamma: &Array1<f64>,
    init: (&Array1<f64>, &Array1<f64>),
    opts: &FitOptions,
) -> Result<(Array1<f64>, Array1<f64>)> {
    solve_coef_effects(panel, family, Side::Units, gamma, init.0, init.1, opts)
}

/// Joint maximiser over `(β, γ)` for fixed `α` (used by iteration 0).
pub fn profile_beta_gamma(
    panel: &Panel,
    family: &Family,
    alpha: &Array1<f64>,
    init: (&Array1<f64>, &Array1<f64>),
    opts: &FitOptions,
) -> Result<(Array1<f64>, Array1<f64>)> {
    solve_coef_effects(panel, family, Side::Periods, alpha, init.0, init.1, opts)
}

/// `(cα, γ/c)` with `c⁴ = γ'γ / α'α`, so both vectors end with equal norms.
pub fn rescale_normalize(alpha: &Array1<f64>, gamma: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let aa = alpha.dot(alpha);
    let gg = gamma.dot(gamma);
    if !(aa > 0.0) || !(gg > 0.0) {
        return Err(Error::DegenerateFactor("cannot rescale a zero-norm factor".into()));
    }
    let c = (gg / aa).sqrt().sqrt();
    Ok((alpha * c, gamma / c))
}

/// Rescaling plus the sign convention `Σ_t γ_t ≥ 0`.
pub fn finalize_effects(alpha: &Array1<f64>, gamma: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let (a, g) = rescale_normalize(alpha, gamma)?;
    if g.sum() < 0.0 {
        Ok((-a, -g))
    } else {
        Ok((a, g))
    }
}

const DEGENERATE_NORM: f64 = 1e-10;

/// For binary outcomes an index this large means a cell is predicted with
/// probability indistinguishable from one; the iterates are running off to
/// infinity.
const SEPARATION_INDEX: f64 = 35.0;

fn check_separation(panel: &Panel, family: &Family, p: &Params) -> Result<()> {
    if !family.is_binary() {
        return Ok(());
    }
    let z = p.index(panel);
    if let Some(((i, t), _)) = z.indexed_iter().find(|(_, v)| !v.abs().le(&SEPARATION_INDEX)) {
        // scale-free comparison of the two effects against their rms
        let rms = |v: &Array1<f64>| (v.dot(v) / v.len() as f64).sqrt();
        let unit_side = p.alpha[i].abs() / rms(&p.alpha) >= p.gamma[t].abs() / rms(&p.gamma);
        return Err(Error::Separation { unit: i, period: t, unit_side });
    }
    Ok(())
}

/// Fit on the retained part of a binary panel.
#[derive(Debug, Clone)]
pub struct TrimmedFit {
    pub fit: FitResult,
    pub panel: Panel,
    /// Indices of the retained units and periods in the input panel.
    pub units: Vec<usize>,
    pub periods: Vec<usize>,
}

impl TrimmedFit {
    pub fn dropped(&self, panel: &Panel) -> usize {
        panel.n_units() - self.units.len() + panel.n_periods() - self.periods.len()
    }
}

/// Fits a binary panel after dropping units and periods without outcome
/// variation, then keeps dropping whichever unit or period separates until
/// a finite maximum exists or `max_drops` separating rows and columns have
/// been removed. Other families are fitted unchanged.
pub fn fit_ife_trimmed(
    panel: &Panel,
    family: &Family,
    start: Option<&Params>,
    opts: &FitOptions,
    max_drops: usize,
) -> Result<TrimmedFit> {
    let mut units: Vec<usize> = (0..panel.n_units()).collect();
    let mut periods: Vec<usize> = (0..panel.n_periods()).collect();
    let mut drops = 0;
    loop {
        let current = panel.select(&units, &periods)?;
        let (current, ku, kt) = if family.is_binary() {
            current.drop_uninformative()?
        } else {
            let (n, t) = (current.n_units(), current.n_periods());
            (current, (0..n).collect(), (0..t).collect())
        };
        units = ku.iter().map(|&i| units[i]).collect();
        periods = kt.iter().map(|&t| periods[t]).collect();
        let result = match start {
            Some(s) => {
                let sub = Params {
                    beta: s.beta.clone(),
                    alpha: units.iter().map(|&i| s.alpha[i]).collect(),
                    gamma: periods.iter().map(|&t| s.gamma[t]).collect(),
                };
                fit_ife_from(&current, family, sub, opts)
            }
            None => fit_ife(&current, family, opts),
        };
        match result {
            Ok(fit) => {
                return Ok(TrimmedFit {
                    fit,
                    panel: current,
                    units,
                    periods,
                })
            }
            Err(Error::Separation { unit, period, unit_side }) if drops < max_drops => {
                drops += 1;
                if unit_side {
                    units.remove(unit);
                } else {
                    periods.remove(period);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Algorithm: iteration 0 fits `(β, γ)` with `α = 1_N`, then `(β, α)` given
/// that `γ`; afterwards alternate the two concave block updates until the
/// objective increase drops below `tol` and the gradient below `grad_tol`.
pub fn fit_ife(panel: &Panel, family: &Family, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    panel.check_support(family)?;
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let ones = Array1::ones(n);
    let (beta0, gamma0) = profile_beta_gamma(panel, family, &ones, (&Array1::zeros(k), &Array1::zeros(t)), opts)?;
    if gamma0.dot(&gamma0).sqrt() < DEGENERATE_NORM {
        return Err(Error::DegenerateFactor("initial time effects vanish".into()));
    }
    let (beta, alpha) = profile_beta_alpha(panel, family, &gamma0, (&beta0, &ones), opts)?;
    let start = Params {
        beta,
        alpha,
        gamma: gamma0,
    };
    alternate(panel, family, start, opts)
}

/// Runs the alternation from user-supplied starting values (no iteration 0).
pub fn fit_ife_from(panel: &Panel, family: &Family, start: Params, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    start.check_dims(panel)?;
    panel.check_support(family)?;
    alternate(panel, family, start, opts)
}

/// Best of the default fit and `restarts` fits from random starting effects.
pub fn fit_ife_multistart(
    panel: &Panel,
    family: &Family,
    opts: &FitOptions,
    restarts: usize,
    seed: u64,
) -> Result<FitResult> {
    let mut best = fit_ife(panel, family, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let mut draw = |len: usize| Array1::from_iter((0..len).map(|_| StandardNormal.sample(&mut rng)));
        let start = Params {
            beta: best.params.beta.clone(),
            alpha: draw(panel.n_units()),
            gamma: draw(panel.n_periods()),
        };
        if let Ok(cand) = fit_ife_from(panel, family, start, opts) {
            if cand.loglik > best.loglik {
                best = cand;
            }
        }
    }
    Ok(best)
}

fn alternate(panel: &Panel, family: &Family, start: Params, opts: &FitOptions) -> Result<FitResult> {
    let mut p = start;
    let mut obj = objective_unchecked(panel, family, &p);
    if !obj.is_finite() {
        return Err(Error::Convergence("objective is not finite at the starting values".into()));
    }
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_sup = f64::INFINITY;
    while iterations < opts.max_outer_iters {
        iterations += 1;
        p.gamma = profile_gamma(panel, family, &p.beta, &p.alpha, Some(&p.gamma), opts)?;
        let (b, a) = profile_beta_alpha(panel, family, &p.gamma, (&p.beta, &p.alpha), opts)?;
        p.beta = b;
        p.alpha = a;
        check_separation(panel, family, &p)?;
        let new = objective_unchecked(panel, family, &p);
        trace.push(new);
        let increase = new - obj;
        obj = new;
        if increase < opts.tol {
            grad_sup = gradient_unchecked(panel, family, &p).sup_norm();
            if grad_sup < opts.grad_tol {
                converged = true;
                break;
            }
        }
    }
    let (alpha, gamma) = finalize_effects(&p.alpha, &p.gamma)?;
    if alpha.dot(&alpha).sqrt() < DEGENERATE_NORM || gamma.dot(&gamma).sqrt() < DEGENERATE_NORM {
        return Err(Error::DegenerateFactor("estimated factor has (near) zero norm".into()));
    }
    let params = Params {
        beta: p.beta,
        alpha,
        gamma,
    };
    if converged {
        grad_sup = gradient_unchecked(panel, family, &params).sup_norm();
    } else {
        grad_sup = grad_sup.min(gradient_unchecked(panel, family, &params).sup_norm());
    }
    let loglik = objective_unchecked(panel, family, &params);
    Ok(FitResult {
        params,
        loglik,
        outer_iterations: iterations,
        objective_trace: trace,
        converged,
        gradient_sup_norm: grad_sup,
    })
}

/// `φ̂(β)`: maximises over `(α, γ)` with `β` held fixed, alternating the
/// per-period and per-unit 1-D updates from `start`. Returns normalised
/// effects.
pub fn profile_effects(
    panel: &Panel,
    family: &Family,
    beta: &Array1<f64>,
    start: (&Array1<f64>, &Array1<f64>),
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    panel.check_support(family)?;
    let mut p = Params {
        beta: beta.clone(),
        alpha: start.0.clone(),
        gamma: start.1.clone(),
    };
    p.check_dims(panel)?;
    let mut obj = objective_unchecked(panel, family, &p);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_outer_iters {
        iterations += 1;
        p.gamma = profile_gamma(panel, family, &p.beta, &p.alpha, Some(&p.gamma), opts)?;
        p.alpha = profile_alpha(panel, family, &p.beta, &p.gamma, Some(&p.alpha), opts)?;
        check_separation(panel, family, &p)?;
        let new = objective_unchecked(panel, family, &p);
        trace.push(new);
        let increase = new - obj;
        obj = new;
        if increase < opts.tol {
            let g = gradient_unchecked(panel, family, &p);
            let sup = g.alpha.iter().chain(&g.gamma).fold(0.0f64, |m, v| m.max(v.abs()));
            if sup < opts.grad_tol {
                converged = true;
                break;
            }
        }
    }
    let (alpha, gamma) = finalize_effects(&p.alpha, &p.gamma)?;
    let params = Params {
        beta: p.beta,
        alpha,
        gamma,
    };
    let g = gradient_unchecked(panel, family, &params);
    let sup = g.alpha.iter().chain(&g.gamma).fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FitResult {
        loglik: objective_unchecked(panel, family, &params),
        params,
        outer_iterations: iterations,
        objective_trace: trace,
        converged,
        gradient_sup_norm: sup,
    })
}
