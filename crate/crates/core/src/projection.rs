//! Expected incidental-parameter Hessian, its pseudoinverse, and the
//! weighted projections of regressors and partial-effect derivatives onto
//! the interactive tangent space `{a_i γ_t + α_i g_t}`.
//!
//! With `h_it = −∂_{z²}ℓ_it` and `J` the Jacobian of `π_it = α_i γ_t` in
//! `(α, γ)`, the Hessian is `H = (NT)^{-1/2} J' diag(h) J`. Its null space is
//! spanned by `v = (α', −γ')'` because `J v = 0`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::estimator::Params;
use crate::family::Family;
use crate::panel::Panel;

/// Relative eigenvalue cutoff for the pseudoinverse.
pub const EIGEN_CUTOFF: f64 = 1e-10;
/// Above this many incidental parameters the dense eigendecomposition is
/// replaced by a Cholesky solve with the null direction deflated.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct IncidentalHessian {
    pub block_aa: Array1<f64>,
    pub block_gg: Array1<f64>,
    pub block_ag: Array2<f64>,
    /// `1/√(NT)`.
    pub scale: f64,
    /// Curvature weights `h_it`.
    pub curvature: Array2<f64>,
    pub alpha: Array1<f64>,
    pub gamma: Array1<f64>,
}

impl IncidentalHessian {
    /// Assembles the blocks from curvature weights `h` and factors.
    pub fn from_curvature(h: Array2<f64>, alpha: &Array1<f64>, gamma: &Array1<f64>) -> Result<Self> {
        let (n, t) = h.dim();
        if alpha.len() != n || gamma.len() != t {
            return Err(Error::Argument("curvature shape does not match the factors".into()));
        }
        if let Some(((i, tt), _)) = h.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::ConcavityViolation { unit: i, period: tt });
        }
        let scale = 1.0 / ((n * t) as f64).sqrt();
        let mut block_aa = Array1::zeros(n);
        let mut block_gg = Array1::zeros(t);
        let mut block_ag = Array2::zeros((n, t));
        for i in 0..n {
            for tt in 0..t {
                let hv = h[[i, tt]];
                block_aa[i] += gamma[tt] * gamma[tt] * hv;
                block_gg[tt] += alpha[i] * alpha[i] * hv;
                block_ag[[i, tt]] = scale * alpha[i] * gamma[tt] * hv;
            }
        }
        Ok(IncidentalHessian {
            block_aa: block_aa * scale,
            block_gg: block_gg * scale,
            block_ag,
            scale,
            curvature: h,
            alpha: alpha.clone(),
            gamma: gamma.clone(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_periods(&self) -> usize {
        self.gamma.len()
    }

    /// The full `(N+T) × (N+T)` matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let (n, t) = (self.n_units(), self.n_periods());
        let mut m = DMatrix::zeros(n + t, n + t);
        for i in 0..n {
            m[(i, i)] = self.block_aa[i];
        }
        for tt in 0..t {
            m[(n + tt, n + tt)] = self.block_gg[tt];
        }
        for i in 0..n {
            for tt in 0..t {
                m[(i, n + tt)] = self.block_ag[[i, tt]];
                m[(n + tt, i)] = self.block_ag[[i, tt]];
            }
        }
        m
    }

    /// `H x` without forming the matrix.
    pub fn apply(&self, u: &Array1<f64>, w: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let a = &self.block_aa * u + self.block_ag.dot(w);
        let g = &self.block_gg * w + self.block_ag.t().dot(u);
        (a, g)
    }

    /// `v = (α', −γ')'`, the direction of the scale normalisation.
    pub fn null_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_units() + self.n_periods(),
            self.alpha.iter().copied().chain(self.gamma.iter().map(|g| -g)),
        )
    }
}

/// Hessian at the given parameters with `h_it = −∂_{z²}ℓ(Y_it, ẑ_it)`.
pub fn build_hessian(panel: &Panel, family: &Family, params: &Params) -> Result<IncidentalHessian> {
    panel.check_support(family)?;
    let z = params.index(panel);
    let h = ndarray::Zip::from(panel.outcomes())
        .and(&z)
        .map_collect(|&y, &zz| -family.derivs(y, zz).d2);
    IncidentalHessian::from_curvature(h, &params.alpha, &params.gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverseBlocks {
    pub inv_aa: Array2<f64>,
    pub inv_ag: Array2<f64>,
    pub inv_ga: Array2<f64>,
    pub inv_gg: Array2<f64>,
}

impl PseudoInverseBlocks {
    fn from_dense(p: &DMatrix<f64>, n: usize) -> Self {
        let m = p.nrows();
        let full = Array2::from_shape_fn((m, m), |(r, c)| p[(r, c)]);
        PseudoInverseBlocks {
            inv_aa: full.slice(s![..n, ..n]).to_owned(),
            inv_ag: full.slice(s![..n, n..]).to_owned(),
            inv_ga: full.slice(s![n.., ..n]).to_owned(),
            inv_gg: full.slice(s![n.., n..]).to_owned(),
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let (n, t) = (self.inv_aa.nrows(), self.inv_gg.nrows());
        DMatrix::from_fn(n + t, n + t, |r, c| match (r < n, c < n) {
            (true, true) => self.inv_aa[[r, c]],
            (true, false) => self.inv_ag[[r, c - n]],
            (false, true) => self.inv_ga[[r - n, c]],
            (false, false) => self.inv_gg[[r - n, c - n]],
        })
    }

    pub fn apply(&self, u: &Array1<f64>, w: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        (
            self.inv_aa.dot(u) + self.inv_ag.dot(w),
            self.inv_ga.dot(u) + self.inv_gg.dot(w),
        )
    }
}

/// Moore–Penrose pseudoinverse of a symmetric matrix that is allowed at most
/// one numerically zero eigenvalue.
pub fn pseudoinverse_matrix(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cutoff = EIGEN_CUTOFF * max;
    let zero_count = eig.eigenvalues.iter().filter(|v| v.abs() <= cutoff).count();
    if max == 0.0 || zero_count > 1 {
        return Err(Error::RankDeficiency { count: zero_count });
    }
    let inv = eig.eigenvalues.map(|v| if v.abs() <= cutoff { 0.0 } else { 1.0 / v });
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&inv) * q.transpose())
}

/// Dense pseudoinverse split into blocks.
pub fn pseudoinverse(h: &IncidentalHessian) -> Result<PseudoInverseBlocks> {
    let p = pseudoinverse_matrix(&h.dense())?;
    Ok(PseudoInverseBlocks::from_dense(&p, h.n_units()))
}

/// Action of the pseudoinverse, either from explicit blocks or from a
/// Cholesky factor of `H + c·uu'` with `u = v/‖v‖`, using
/// `P x = (H + c·uu')⁻¹ x − (u'x / c) u`.
#[derive(Debug, Clone)]
pub enum HessianInverse {
    Dense(PseudoInverseBlocks),
    Deflated {
        factor: Cholesky<f64, nalgebra::Dyn>,
        unit_null: DVector<f64>,
        shift: f64,
        n_units: usize,
    },
}

impl HessianInverse {
    /// Dense blocks up to [`DENSE_LIMIT`] parameters, deflated solves beyond.
    pub fn new(h: &IncidentalHessian) -> Result<Self> {
        if h.n_units() + h.n_periods() <= DENSE_LIMIT {
            Ok(HessianInverse::Dense(pseudoinverse(h)?))
        } else {
            Self::deflated(h)
        }
    }

    pub fn deflated(h: &IncidentalHessian) -> Result<Self> {
        let v = h.null_vector();
        let norm = v.norm();
        if !(norm > 0.0) {
            return Err(Error::DegenerateFactor("null direction has zero norm".into()));
        }
        let u = v / norm;
        let mut m = h.dense();
        let shift = m.diagonal().iter().fold(0.0f64, |a, &d| a.max(d));
        m += &u * u.transpose() * shift;
        let factor = Cholesky::new(m).ok_or(Error::RankDeficiency { count: 2 })?;
        Ok(HessianInverse::Deflated {
            factor,
            unit_null: u,
            shift,
            n_units: h.n_units(),
        })
    }

    pub fn apply(&self, u: &Array1<f64>, w: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        match self {
            HessianInverse::Dense(p) => p.apply(u, w),
            HessianInverse::Deflated {
                factor,
                unit_null,
                shift,
                n_units,
            } => {
                let x = DVector::from_iterator(u.len() + w.len(), u.iter().chain(w.iter()).copied());
                let proj = unit_null.dot(&x) / shift;
                let sol = factor.solve(&x) - unit_null * proj;
                (
                    Array1::from_iter(sol.iter().take(*n_units).copied()),
                    Array1::from_iter(sol.iter().skip(*n_units).copied()),
                )
            }
        }
    }
}

/// One projected direction: `Ξ_it = a*_i γ_t + α_i g*_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDirection {
    pub projection: Array2<f64>,
    pub star_alpha: Array1<f64>,
    pub star_gamma: Array1<f64>,
}

/// `−(NT)^{-1/2} Σ_{jτ}(bilinear form in P) b_jτ` for an `N × T` input `b`.
/// With `b = ∂_{z²}ℓ·X_k` this is `Ξ_k`; with `b = ∂_πΔ` it is `Ψ`.
pub fn project_direction(h: &IncidentalHessian, inv: &HessianInverse, b: &Array2<f64>) -> ProjectedDirection {
    let u = b.dot(&h.gamma);
    let w = b.t().dot(&h.alpha);
    let (p, q) = inv.apply(&u, &w);
    let star_alpha = p * (-h.scale);
    let star_gamma = q * (-h.scale);
    let projection = Array2::from_shape_fn(b.dim(), |(i, t)| star_alpha[i] * h.gamma[t] + h.alpha[i] * star_gamma[t]);
    ProjectedDirection {
        projection,
        star_alpha,
        star_gamma,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// `Ξ̂`, `N × T × K`.
    pub projection: Array3<f64>,
    /// `X̃ = X − Ξ̂`.
    pub residual: Array3<f64>,
    /// `N × K`.
    pub star_alpha: Array2<f64>,
    /// `T × K`.
    pub star_gamma: Array2<f64>,
}

/// Projects every slice `x[.., .., k]` of a tensor.
pub fn residualize_tensor(h: &IncidentalHessian, inv: &HessianInverse, x: &Array3<f64>) -> ProjectionResult {
    let (n, t, k) = x.dim();
    let mut projection = Array3::zeros((n, t, k));
    let mut star_alpha = Array2::zeros((n, k));
    let mut star_gamma = Array2::zeros((t, k));
    for kk in 0..k {
        let b = &x.slice(s![.., .., kk]) * &h.curvature * -1.0;
        let d = project_direction(h, inv, &b);
        projection.slice_mut(s![.., .., kk]).assign(&d.projection);
        star_alpha.column_mut(kk).assign(&d.star_alpha);
        star_gamma.column_mut(kk).assign(&d.star_gamma);
    }
    ProjectionResult {
        residual: x - &projection,
        projection,
        star_alpha,
        star_gamma,
    }
}

/// `Ξ̂` and `X̃` for the panel regressors.
pub fn xi_residualize(panel: &Panel, h: &IncidentalHessian, inv: &HessianInverse) -> ProjectionResult {
    residualize_tensor(h, inv, panel.regressors())
}

/// `Ψ̂` for a matrix of partial-effect derivatives `∂_πΔ̂`.
pub fn psi_projection(h: &IncidentalHessian, inv: &HessianInverse, dpi_delta: &Array2<f64>) -> Array2<f64> {
    project_direction(h, inv, dpi_delta).projection
}

/// Weighted least squares fit of `target` by `a_i γ_t + α_i g_t` with weights
/// `w_it`, solved directly from the normal equations: the unit block is
/// diagonal and is eliminated, the remaining `T × T` system has the gauge
/// direction `γ` pinned by adding `κγγ'`. Returns the minimum-norm solution
/// (orthogonal to `(α', −γ')'`).
pub fn wls_projection(
    weights: &Array2<f64>,
    target: &Array2<f64>,
    alpha: &Array1<f64>,
    gamma: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let (n, t) = weights.dim();
    if target.dim() != (n, t) || alpha.len() != n || gamma.len() != t {
        return Err(Error::Argument("weights, target and factors disagree in shape".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Argument("weights must be strictly positive".into()));
    }
    let d: Array1<f64> = (0..n)
        .map(|i| (0..t).map(|tt| weights[[i, tt]] * gamma[tt] * gamma[tt]).sum())
        .collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateFactor("gamma is identically zero".into()));
    }
    let c: Array1<f64> = (0..n)
        .map(|i| (0..t).map(|tt| weights[[i, tt]] * gamma[tt] * target[[i, tt]]).sum())
        .collect();
    // coupling C_it = w_it α_i γ_t
    let mut schur = DMatrix::<f64>::zeros(t, t);
    let mut rhs = DVector::<f64>::zeros(t);
    for tt in 0..t {
        schur[(tt, tt)] = (0..n).map(|i| weights[[i, tt]] * alpha[i] * alpha[i]).sum();
        rhs[tt] = (0..n).map(|i| weights[[i, tt]] * alpha[i] * target[[i, tt]]).sum();
    }
    for i in 0..n {
        for s1 in 0..t {
            let c1 = weights[[i, s1]] * alpha[i] * gamma[s1];
            rhs[s1] -= c1 * c[i] / d[i];
            for s2 in 0..t {
                let c2 = weights[[i, s2]] * alpha[i] * gamma[s2];
                schur[(s1, s2)] -= c1 * c2 / d[i];
            }
        }
    }
    let kappa = schur.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0) / gamma.dot(gamma);
    for s1 in 0..t {
        for s2 in 0..t {
            schur[(s1, s2)] += kappa * gamma[s1] * gamma[s2];
        }
    }
    let g = schur
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| schur.lu().solve(&rhs))
        .ok_or(Error::RankDeficiency { count: 2 })?;
    let g = Array1::from_iter(g.iter().copied());
    let a: Array1<f64> = (0..n)
        .map(|i| (c[i] - (0..t).map(|tt| weights[[i, tt]] * alpha[i] * gamma[tt] * g[tt]).sum::<f64>()) / d[i])
        .collect();
    // remove the gauge component along (α, −γ)
    let vv = alpha.dot(alpha) + gamma.dot(gamma);
    let coef = (a.dot(alpha) - g.dot(gamma)) / vv;
    Ok((&a - &(alpha * coef), &g + &(gamma * coef)))
}
