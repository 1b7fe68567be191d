//! Data-generating processes, the Monte Carlo driver and the closed-form
//! reference values for the Gaussian model without regressors.
//!
//! Every replication draws from its own ChaCha stream of one root seed
//! (`2·rep` for the data, `2·rep + 1` for the jackknife partitions), so
//! aggregates do not depend on how replications are scheduled.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ape::{ape_analytic, ApeOptions, EffectSpec};
use crate::bias::{correction_from_state, invert_w, solve_w, PluginState};
use crate::error::{Error, Result};
use crate::estimator::{fit_ife_trimmed, FitOptions, FitResult};
use crate::family::Family;
use crate::jackknife::{jackknife, make_split_plan, DEFAULT_SPLITS};
use crate::panel::Panel;

/// Stream reserved for effects held fixed across replications.
const FIXED_EFFECTS_STREAM: u64 = u64::MAX;
/// Redraw threshold for standard normal effects.
const MIN_EFFECT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// `Y_it ~ N(α_i γ_t, δ⁰)`.
    LinearNonreg { delta0: f64 },
    /// `Y_it = 1{X_it'β⁰ + α_i γ_t ≥ ε_it}` with standard normal `X`, `ε`.
    ProbitStatic { beta0: Vec<f64> },
    /// `Y_it = X_it'β⁰ + α_i γ_t + σ ε_it` with standard normal `X`, `ε`.
    LinearExog { beta0: Vec<f64>, sigma: f64 },
    /// `Y_it ~ Poisson(exp(X_it'β⁰ + α_i γ_t))` with standard normal `X`.
    PoissonExog { beta0: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EffectLaw {
    /// iid `N(0,1)`, redrawing values with `|v| < 0.05`.
    StandardNormal,
    Uniform { lo: f64, hi: f64 },
    /// Magnitude uniform on `[lo, hi)` with an independent fair sign.
    SignedUniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub t: usize,
    pub effect_law: EffectLaw,
    pub seed: u64,
    /// Draw `α⁰, γ⁰` once and reuse them in every replication.
    #[serde(default)]
    pub fixed_effects: bool,
}

impl DgpSpec {
    pub fn linear_nonreg(n: usize, t: usize, delta0: f64, seed: u64) -> Self {
        DgpSpec {
            kind: DgpKind::LinearNonreg { delta0 },
            n,
            t,
            effect_law: EffectLaw::StandardNormal,
            seed,
            fixed_effects: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.t < 1 {
            return Err(Error::Argument("N and T must be positive".into()));
        }
        match &self.kind {
            DgpKind::LinearNonreg { delta0 } if !(*delta0 > 0.0) => Err(Error::Argument("delta0 must be positive".into())),
            DgpKind::LinearExog { sigma, .. } if !(*sigma > 0.0) => Err(Error::Argument("sigma must be positive".into())),
            DgpKind::ProbitStatic { beta0 } | DgpKind::LinearExog { beta0, .. } | DgpKind::PoissonExog { beta0 }
                if beta0.is_empty() =>
            {
                Err(Error::Argument("at least one coefficient is required".into()))
            }
            _ => match self.effect_law {
                EffectLaw::Uniform { lo, hi } if !(lo < hi) => Err(Error::Argument("uniform law needs lo < hi".into())),
                EffectLaw::SignedUniform { lo, hi } if !(0.0 <= lo && lo < hi) => {
                    Err(Error::Argument("signed uniform law needs 0 <= lo < hi".into()))
                }
                _ => Ok(()),
            },
        }
    }

    /// Family used to estimate the model.
    pub fn family(&self) -> Family {
        match &self.kind {
            DgpKind::LinearNonreg { .. } => Family::Linear { sigma: 1.0 },
            DgpKind::LinearExog { sigma, .. } => Family::Linear { sigma: *sigma },
            DgpKind::ProbitStatic { .. } => Family::Probit,
            DgpKind::PoissonExog { .. } => Family::Poisson,
        }
    }

    fn beta0(&self) -> &[f64] {
        match &self.kind {
            DgpKind::LinearNonreg { .. } => &[],
            DgpKind::ProbitStatic { beta0 } | DgpKind::LinearExog { beta0, .. } | DgpKind::PoissonExog { beta0 } => beta0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub alpha: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    /// `δ⁰` for the Gaussian model without regressors.
    pub delta0: Option<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_effect(law: EffectLaw, rng: &mut ChaCha8Rng) -> f64 {
    match law {
        EffectLaw::StandardNormal => loop {
            let v: f64 = StandardNormal.sample(rng);
            if v.abs() >= MIN_EFFECT {
                return v;
            }
        },
        EffectLaw::Uniform { lo, hi } => rng.random_range(lo..hi),
        EffectLaw::SignedUniform { lo, hi } => {
            let v = rng.random_range(lo..hi);
            if rng.random::<bool>() { v } else { -v }
        }
    }
}

fn draw_effects(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> (Array1<f64>, Array1<f64>) {
    let alpha = Array1::from_iter((0..spec.n).map(|_| draw_effect(spec.effect_law, rng)));
    let gamma = Array1::from_iter((0..spec.t).map(|_| draw_effect(spec.effect_law, rng)));
    (alpha, gamma)
}

/// Poisson draw; the mean is floored so `rand_distr` accepts it.
fn poisson_draw(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::Poisson::new(mean.max(1e-300)).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// Panel and true parameters for replication `rep`.
pub fn dgp_generate(spec: &DgpSpec, rep: u64) -> Result<(Panel, Truth)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 2 * rep);
    let (alpha, gamma) = if spec.fixed_effects {
        draw_effects(spec, &mut stream_rng(spec.seed, FIXED_EFFECTS_STREAM))
    } else {
        draw_effects(spec, &mut rng)
    };
    let (n, t) = (spec.n, spec.t);
    let beta = Array1::from(spec.beta0().to_vec());
    let k = beta.len();
    let x = Array3::from_shape_simple_fn((n, t, k), || StandardNormal.sample(&mut rng));
    let index = Array2::from_shape_fn((n, t), |(i, tt)| {
        alpha[i] * gamma[tt] + (0..k).map(|kk| x[[i, tt, kk]] * beta[kk]).sum::<f64>()
    });
    let mut y = Array2::zeros((n, t));
    let mut delta0 = None;
    for i in 0..n {
        for tt in 0..t {
            let z = index[[i, tt]];
            let e: f64 = StandardNormal.sample(&mut rng);
            y[[i, tt]] = match &spec.kind {
                DgpKind::LinearNonreg { delta0: d } => {
                    delta0 = Some(*d);
                    z + d.sqrt() * e
                }
                DgpKind::LinearExog { sigma, .. } => z + sigma * e,
                DgpKind::ProbitStatic { .. } => f64::from(u8::from(z >= e)),
                DgpKind::PoissonExog { .. } => poisson_draw(z.exp(), &mut rng),
            };
        }
    }
    let panel = Panel::from_arrays(y, x)?;
    Ok((
        panel,
        Truth {
            alpha,
            gamma,
            beta,
            delta0,
        },
    ))
}

/// Closed-form finite-sample quantities of the Gaussian model without
/// regressors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedForm {
    /// `−(1/T + 1/N)`.
    pub bias_factor: f64,
    /// `2(N−1)(T−1)δ⁰²/(NT)²`.
    pub v_nt: f64,
    /// `(1 + 1/N + 1/T)² V̄_NT`.
    pub v_a: f64,
    /// `2δ⁰²/(NT)`.
    pub v_inf: f64,
    pub delta0: f64,
}

impl ClosedForm {
    pub fn sd_inf_rel(&self) -> f64 {
        self.v_inf.sqrt() / self.delta0
    }
    pub fn sd_nt_rel(&self) -> f64 {
        self.v_nt.sqrt() / self.delta0
    }
    pub fn sd_a_rel(&self) -> f64 {
        self.v_a.sqrt() / self.delta0
    }
}

pub fn closed_form_refs(n: usize, t: usize, delta0: f64) -> Result<ClosedForm> {
    if n < 2 || t < 2 {
        return Err(Error::Argument("closed forms need N, T >= 2".into()));
    }
    let (nf, tf) = (n as f64, t as f64);
    let v_nt = 2.0 * (nf - 1.0) * (tf - 1.0) * delta0 * delta0 / (nf * tf).powi(2);
    Ok(ClosedForm {
        bias_factor: -(1.0 / tf + 1.0 / nf),
        v_nt,
        v_a: (1.0 + 1.0 / nf + 1.0 / tf).powi(2) * v_nt,
        v_inf: 2.0 * delta0 * delta0 / (nf * tf),
        delta0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub n_reps: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_splits")]
    pub splits: usize,
    /// Spectral trimming for the analytical corrections.
    #[serde(default)]
    pub trim: usize,
    #[serde(default = "yes")]
    pub analytic: bool,
    #[serde(default = "yes")]
    pub jackknife: bool,
    #[serde(default)]
    pub keep_records: bool,
    /// Worker threads (`None`: the `IFE_WORKERS` variable or all cores).
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_level() -> f64 {
    0.95
}
fn default_splits() -> usize {
    DEFAULT_SPLITS
}
fn yes() -> bool {
    true
}

impl McConfig {
    pub fn new(dgp: DgpSpec, n_reps: usize) -> Self {
        McConfig {
            dgp,
            n_reps,
            level: default_level(),
            splits: DEFAULT_SPLITS,
            trim: 0,
            analytic: true,
            jackknife: true,
            keep_records: false,
            workers: None,
        }
    }
}

/// Estimates from one replication, for the scalar target (`δ` or `β_1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: u64,
    pub uncorrected: f64,
    pub analytic: Option<f64>,
    pub jackknife: Option<f64>,
    pub covered: [Option<bool>; 3],
    /// Analytic standard error (`√V̂^δ` or `√(Ŵ⁻¹_11/NT)`).
    pub se: Option<f64>,
    /// `(Ŵ⁻¹B̂)_1` and `(Ŵ⁻¹D̂)_1` for models with regressors.
    pub bias_terms: Option<(f64, f64)>,
    pub max_objective_decrease: f64,
    pub max_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub mean: f64,
    pub mean_bias_rel: f64,
    pub sd_rel: f64,
    pub coverage: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl MomentSummary {
    /// Monte Carlo standard error of the mean.
    pub fn mc_se(&self) -> f64 {
        self.sd / (self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub dgp: DgpSpec,
    pub n_reps: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
    /// False when more than 1% of replications failed.
    pub valid: bool,
    /// Value the relative statistics are measured against.
    pub target: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub auxiliary: Vec<MomentSummary>,
    pub closed_form: Option<ClosedForm>,
    pub max_objective_decrease: f64,
    pub max_gradient: f64,
    pub records: Option<Vec<RepRecord>>,
}

impl McResult {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn auxiliary(&self, name: &str) -> Option<&MomentSummary> {
        self.auxiliary.iter().find(|e| e.name == name)
    }
}

fn fit_health(fit: &FitResult) -> (f64, f64) {
    (fit.max_objective_decrease(), fit.gradient_sup_norm)
}

fn run_rep(cfg: &McConfig, rep: u64, opts: &FitOptions) -> Result<RepRecord> {
    let (panel, truth) = dgp_generate(&cfg.dgp, rep)?;
    let family = cfg.dgp.family();
    // binary units and periods without outcome variation are dropped; a
    // replication whose likelihood separates has no estimate and fails
    let trimmed = fit_ife_trimmed(&panel, &family, None, opts, 0)?;
    let (panel, fit) = (trimmed.panel, trimmed.fit);
    let (n, t) = (panel.n_units(), panel.n_periods());
    if !fit.converged {
        return Err(Error::Convergence(format!("full-panel fit did not converge in replication {rep}")));
    }
    let (mut max_dec, mut max_grad) = fit_health(&fit);
    let plan_seed = {
        let mut r = stream_rng(cfg.dgp.seed, 2 * rep + 1);
        r.random::<u64>()
    };
    let jack = |spec: Option<&EffectSpec>| -> Result<_> {
        let plan = make_split_plan(n, t, cfg.splits, plan_seed)?;
        jackknife(&panel, &family, &fit, spec, opts, &plan)
    };

    if let Some(delta0) = truth.delta0 {
        // Gaussian model without regressors: the target is the error variance
        let spec = EffectSpec::LinearVariance;
        let ape_opts = ApeOptions {
            trim: cfg.trim,
            level: cfg.level,
            correct_beta_first: false,
            keep_influence: false,
            fit: opts.clone(),
        };
        let report = ape_analytic(&panel, &family, &fit, &spec, &ape_opts)?;
        let jk = if cfg.jackknife { Some(jack(Some(&spec))?) } else { None };
        if let Some(j) = &jk {
            max_dec = max_dec.max(j.max_objective_decrease);
            max_grad = max_grad.max(j.max_gradient);
        }
        let half = crate::bias::normal_critical_value(cfg.level)? * (2.0 / (n * t) as f64).sqrt();
        let covers = |d: f64| delta0 >= d * (1.0 - half) && delta0 <= d * (1.0 + half);
        let analytic = cfg.analytic.then_some(report.delta_corrected);
        let jackknife = jk.and_then(|j| j.delta.map(|d| d.corrected));
        Ok(RepRecord {
            rep,
            uncorrected: report.delta_hat,
            analytic,
            jackknife,
            covered: [Some(covers(report.delta_hat)), analytic.map(covers), jackknife.map(covers)],
            se: Some(report.se),
            bias_terms: None,
            max_objective_decrease: max_dec,
            max_gradient: max_grad,
        })
    } else {
        let beta0 = truth.beta[0];
        let state = PluginState::new(&panel, &family, &fit.params)?;
        let corr = correction_from_state(&state, n, t, cfg.trim, cfg.level)?;
        let winv = invert_w(&corr.w_hat)?;
        let half = crate::bias::normal_critical_value(cfg.level)? * (winv[[0, 0]] / (n * t) as f64).sqrt();
        let covers = |b: f64| (beta0 - b).abs() <= half;
        let wb = solve_w(&corr.w_hat, &corr.b_hat)?;
        let wd = solve_w(&corr.w_hat, &corr.d_hat)?;
        let jk = if cfg.jackknife { Some(jack(None)?) } else { None };
        if let Some(j) = &jk {
            max_dec = max_dec.max(j.max_objective_decrease);
            max_grad = max_grad.max(j.max_gradient);
        }
        let uncorrected = fit.params.beta[0];
        let analytic = cfg.analytic.then_some(corr.beta_corrected[0]);
        let jackknife = jk.map(|j| j.beta.corrected[0]);
        Ok(RepRecord {
            rep,
            uncorrected,
            analytic,
            jackknife,
            covered: [Some(covers(uncorrected)), analytic.map(covers), jackknife.map(covers)],
            se: Some(half / crate::bias::normal_critical_value(cfg.level)?),
            bias_terms: Some((wb[0], wd[0])),
            max_objective_decrease: max_dec,
            max_gradient: max_grad,
        })
    }
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Worker count from the configuration or the `IFE_WORKERS` variable.
pub fn resolve_workers(requested: Option<usize>) -> Option<usize> {
    requested
        .or_else(|| std::env::var("IFE_WORKERS").ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&w| w > 0)
}

/// Runs the Monte Carlo study and aggregates in replication order.
pub fn run_mc(cfg: &McConfig, opts: &FitOptions) -> Result<McResult> {
    cfg.dgp.validate()?;
    if cfg.n_reps == 0 {
        return Err(Error::Argument("at least one replication is required".into()));
    }
    crate::bias::normal_critical_value(cfg.level)?;
    let work = || -> Vec<Result<RepRecord>> {
        (0..cfg.n_reps as u64)
            .into_par_iter()
            .map(|rep| run_rep(cfg, rep, opts))
            .collect()
    };
    let outcomes = match resolve_workers(cfg.workers) {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut records = Vec::with_capacity(cfg.n_reps);
    let mut failures = 0;
    let mut first_failure = None;
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(e) => {
                failures += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let (target, closed_form) = match &cfg.dgp.kind {
        DgpKind::LinearNonreg { delta0 } => (*delta0, Some(closed_form_refs(cfg.dgp.n, cfg.dgp.t, *delta0)?)),
        _ => (cfg.dgp.beta0()[0], None),
    };

    let mut estimators = Vec::new();
    let getters: [(&str, fn(&RepRecord) -> Option<f64>); 3] = [
        ("uncorrected", |r| Some(r.uncorrected)),
        ("analytic", |r| r.analytic),
        ("jackknife", |r| r.jackknife),
    ];
    for (idx, (name, get)) in getters.iter().enumerate() {
        let vals: Vec<f64> = records.iter().filter_map(get).collect();
        if vals.is_empty() {
            continue;
        }
        let (mean, sd) = moments(&vals);
        let hits: Vec<bool> = records.iter().filter_map(|r| r.covered[idx]).collect();
        estimators.push(EstimatorSummary {
            name: name.to_string(),
            mean,
            mean_bias_rel: (mean - target) / target,
            sd_rel: sd / target.abs(),
            coverage: (!hits.is_empty()).then(|| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64),
            count: vals.len(),
        });
    }
    let mut auxiliary = Vec::new();
    let mut push_aux = |name: &str, vals: Vec<f64>| {
        if !vals.is_empty() {
            let (mean, sd) = moments(&vals);
            auxiliary.push(MomentSummary {
                name: name.into(),
                mean,
                sd,
                count: vals.len(),
            });
        }
    };
    push_aux("se", records.iter().filter_map(|r| r.se).collect());
    push_aux("bias_term_b", records.iter().filter_map(|r| r.bias_terms.map(|b| b.0)).collect());
    push_aux("bias_term_d", records.iter().filter_map(|r| r.bias_terms.map(|b| b.1)).collect());

    Ok(McResult {
        dgp: cfg.dgp.clone(),
        n_reps: cfg.n_reps,
        failures,
        first_failure,
        valid: failures * 100 <= cfg.n_reps,
        target,
        estimators,
        auxiliary,
        closed_form,
        max_objective_decrease: records.iter().map(|r| r.max_objective_decrease).fold(0.0, f64::max),
        max_gradient: records.iter().map(|r| r.max_gradient).fold(0.0, f64::max),
        records: cfg.keep_records.then_some(records),
    })
}

/// Column order of the published grid.
pub const TABLE_CELLS: [(usize, usize); 6] = [(10, 10), (25, 10), (25, 25), (50, 10), (50, 25), (50, 50)];

fn fmt2(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => {
            let s = format!("{x:.2}");
            if s == "-0.00" {
                "0.00".into()
            } else {
                s
            }
        }
        _ => "NA".into(),
    }
}

fn ordered(results: &[McResult]) -> Vec<&McResult> {
    let mut v: Vec<&McResult> = results.iter().collect();
    v.sort_by_key(|r| {
        let cell = (r.dgp.n, r.dgp.t);
        (TABLE_CELLS.iter().position(|c| *c == cell).unwrap_or(usize::MAX), cell)
    });
    v
}

/// Bias/dispersion table and coverage table as CSV text. Columns are the
/// `(N, T)` cells in the published order; values are fractions of `δ⁰`.
pub fn render_tables(results: &[McResult]) -> (String, String) {
    let cols = ordered(results);
    let mut header = String::from("statistic");
    for r in &cols {
        write!(header, ",N={} T={}", r.dgp.n, r.dgp.t).unwrap();
    }
    fn est<'a>(r: &'a McResult, name: &str) -> Option<&'a EstimatorSummary> {
        r.estimator(name)
    }
    let rows1: [(&str, Box<dyn Fn(&McResult) -> Option<f64>>); 8] = [
        ("bias_factor", Box::new(|r| r.closed_form.map(|c| c.bias_factor))),
        ("bias_uncorrected", Box::new(|r| est(r, "uncorrected").map(|e| e.mean_bias_rel))),
        ("bias_analytic", Box::new(|r| est(r, "analytic").map(|e| e.mean_bias_rel))),
        ("bias_jackknife", Box::new(|r| est(r, "jackknife").map(|e| e.mean_bias_rel))),
        ("sd_asymptotic", Box::new(|r| r.closed_form.map(|c| c.sd_inf_rel()))),
        ("sd_uncorrected", Box::new(|r| r.closed_form.map(|c| c.sd_nt_rel()))),
        ("sd_analytic", Box::new(|r| r.closed_form.map(|c| c.sd_a_rel()))),
        ("sd_jackknife", Box::new(|r| est(r, "jackknife").map(|e| e.sd_rel))),
    ];
    let rows2: [(&str, &str); 3] = [
        ("coverage_uncorrected", "uncorrected"),
        ("coverage_analytic", "analytic"),
        ("coverage_jackknife", "jackknife"),
    ];
    let mut t1 = header.clone();
    t1.push('\n');
    for (label, f) in rows1.iter() {
        t1.push_str(label);
        for r in &cols {
            write!(t1, ",{}", fmt2(f(r))).unwrap();
        }
        t1.push('\n');
    }
    let mut t2 = header;
    t2.push('\n');
    for (label, name) in rows2 {
        t2.push_str(label);
        for r in &cols {
            write!(t2, ",{}", fmt2(est(r, name).and_then(|e| e.coverage))).unwrap();
        }
        t2.push('\n');
    }
    (t1, t2)
}
