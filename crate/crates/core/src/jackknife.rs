//! Double split-panel jackknife: `3·θ̂ − θ̃_{N,T/2} − θ̃_{N/2,T}`, where the
//! time average is over the two halves of the sample period and the
//! cross-section average is over balanced splits of the units.

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ape::{effect_cells, EffectSpec};
use crate::error::{Error, Result};
use crate::estimator::{fit_ife_from, fit_ife_trimmed, FitOptions, FitResult, Params};
use crate::family::Family;
use crate::panel::Panel;

/// Default number of cross-section partitions.
pub const DEFAULT_SPLITS: usize = 20;
/// Iteration budget multiplier for a subfit that did not converge.
const RETRY_FACTOR: usize = 20;

/// A unit partition: the half containing unit 0 comes first; both sorted.
pub type UnitSplit = (Vec<usize>, Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// 0-based half-open period ranges; they share the middle period when
    /// `T` is odd.
    pub time_halves: [Range<usize>; 2],
    pub cross_partitions: Vec<UnitSplit>,
    pub rng_seed: u64,
}

/// Number of distinct balanced partitions of `n` units, saturating.
pub fn distinct_partitions(n: usize) -> u64 {
    let k = n / 2;
    let mut c: u128 = 1;
    for j in 0..k {
        c = c * (n - j) as u128 / (j + 1) as u128;
        if c > u64::MAX as u128 * 2 {
            return u64::MAX;
        }
    }
    let c = if n % 2 == 0 { c / 2 } else { c };
    c.min(u64::MAX as u128) as u64
}

pub fn time_halves(t: usize) -> [Range<usize>; 2] {
    let h = t.div_ceil(2);
    [0..h, t - h..t]
}

fn canonical(mut a: Vec<usize>, mut b: Vec<usize>) -> UnitSplit {
    a.sort_unstable();
    b.sort_unstable();
    if a.first() == Some(&0) {
        (a, b)
    } else {
        (b, a)
    }
}

fn enumerate_partitions(n: usize) -> Vec<UnitSplit> {
    let k = n / 2;
    let mut out = Vec::new();
    // subsets of size k in lexicographic order
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        // for even n each partition appears twice; keep the one with unit 0 in the chosen half
        if n % 2 == 1 || idx[0] == 0 {
            let chosen: BTreeSet<usize> = idx.iter().copied().collect();
            let rest: Vec<usize> = (0..n).filter(|u| !chosen.contains(u)).collect();
            out.push(canonical(idx.clone(), rest));
        }
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        idx[pos - 1] += 1;
        for j in pos..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// Builds the time halves and `S` cross-section partitions (all of them when
/// `S` is at least the number of distinct balanced partitions).
pub fn make_split_plan(n: usize, t: usize, splits: usize, seed: u64) -> Result<SplitPlan> {
    if n < 4 || t < 4 {
        return Err(Error::Argument(format!("split-panel jackknife needs N, T >= 4 (got N={n}, T={t})")));
    }
    if splits == 0 {
        return Err(Error::Argument("the number of partitions must be at least 1".into()));
    }
    let total = distinct_partitions(n);
    let cross_partitions = if splits as u64 >= total {
        enumerate_partitions(n)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(splits);
        let mut units: Vec<usize> = (0..n).collect();
        while out.len() < splits {
            units.shuffle(&mut rng);
            let split = canonical(units[..n / 2].to_vec(), units[n / 2..].to_vec());
            if seen.insert(split.clone()) {
                out.push(split);
            }
        }
        out
    };
    Ok(SplitPlan {
        time_halves: time_halves(t),
        cross_partitions,
        rng_seed: seed,
    })
}

/// `3·full − time_avg − cross_avg`.
pub fn combine(full: f64, time_avg: f64, cross_avg: f64) -> f64 {
    3.0 * full - time_avg - cross_avg
}

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeEstimate<V> {
    pub full: V,
    pub time_average: V,
    pub cross_average: V,
    pub corrected: V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeReport {
    pub beta: JackknifeEstimate<Array1<f64>>,
    pub delta: Option<JackknifeEstimate<f64>>,
    pub subfits: usize,
    /// Cross-sectional partitions dropped because a half separates.
    pub skipped_partitions: usize,
    /// Largest objective decrease between iterations over all subfits.
    pub max_objective_decrease: f64,
    /// Largest gradient sup-norm at the subfit solutions.
    pub max_gradient: f64,
}

struct SubResult {
    beta: Array1<f64>,
    delta: Option<f64>,
    decrease: f64,
    gradient: f64,
}

fn subfit(
    panel: &Panel,
    family: &Family,
    full: &Params,
    units: &[usize],
    periods: Range<usize>,
    spec: Option<&EffectSpec>,
    opts: &FitOptions,
    label: String,
) -> Result<SubResult> {
    let wrap = |e: Error| Error::Subfit {
        label: label.clone(),
        source: Box::new(e),
    };
    let sub = panel.subpanel(units, periods.clone()).map_err(wrap)?;
    let start = Params {
        beta: full.beta.clone(),
        alpha: units.iter().map(|&i| full.alpha[i]).collect(),
        gamma: full.gamma.slice(ndarray::s![periods]).to_owned(),
    };
    // a half panel of binary outcomes can lose variation; dropping units
    // that separate would bias the half-panel estimates, so none are
    let trimmed = fit_ife_trimmed(&sub, family, Some(&start), opts, 0).map_err(wrap)?;
    let sub = trimmed.panel;
    let mut fit = trimmed.fit;
    if !fit.converged {
        // half panels with nearly tied leading singular values make the
        // alternation slow; continue from where it stopped before giving up
        let more = FitOptions {
            max_outer_iters: opts.max_outer_iters.saturating_mul(RETRY_FACTOR),
            ..opts.clone()
        };
        let mut cont = fit_ife_from(&sub, family, fit.params.clone(), &more).map_err(wrap)?;
        let mut trace = std::mem::take(&mut fit.objective_trace);
        trace.extend(cont.objective_trace.drain(1..));
        cont.objective_trace = trace;
        cont.outer_iterations += fit.outer_iterations;
        fit = cont;
    }
    if !fit.converged {
        return Err(wrap(Error::Convergence(format!(
            "no convergence after {} iterations",
            fit.outer_iterations
        ))));
    }
    let delta = match spec {
        Some(s) => Some(effect_cells(&sub, family, s, &fit.params).map_err(wrap)?.mean()),
        None => None,
    };
    Ok(SubResult {
        decrease: fit.max_objective_decrease(),
        gradient: fit.gradient_sup_norm,
        beta: fit.params.beta,
        delta,
    })
}

fn is_separation(e: &Error) -> bool {
    match e {
        Error::Separation { .. } => true,
        Error::Subfit { source, .. } => is_separation(source),
        _ => false,
    }
}

/// Runs every subpanel fit of the plan and combines coefficients and, when
/// `spec` is given, the uncorrected partial effect of each subpanel.
pub fn jackknife(
    panel: &Panel,
    family: &Family,
    fit: &FitResult,
    spec: Option<&EffectSpec>,
    opts: &FitOptions,
    plan: &SplitPlan,
) -> Result<JackknifeReport> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if plan.time_halves[1].end != t || plan.cross_partitions.iter().any(|(a, b)| a.len() + b.len() != n) {
        return Err(Error::Argument("split plan does not match the panel dimensions".into()));
    }
    let all_units: Vec<usize> = (0..n).collect();
    let mut jobs: Vec<(Vec<usize>, Range<usize>, String)> = Vec::new();
    for (h, r) in plan.time_halves.iter().enumerate() {
        jobs.push((all_units.clone(), r.clone(), format!("time half {} (periods {}..{})", h + 1, r.start + 1, r.end)));
    }
    for (p, (a, b)) in plan.cross_partitions.iter().enumerate() {
        jobs.push((a.clone(), 0..t, format!("partition {} first half", p + 1)));
        jobs.push((b.clone(), 0..t, format!("partition {} second half", p + 1)));
    }
    let results: Vec<Result<SubResult>> = jobs
        .into_par_iter()
        .map(|(units, periods, label)| subfit(panel, family, &fit.params, &units, periods, spec, opts, label))
        .collect();
    let mut results = results.into_iter();
    let mut time = Vec::with_capacity(2);
    for r in results.by_ref().take(2) {
        time.push(r?);
    }
    // a binary partition that still separates after dropping constant rows is skipped;
    // the remaining sampled partitions estimate the same average
    let mut cross = Vec::new();
    let mut skipped_partitions = 0;
    let mut first_skip = None;
    while let (Some(a), Some(b)) = (results.next(), results.next()) {
        match (a, b) {
            (Ok(a), Ok(b)) => cross.extend([a, b]),
            (Err(e), _) | (_, Err(e)) if is_separation(&e) => {
                skipped_partitions += 1;
                first_skip.get_or_insert(e);
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    if cross.is_empty() {
        return Err(first_skip.unwrap_or_else(|| Error::Argument("no cross-sectional partitions".into())));
    }
    let subfits = time.len() + cross.len();
    let (time, cross) = (time.as_slice(), cross.as_slice());
    let results: Vec<&SubResult> = time.iter().chain(cross).collect();
    let mean_beta = |rs: &[SubResult]| {
        let mut acc = Array1::zeros(fit.params.beta.len());
        for r in rs {
            acc += &r.beta;
        }
        acc / rs.len() as f64
    };
    let time_b = mean_beta(time);
    let cross_b = mean_beta(cross);
    let full_b = fit.params.beta.clone();
    let corrected_b = &full_b * 3.0 - &time_b - &cross_b;

    let delta = match spec {
        Some(s) => {
            let full_d = effect_cells(panel, family, s, &fit.params)?.mean();
            let mean_d = |rs: &[SubResult]| rs.iter().map(|r| r.delta.unwrap_or(f64::NAN)).sum::<f64>() / rs.len() as f64;
            let (td, cd) = (mean_d(time), mean_d(cross));
            Some(JackknifeEstimate {
                full: full_d,
                time_average: td,
                cross_average: cd,
                corrected: combine(full_d, td, cd),
            })
        }
        None => None,
    };
    Ok(JackknifeReport {
        beta: JackknifeEstimate {
            full: full_b,
            time_average: time_b,
            cross_average: cross_b,
            corrected: corrected_b,
        },
        delta,
        subfits,
        skipped_partitions,
        max_objective_decrease: results.iter().map(|r| r.decrease).fold(0.0, f64::max),
        max_gradient: results.iter().map(|r| r.gradient).fold(0.0, f64::max),
    })
}

pub fn jackknife_beta(panel: &Panel, family: &Family, fit: &FitResult, opts: &FitOptions, plan: &SplitPlan) -> Result<Array1<f64>> {
    Ok(jackknife(panel, family, fit, None, opts, plan)?.beta.corrected)
}

pub fn jackknife_ape(
    panel: &Panel,
    family: &Family,
    fit: &FitResult,
    spec: &EffectSpec,
    opts: &FitOptions,
    plan: &SplitPlan,
) -> Result<f64> {
    let report = jackknife(panel, family, fit, Some(spec), opts, plan)?;
    Ok(report.delta.map(|d| d.corrected).unwrap_or(f64::NAN))
}
