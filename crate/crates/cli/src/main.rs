//! Command-line front end: `fit`, `ape`, `simulate` and `oracle-check`.
//!
//! Every command prints one JSON document (schema 1) that records the
//! resolved configuration, so rerunning it reproduces the output exactly.
//! Exit codes: 0 success, 2 usage, 3 conflicting flags, 4 file IO, 5 bad
//! data, 6 estimation failure.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ifecmle::ape::{ape_analytic, ApeOptions, EffectSpec};
use ifecmle::bias::{analytic_correction, beta_confidence_interval, normal_critical_value, CorrectionReport};
use ifecmle::estimator::{fit_ife, fit_ife_multistart, FitOptions, FitResult};
use ifecmle::jackknife::{jackknife, make_split_plan, DEFAULT_SPLITS};
use ifecmle::oracle::compare_with_ife;
use ifecmle::panel::{load_panel, validate, ColumnSchema};
use ifecmle::projection::build_hessian;
use ifecmle::simulation::{dgp_generate, render_tables, run_mc, DgpKind, DgpSpec, EffectLaw, McConfig, McResult};
use ifecmle::{Error, Family, Panel};
use serde_json::{json, Value};

const SCHEMA: u32 = 1;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Conflict(String),
    Io(String),
    Data(String),
    Estimation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Conflict(_) => 3,
            CliError::Io(_) => 4,
            CliError::Data(_) => 5,
            CliError::Estimation(_) => 6,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Conflict(_) => "conflict",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Estimation(_) => "estimation",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Conflict(m) | CliError::Io(m) | CliError::Data(m) | CliError::Estimation(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) => CliError::Io(msg),
            Error::Csv(ref c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => CliError::Io(msg),
            Error::Domain { .. } | Error::Unbalanced { .. } | Error::DuplicateCell { .. } | Error::Parse { .. } | Error::Csv(_) => {
                CliError::Data(msg)
            }
            Error::Argument(_) => CliError::Usage(msg),
            _ => CliError::Estimation(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "ifecmle", version, about = "Interactive fixed effects estimation for nonlinear panel models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate coefficients, optionally bias corrected.
    Fit(FitArgs),
    /// Estimate an average partial effect.
    Ape(ApeArgs),
    /// Run Monte Carlo designs and write the bias and coverage tables.
    Simulate(SimulateArgs),
    /// Compare the estimator with principal components on a Gaussian panel.
    OracleCheck(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Correction {
    None,
    Analytic,
    Jackknife,
}

impl Correction {
    fn name(self) -> &'static str {
        match self {
            Correction::None => "none",
            Correction::Analytic => "analytic",
            Correction::Jackknife => "jackknife",
        }
    }
}

#[derive(Args, Clone)]
struct EstimationArgs {
    /// probit, logit, poisson or linear:sigma=<s>.
    #[arg(long)]
    model: String,
    /// Long-format CSV with unit, time, outcome and regressor columns.
    #[arg(long)]
    data: PathBuf,
    /// Column overrides such as `unit=id,time=year,y=out,x=x1+x2`.
    #[arg(long)]
    columns: Option<String>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = Correction::Analytic)]
    correct: Correction,
    /// Spectral trimming L for the analytical correction (default 0).
    #[arg(long)]
    trim: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Cross-section partitions for the jackknife (default 20).
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra fits from random starting effects.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: EstimationArgs,
    /// Include the eigenvalues of the incidental-parameter Hessian.
    #[arg(long)]
    dump_hessian_spectrum: bool,
}

#[derive(Args)]
struct ApeArgs {
    #[command(flatten)]
    common: EstimationArgs,
    /// binary:k=<j>, deriv:k=<j> or variance (regressors numbered from 1).
    #[arg(long)]
    effect: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum DgpName {
    LinearNonreg,
    Probit,
    LinearExog,
    Poisson,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    dgp: Option<DgpName>,
    /// Comma-separated unit counts.
    #[arg(long = "N", value_delimiter = ',')]
    n: Vec<usize>,
    /// Comma-separated period counts; cells with T > N are skipped.
    #[arg(long = "T", value_delimiter = ',')]
    t: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Error variance of the Gaussian design without regressors.
    #[arg(long, default_value_t = 1.0)]
    delta0: f64,
    /// True coefficients for designs with regressors.
    #[arg(long, value_delimiter = ',')]
    beta0: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// normal, uniform:<lo>,<hi> or signed:<lo>,<hi>.
    #[arg(long)]
    effect_law: Option<String>,
    /// Draw the effects once and keep them across replications.
    #[arg(long)]
    fixed_effects: bool,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    trim: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    no_analytic: bool,
    #[arg(long)]
    no_jackknife: bool,
    /// Worker threads (default: IFE_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// JSON file with one Monte Carlo configuration or a list of them;
    /// replaces the design flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bias and dispersion table (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coverage table (CSV); defaults to `<out stem>_coverage.csv`.
    #[arg(long)]
    coverage_out: Option<PathBuf>,
    /// JSON summary file (stdout when omitted).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// CSV panel without regressors; a simulated panel is used when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    columns: Option<String>,
    #[arg(long = "N", default_value_t = 10)]
    n: usize,
    #[arg(long = "T", default_value_t = 10)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => run_fit(&a),
        Command::Ape(a) => run_ape(&a),
        Command::Simulate(a) => run_simulate(&a),
        Command::OracleCheck(a) => run_oracle(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = json!({"schema": SCHEMA, "error": {"kind": e.kind(), "message": e.message()}});
            eprintln!("{doc}");
            ExitCode::from(e.code())
        }
    }
}

fn emit(doc: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(doc).expect("JSON values serialise") + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}"))),
    }
}

fn parse_family(s: &str) -> CliResult<Family> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn check_level(level: f64) -> CliResult<()> {
    normal_critical_value(level).map(|_| ()).map_err(|e| CliError::Usage(e.to_string()))
}

fn check_flags(a: &EstimationArgs) -> CliResult<()> {
    if a.trim.is_some() && a.correct != Correction::Analytic {
        return Err(CliError::Conflict(format!(
            "--trim only applies to the analytic correction (got --correct {})",
            a.correct.name()
        )));
    }
    if a.splits.is_some() && a.correct != Correction::Jackknife {
        return Err(CliError::Conflict(format!(
            "--splits only applies to the jackknife correction (got --correct {})",
            a.correct.name()
        )));
    }
    if a.splits == Some(0) {
        return Err(CliError::Usage("--splits must be at least 1".into()));
    }
    check_level(a.level)
}

fn fit_options(a: &EstimationArgs) -> CliResult<FitOptions> {
    let opts = FitOptions {
        tol: a.tol,
        max_outer_iters: a.max_iters,
        ..FitOptions::default()
    };
    opts.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(opts)
}

fn read_panel(path: &Path, columns: Option<&str>) -> CliResult<Panel> {
    let schema = match columns {
        Some(c) => ColumnSchema::parse_overrides(c).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ColumnSchema::default(),
    };
    let file = File::open(path).map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    Ok(load_panel(BufReader::new(file), &schema)?)
}

/// Panel after dropping binary units and periods without outcome variation.
struct Prepared {
    panel: Panel,
    dropped_units: Vec<String>,
    dropped_periods: Vec<String>,
}

fn prepare(panel: Panel, family: &Family) -> CliResult<Prepared> {
    panel.check_support(family)?;
    if !family.is_binary() {
        return Ok(Prepared {
            panel,
            dropped_units: Vec::new(),
            dropped_periods: Vec::new(),
        });
    }
    let (kept, units, periods) = panel.drop_uninformative()?;
    let dropped_units = (0..panel.n_units())
        .filter(|i| !units.contains(i))
        .map(|i| panel.unit_labels()[i].clone())
        .collect();
    let dropped_periods = (0..panel.n_periods())
        .filter(|t| !periods.contains(t))
        .map(|t| panel.time_labels()[t].clone())
        .collect();
    Ok(Prepared {
        panel: kept,
        dropped_units,
        dropped_periods,
    })
}

fn estimate(panel: &Panel, family: &Family, a: &EstimationArgs, opts: &FitOptions) -> CliResult<FitResult> {
    let fit = if a.restarts > 0 {
        fit_ife_multistart(panel, family, opts, a.restarts, a.seed)?
    } else {
        fit_ife(panel, family, opts)?
    };
    if !fit.converged {
        return Err(CliError::Estimation(format!(
            "no convergence after {} iterations (gradient sup-norm {:.3e})",
            fit.outer_iterations, fit.gradient_sup_norm
        )));
    }
    Ok(fit)
}

fn common_config(command: &str, a: &EstimationArgs, family: &Family) -> Value {
    let correct = a.correct;
    json!({
        "command": command,
        "model": family.to_string(),
        "data": a.data.display().to_string(),
        "columns": a.columns,
        "tol": a.tol,
        "max_iters": a.max_iters,
        "correct": correct.name(),
        "trim": (correct == Correction::Analytic).then(|| a.trim.unwrap_or(0)),
        "splits": (correct == Correction::Jackknife).then(|| a.splits.unwrap_or(DEFAULT_SPLITS)),
        "level": a.level,
        "seed": a.seed,
        "restarts": a.restarts,
    })
}

fn fit_json(panel: &Panel, fit: &FitResult) -> Value {
    json!({
        "beta": fit.params.beta.to_vec(),
        "loglik": fit.loglik,
        "iterations": fit.outer_iterations,
        "converged": fit.converged,
        "gradient_sup_norm": fit.gradient_sup_norm,
        "alpha": labelled(panel.unit_labels(), &fit.params.alpha.to_vec()),
        "gamma": labelled(panel.time_labels(), &fit.params.gamma.to_vec()),
    })
}

fn labelled(labels: &[String], values: &[f64]) -> Value {
    Value::Array(
        labels
            .iter()
            .zip(values)
            .map(|(l, v)| json!({"label": l, "value": v}))
            .collect(),
    )
}

fn correction_json(r: &CorrectionReport) -> Value {
    json!({
        "w_hat": r.w_hat.rows().into_iter().map(|row| row.to_vec()).collect::<Vec<_>>(),
        "w_min_eigenvalue": r.w_min_eigenvalue,
        "b_hat": r.b_hat.to_vec(),
        "d_hat": r.d_hat.to_vec(),
        "trim": r.trimming_l,
    })
}

fn run_fit(args: &FitArgs) -> CliResult<()> {
    let a = &args.common;
    check_flags(a)?;
    let family = parse_family(&a.model)?;
    let opts = fit_options(a)?;
    let raw = read_panel(&a.data, a.columns.as_deref())?;
    let diagnostics = validate(&raw, Some(&family));
    let prep = prepare(raw, &family)?;
    let panel = &prep.panel;
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    if k == 0 {
        return Err(CliError::Usage("fit needs at least one regressor column".into()));
    }
    let fit = estimate(panel, &family, a, &opts)?;
    let trim = a.trim.unwrap_or(0);
    // Ŵ is needed for the intervals whatever the correction
    let report = analytic_correction(panel, &family, &fit, trim, a.level)?;
    let (beta, extra) = match a.correct {
        Correction::None => (fit.params.beta.clone(), Value::Null),
        Correction::Analytic => (report.beta_corrected.clone(), correction_json(&report)),
        Correction::Jackknife => {
            let splits = a.splits.unwrap_or(DEFAULT_SPLITS);
            let plan = make_split_plan(n, t, splits, a.seed)?;
            let jk = jackknife(panel, &family, &fit, None, &opts, &plan)?;
            let extra = json!({
                "time_average": jk.beta.time_average.to_vec(),
                "cross_average": jk.beta.cross_average.to_vec(),
                "subfits": jk.subfits,
                "skipped_partitions": jk.skipped_partitions,
            });
            (jk.beta.corrected, extra)
        }
    };
    let (lo, hi) = beta_confidence_interval(&beta, &report.w_hat, n, t, a.level)?;
    let mut doc = json!({
        "schema": SCHEMA,
        "config": common_config("fit", a, &family),
        "n_units": n,
        "n_periods": t,
        "n_regressors": k,
        "dropped_units": prep.dropped_units,
        "dropped_periods": prep.dropped_periods,
        "diagnostics": serde_json::to_value(&diagnostics).expect("diagnostics serialise"),
        "fit": fit_json(panel, &fit),
        "estimate": {
            "correction": a.correct.name(),
            "beta": beta.to_vec(),
            "ci_lower": lo.to_vec(),
            "ci_upper": hi.to_vec(),
            "level": a.level,
            "details": extra,
        },
    });
    if args.dump_hessian_spectrum {
        let h = build_hessian(panel, &family, &fit.params)?;
        let mut ev: Vec<f64> = h.dense().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        doc["config"]["dump_hessian_spectrum"] = json!(true);
        doc["hessian_spectrum"] = json!(ev);
    }
    emit(&doc, a.out.as_deref())
}

fn run_ape(args: &ApeArgs) -> CliResult<()> {
    let a = &args.common;
    check_flags(a)?;
    let family = parse_family(&a.model)?;
    let spec: EffectSpec = args.effect.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let opts = fit_options(a)?;
    let raw = read_panel(&a.data, a.columns.as_deref())?;
    spec.validate(&family, raw.n_regressors()).map_err(|e| CliError::Usage(e.to_string()))?;
    let prep = prepare(raw, &family)?;
    let panel = &prep.panel;
    let (n, t) = (panel.n_units(), panel.n_periods());
    let fit = estimate(panel, &family, a, &opts)?;
    let ape_opts = ApeOptions {
        trim: a.trim.unwrap_or(0),
        level: a.level,
        correct_beta_first: a.correct == Correction::Analytic,
        keep_influence: false,
        fit: opts.clone(),
    };
    let report = ape_analytic(panel, &family, &fit, &spec, &ape_opts)?;
    let (delta, details) = match a.correct {
        Correction::None => (report.delta_hat, Value::Null),
        Correction::Analytic => (
            report.delta_corrected,
            json!({"b_delta": report.b_delta, "d_delta": report.d_delta, "beta_used": report.beta_used.to_vec()}),
        ),
        Correction::Jackknife => {
            let plan = make_split_plan(n, t, a.splits.unwrap_or(DEFAULT_SPLITS), a.seed)?;
            let jk = jackknife(panel, &family, &fit, Some(&spec), &opts, &plan)?;
            let d = jk.delta.expect("effect requested");
            (
                d.corrected,
                json!({
                    "time_average": d.time_average,
                    "cross_average": d.cross_average,
                    "subfits": jk.subfits,
                    "skipped_partitions": jk.skipped_partitions,
                }),
            )
        }
    };
    let z = normal_critical_value(a.level)?;
    let mut config = common_config("ape", a, &family);
    config["effect"] = json!(spec.to_string());
    let doc = json!({
        "schema": SCHEMA,
        "config": config,
        "n_units": n,
        "n_periods": t,
        "dropped_units": prep.dropped_units,
        "dropped_periods": prep.dropped_periods,
        "fit": fit_json(panel, &fit),
        "estimate": {
            "effect": spec.to_string(),
            "correction": a.correct.name(),
            "delta_uncorrected": report.delta_hat,
            "delta": delta,
            "se": report.se,
            "ci_lower": delta - z * report.se,
            "ci_upper": delta + z * report.se,
            "level": a.level,
            "details": details,
        },
    });
    emit(&doc, a.out.as_deref())
}

fn parse_law(s: &str) -> CliResult<EffectLaw> {
    let bounds = |rest: &str| -> CliResult<(f64, f64)> {
        let parts: Vec<&str> = rest.split(',').collect();
        match parts.as_slice() {
            [lo, hi] => Ok((
                lo.trim().parse().map_err(|_| CliError::Usage(format!("bad bound '{lo}'")))?,
                hi.trim().parse().map_err(|_| CliError::Usage(format!("bad bound '{hi}'")))?,
            )),
            _ => Err(CliError::Usage(format!("effect law '{s}' needs two bounds"))),
        }
    };
    match s.split_once(':') {
        None if s == "normal" => Ok(EffectLaw::StandardNormal),
        Some(("uniform", rest)) => bounds(rest).map(|(lo, hi)| EffectLaw::Uniform { lo, hi }),
        Some(("signed", rest)) => bounds(rest).map(|(lo, hi)| EffectLaw::SignedUniform { lo, hi }),
        _ => Err(CliError::Usage(format!(
            "unknown effect law '{s}' (expected normal, uniform:<lo>,<hi> or signed:<lo>,<hi>)"
        ))),
    }
}

fn configs_from_flags(a: &SimulateArgs) -> CliResult<Vec<McConfig>> {
    let dgp = a.dgp.ok_or_else(|| CliError::Usage("--dgp is required unless --config is given".into()))?;
    if a.n.is_empty() || a.t.is_empty() {
        return Err(CliError::Usage("--N and --T are required unless --config is given".into()));
    }
    let with_regressors = !matches!(dgp, DgpName::LinearNonreg);
    if with_regressors && a.beta0.is_empty() {
        return Err(CliError::Usage("--beta0 is required for designs with regressors".into()));
    }
    if !with_regressors && !a.beta0.is_empty() {
        return Err(CliError::Conflict("--beta0 does not apply to linear-nonreg".into()));
    }
    let kind = match dgp {
        DgpName::LinearNonreg => DgpKind::LinearNonreg { delta0: a.delta0 },
        DgpName::Probit => DgpKind::ProbitStatic { beta0: a.beta0.clone() },
        DgpName::LinearExog => DgpKind::LinearExog {
            beta0: a.beta0.clone(),
            sigma: a.sigma,
        },
        DgpName::Poisson => DgpKind::PoissonExog { beta0: a.beta0.clone() },
    };
    let law = match &a.effect_law {
        Some(s) => parse_law(s)?,
        None => EffectLaw::StandardNormal,
    };
    let mut out = Vec::new();
    for &n in &a.n {
        for &t in &a.t {
            if t > n {
                continue;
            }
            let dgp = DgpSpec {
                kind: kind.clone(),
                n,
                t,
                effect_law: law,
                seed: a.seed,
                fixed_effects: a.fixed_effects,
            };
            let mut cfg = McConfig::new(dgp, a.reps);
            cfg.splits = a.splits;
            cfg.trim = a.trim;
            cfg.level = a.level;
            cfg.analytic = !a.no_analytic;
            cfg.jackknife = !a.no_jackknife;
            cfg.workers = a.workers;
            out.push(cfg);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no (N, T) cell with T <= N".into()));
    }
    Ok(out)
}

fn configs_from_file(path: &Path) -> CliResult<Vec<McConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|c| vec![c])
    };
    parsed.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run_simulate(a: &SimulateArgs) -> CliResult<()> {
    let configs = match &a.config {
        Some(path) => {
            if a.dgp.is_some() || !a.n.is_empty() || !a.t.is_empty() {
                return Err(CliError::Conflict("--config replaces --dgp, --N and --T".into()));
            }
            configs_from_file(path)?
        }
        None => configs_from_flags(a)?,
    };
    if a.coverage_out.is_some() && a.out.is_none() {
        return Err(CliError::Conflict("--coverage-out needs --out".into()));
    }
    let mut results: Vec<McResult> = Vec::with_capacity(configs.len());
    for cfg in &configs {
        results.push(run_mc(cfg, &FitOptions::default())?);
    }
    let (table1, table2) = render_tables(&results);
    if let Some(out) = &a.out {
        let coverage = a.coverage_out.clone().unwrap_or_else(|| coverage_path(out));
        for (path, text) in [(out, &table1), (&coverage, &table2)] {
            std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    let doc = json!({
        "schema": SCHEMA,
        "config": {
            "command": "simulate",
            "cells": serde_json::to_value(&configs).expect("configurations serialise"),
        },
        "results": serde_json::to_value(&results).expect("results serialise"),
        "table1_csv": table1,
        "table2_csv": table2,
    });
    emit(&doc, a.summary.as_deref())
}

fn coverage_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "table".into());
    out.with_file_name(format!("{stem}_coverage.csv"))
}

fn run_oracle(a: &OracleArgs) -> CliResult<()> {
    if !(a.tolerance > 0.0) {
        return Err(CliError::Usage("--tolerance must be positive".into()));
    }
    let (panel, source) = match &a.data {
        Some(path) => (read_panel(path, a.columns.as_deref())?, json!(path.display().to_string())),
        None => {
            let spec = DgpSpec::linear_nonreg(a.n, a.t, a.sigma * a.sigma, a.seed);
            (dgp_generate(&spec, 0)?.0, json!({"N": a.n, "T": a.t, "seed": a.seed}))
        }
    };
    if panel.n_regressors() != 0 {
        return Err(CliError::Data("the oracle check needs a panel without regressors".into()));
    }
    let c = compare_with_ife(&panel, a.sigma, &FitOptions::default())?;
    let doc = json!({
        "schema": SCHEMA,
        "config": {"command": "oracle-check", "source": source, "sigma": a.sigma, "tolerance": a.tolerance},
        "max_product_diff": c.max_product_diff,
        "delta_diff": c.delta_diff,
        "ife_loglik": c.ife_loglik,
        "pca_loglik": c.pca_loglik,
        "ambiguous": c.ambiguous,
        "ife_converged": c.ife_converged,
        "agree": c.discrepancy() <= a.tolerance,
    });
    emit(&doc, a.out.as_deref())
}
