//! Balanced panel storage, CSV ingestion, subpanel extraction and
//! regressor diagnostics.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Read;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::Family;

/// A balanced `N × T` panel with `K` regressors.
///
/// Outcomes are stored row-major as an `N × T` array so that every unit's
/// time series is contiguous; regressors as an `N × T × K` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    y: Array2<f64>,
    x: Array3<f64>,
    unit_labels: Vec<String>,
    time_labels: Vec<String>,
}

impl Panel {
    pub fn new(
        y: Array2<f64>,
        x: Array3<f64>,
        unit_labels: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = y.dim();
        if n < 1 || t < 1 {
            return Err(Error::Argument(format!("panel must be non-empty, got {n}x{t}")));
        }
        if x.dim().0 != n || x.dim().1 != t {
            return Err(Error::Argument(format!(
                "regressor tensor has shape {:?}, expected ({n}, {t}, K)",
                x.dim()
            )));
        }
        if unit_labels.len() != n || time_labels.len() != t {
            return Err(Error::Argument("label lengths do not match panel shape".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("panel contains non-finite values".into()));
        }
        Ok(Panel {
            y,
            x,
            unit_labels,
            time_labels,
        })
    }

    /// Panel with generated labels `1..=N` and `1..=T`.
    pub fn from_arrays(y: Array2<f64>, x: Array3<f64>) -> Result<Self> {
        let (n, t) = y.dim();
        let units = (1..=n).map(|i| i.to_string()).collect();
        let times = (1..=t).map(|i| i.to_string()).collect();
        Panel::new(y, x, units, times)
    }

    /// Panel without regressors.
    pub fn without_regressors(y: Array2<f64>) -> Result<Self> {
        let (n, t) = y.dim();
        Panel::from_arrays(y, Array3::zeros((n, t, 0)))
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.dim().2
    }

    pub fn outcomes(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn regressors(&self) -> &Array3<f64> {
        &self.x
    }

    /// The `N × T` slice of regressor `k`.
    pub fn regressor(&self, k: usize) -> ArrayView2<'_, f64> {
        self.x.index_axis(Axis(2), k)
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// `X_it' β` for every cell.
    pub fn linear_index(&self, beta: &Array1<f64>) -> Array2<f64> {
        let (n, t) = self.y.dim();
        let mut out = Array2::zeros((n, t));
        for k in 0..self.n_regressors() {
            out.scaled_add(beta[k], &self.regressor(k));
        }
        out
    }

    /// Verifies every outcome lies in the family support.
    pub fn check_support(&self, family: &Family) -> Result<()> {
        for ((i, t), &v) in self.y.indexed_iter() {
            if !family.supports(v) {
                return Err(Error::Domain {
                    family: format!("{} (unit {}, time {})", family.name(), self.unit_labels[i], self.time_labels[t]),
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Restriction to the listed units (kept in the given order) and a
    /// contiguous range of periods.
    pub fn subpanel(&self, units: &[usize], periods: std::ops::Range<usize>) -> Result<Panel> {
        if units.is_empty() || periods.is_empty() {
            return Err(Error::Argument("subpanel selection is empty".into()));
        }
        if periods.end > self.n_periods() {
            return Err(Error::Argument(format!(
                "period range {periods:?} exceeds T = {}",
                self.n_periods()
            )));
        }
        let mut seen = vec![false; self.n_units()];
        for &i in units {
            if i >= self.n_units() {
                return Err(Error::Argument(format!("unit index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Argument(format!("unit index {i} selected twice")));
            }
        }
        let rows = self.y.select(Axis(0), units);
        let y = rows.slice(ndarray::s![.., periods.clone()]).to_owned();
        let xr = self.x.select(Axis(0), units);
        let x = xr.slice(ndarray::s![.., periods.clone(), ..]).to_owned();
        Ok(Panel {
            y,
            x,
            unit_labels: units.iter().map(|&i| self.unit_labels[i].clone()).collect(),
            time_labels: self.time_labels[periods].to_vec(),
        })
    }

    /// Restriction to arbitrary unit and period index lists, kept in the
    /// given order.
    pub fn select(&self, units: &[usize], periods: &[usize]) -> Result<Panel> {
        if units.is_empty() || periods.is_empty() {
            return Err(Error::Argument("subpanel selection is empty".into()));
        }
        if units.iter().any(|&i| i >= self.n_units()) || periods.iter().any(|&t| t >= self.n_periods()) {
            return Err(Error::Argument("selection index out of range".into()));
        }
        Ok(Panel {
            y: self.y.select(Axis(0), units).select(Axis(1), periods).as_standard_layout().into_owned(),
            x: self.x.select(Axis(0), units).select(Axis(1), periods).as_standard_layout().into_owned(),
            unit_labels: units.iter().map(|&i| self.unit_labels[i].clone()).collect(),
            time_labels: periods.iter().map(|&t| self.time_labels[t].clone()).collect(),
        })
    }

    /// Drops units and periods whose outcomes never vary, repeating until
    /// none are left, and returns the kept unit and period indices. Binary
    /// models have no finite effect estimate for such rows or columns.
    pub fn drop_uninformative(&self) -> Result<(Panel, Vec<usize>, Vec<usize>)> {
        let varies = |v: ndarray::ArrayView1<f64>| v.iter().any(|&a| a != v[0]);
        let mut units: Vec<usize> = (0..self.n_units()).collect();
        let mut periods: Vec<usize> = (0..self.n_periods()).collect();
        loop {
            let y = self.y.select(Axis(0), &units).select(Axis(1), &periods);
            let keep_u: Vec<usize> = (0..units.len()).filter(|&i| varies(y.row(i))).collect();
            let keep_t: Vec<usize> = (0..periods.len()).filter(|&t| varies(y.column(t))).collect();
            if keep_u.len() == units.len() && keep_t.len() == periods.len() {
                break;
            }
            units = keep_u.iter().map(|&i| units[i]).collect();
            periods = keep_t.iter().map(|&t| periods[t]).collect();
            if units.is_empty() || periods.is_empty() {
                return Err(Error::DegenerateFactor("no unit or period has varying outcomes".into()));
            }
        }
        Ok((self.select(&units, &periods)?, units, periods))
    }
}

/// Column mapping for long-format CSV input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    /// Regressor columns; `None` means every remaining column, in header order.
    pub regressors: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "y".into(),
            regressors: None,
        }
    }
}

impl ColumnSchema {
    /// Parses `unit=...,time=...,y=...,x=a+b+c`. Unspecified keys keep their
    /// defaults. Regressor names may be separated by `+` or `;`.
    pub fn parse_overrides(spec: &str) -> Result<Self> {
        let mut schema = ColumnSchema::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("column mapping `{part}` lacks `=`")))?;
            let value = value.trim().to_string();
            match key.trim() {
                "unit" => schema.unit = value,
                "time" => schema.time = value,
                "y" => schema.outcome = value,
                "x" => {
                    let names: Vec<String> = value
                        .split(['+', ';'])
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    schema.regressors = Some(names);
                }
                other => return Err(Error::Argument(format!("unknown column key `{other}`"))),
            }
        }
        Ok(schema)
    }
}

/// Reads a long-format CSV (`unit,time,y,x1..xK` by default) into a
/// balanced panel sorted by unit and time.
///
/// Units are ordered by first appearance; times numerically when every time
/// label parses as a number, lexicographically otherwise.
pub fn load_panel<R: Read>(source: R, schema: &ColumnSchema) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Argument(format!("column `{name}` not found in header")))
    };
    let unit_col = find(&schema.unit)?;
    let time_col = find(&schema.time)?;
    let y_col = find(&schema.outcome)?;
    let x_cols: Vec<usize> = match &schema.regressors {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|c| ![unit_col, time_col, y_col].contains(c))
            .collect(),
    };
    let k = x_cols.len();

    let mut units: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut times: Vec<String> = Vec::new();
    let mut time_index: HashMap<String, usize> = HashMap::new();
    // (unit idx, time idx, line, values)
    let mut rows: Vec<(usize, usize, u64, f64, Vec<f64>)> = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("");
        let parse = |c: usize| -> Result<f64> {
            let raw = field(c);
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("column `{}`: `{raw}` is not a finite number", &headers[c]),
            })
        };
        let u = field(unit_col).to_string();
        let t = field(time_col).to_string();
        let ui = *unit_index.entry(u.clone()).or_insert_with(|| {
            units.push(u);
            units.len() - 1
        });
        let ti = *time_index.entry(t.clone()).or_insert_with(|| {
            times.push(t);
            times.len() - 1
        });
        let yv = parse(y_col)?;
        let xv = x_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        rows.push((ui, ti, line, yv, xv));
    }
    if units.is_empty() {
        return Err(Error::Argument("no data rows".into()));
    }

    // time order
    let numeric: Option<Vec<f64>> = times.iter().map(|t| t.parse::<f64>().ok()).collect();
    let mut order: Vec<usize> = (0..times.len()).collect();
    match &numeric {
        Some(vals) => order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(Ordering::Equal)),
        None => order.sort_by(|&a, &b| times[a].cmp(&times[b])),
    }
    if let Some(vals) = &numeric {
        // numerically equal but textually different labels, e.g. "1" and "1.0"
        if let Some(w) = order.windows(2).find(|w| vals[w[0]] == vals[w[1]]) {
            return Err(Error::Argument(format!(
                "time labels `{}` and `{}` denote the same period",
                times[w[0]], times[w[1]]
            )));
        }
    }
    let mut time_rank = vec![0; times.len()];
    for (rank, &ti) in order.iter().enumerate() {
        time_rank[ti] = rank;
    }

    let n = units.len();
    let t = times.len();
    let mut y = Array2::zeros((n, t));
    let mut x = Array3::zeros((n, t, k));
    let mut filled = Array2::from_elem((n, t), false);
    for (ui, ti, _line, yv, xv) in rows {
        let tr = time_rank[ti];
        if std::mem::replace(&mut filled[[ui, tr]], true) {
            return Err(Error::DuplicateCell {
                unit: units[ui].clone(),
                time: times[ti].clone(),
            });
        }
        y[[ui, tr]] = yv;
        for (kk, v) in xv.into_iter().enumerate() {
            x[[ui, tr, kk]] = v;
        }
    }
    for ui in 0..n {
        for tr in 0..t {
            if !filled[[ui, tr]] {
                return Err(Error::Unbalanced {
                    unit: units[ui].clone(),
                    time: times[order[tr]].clone(),
                });
            }
        }
    }
    let time_labels = order.iter().map(|&ti| times[ti].clone()).collect();
    Panel::new(y, x, units, time_labels)
}

/// Per-regressor variation flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressorVariation {
    /// Constant over time within every unit.
    pub constant_within_units: bool,
    /// Constant across units within every period.
    pub constant_within_periods: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportSummary {
    pub family: String,
    pub violations: usize,
    pub first_violation: Option<(usize, usize, f64)>,
    pub min_outcome: f64,
    pub max_outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelDiagnostics {
    /// Minimum eigenvalue of the coprojected regressor Gram matrix, if computed.
    pub noncolinearity_min_eigenvalue: Option<f64>,
    pub noncolinearity_matrix: Option<Vec<Vec<f64>>>,
    pub noncolinearity_flagged: bool,
    pub regressor_variation: Vec<RegressorVariation>,
    pub support: Option<SupportSummary>,
}

impl PanelDiagnostics {
    pub fn any_flag(&self) -> bool {
        self.noncolinearity_flagged
            || self
                .regressor_variation
                .iter()
                .any(|r| r.constant_within_units || r.constant_within_periods)
            || self.support.as_ref().is_some_and(|s| s.violations > 0)
    }
}

/// Eigenvalues below this are reported as a noncolinearity flag.
pub const NONCOLINEARITY_FLOOR: f64 = 1e-8;

const CONSTANT_TOL: f64 = 1e-12;

/// Per-regressor variation flags and (optionally) an outcome support
/// summary for `family`.
pub fn validate(panel: &Panel, family: Option<&Family>) -> PanelDiagnostics {
    let regressor_variation = (0..panel.n_regressors())
        .map(|k| {
            let xk = panel.regressor(k);
            let within_units = xk.rows().into_iter().all(|row| spread(row.iter()) <= CONSTANT_TOL);
            let within_periods = xk
                .columns()
                .into_iter()
                .all(|col| spread(col.iter()) <= CONSTANT_TOL);
            RegressorVariation {
                constant_within_units: within_units,
                constant_within_periods: within_periods,
            }
        })
        .collect();
    let support = family.map(|f| {
        let mut violations = 0;
        let mut first = None;
        for ((i, t), &v) in panel.outcomes().indexed_iter() {
            if !f.supports(v) {
                violations += 1;
                first.get_or_insert((i, t, v));
            }
        }
        let y = panel.outcomes();
        SupportSummary {
            family: f.to_string(),
            violations,
            first_violation: first,
            min_outcome: y.iter().copied().fold(f64::INFINITY, f64::min),
            max_outcome: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    });
    PanelDiagnostics {
        noncolinearity_min_eigenvalue: None,
        noncolinearity_matrix: None,
        noncolinearity_flagged: false,
        regressor_variation,
        support,
    }
}

fn spread<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Applies the coprojection `I - v(v'v)^{-1}v'`.
fn coproject(v: &Array1<f64>, target: &Array1<f64>) -> Array1<f64> {
    let c = v.dot(target) / v.dot(v);
    target - &(v * c)
}

/// Builds `D_{k1k2} = Tr(M_α X_{k1} M_γ X_{k2}') / (NT)` and reports its
/// minimum eigenvalue, together with the regressor variation flags.
pub fn noncolinearity_diagnostic(
    panel: &Panel,
    alpha: &Array1<f64>,
    gamma: &Array1<f64>,
) -> Result<PanelDiagnostics> {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    if k == 0 {
        return Err(Error::Argument("noncolinearity diagnostic needs K >= 1".into()));
    }
    if alpha.len() != n || gamma.len() != t {
        return Err(Error::Argument("factor vector lengths do not match the panel".into()));
    }
    if alpha.dot(alpha) == 0.0 || gamma.dot(gamma) == 0.0 {
        return Err(Error::Argument("coprojection needs nonzero alpha and gamma".into()));
    }
    // M_α X_k M_γ for each k; D is the Gram matrix of these residual arrays.
    let residuals: Vec<Array2<f64>> = (0..k)
        .map(|kk| {
            let mut m = panel.regressor(kk).to_owned();
            for mut col in m.columns_mut() {
                let c = coproject(alpha, &col.to_owned());
                col.assign(&c);
            }
            for mut row in m.rows_mut() {
                let r = coproject(gamma, &row.to_owned());
                row.assign(&r);
            }
            m
        })
        .collect();
    let nt = (n * t) as f64;
    let mut d = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = (&residuals[a] * &residuals[b]).sum() / nt;
            d[(a, b)] = v;
            d[(b, a)] = v;
        }
    }
    let min_eig = SymmetricEigen::new(d.clone()).eigenvalues.min();
    let mut diag = validate(panel, None);
    diag.noncolinearity_min_eigenvalue = Some(min_eig);
    diag.noncolinearity_matrix = Some((0..k).map(|a| (0..k).map(|b| d[(a, b)]).collect()).collect());
    diag.noncolinearity_flagged = min_eig < NONCOLINEARITY_FLOOR;
    Ok(diag)
}
