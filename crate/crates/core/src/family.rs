//! Single-index log-likelihood families.
//!
//! Every family is parameterised by the index `z = x'β + α_i γ_t` and is
//! strictly concave in `z`. Besides the log-likelihood itself we need its
//! index derivatives up to fourth order and the conditional mean function
//! `m(z) = E[Y | z]` with its derivatives (used by partial effects).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Beyond this magnitude the probit tail is evaluated through the
/// continued fraction for the Mills ratio.
const PROBIT_TAIL: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Family {
    /// Gaussian outcome with known scale `sigma`.
    Linear { sigma: f64 },
    Probit,
    Logit,
    Poisson,
}

/// Log-likelihood value and its index derivatives `∂_{z^q} ℓ`, `q = 1..4`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivativeBundle {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

/// Conditional mean `m(z)` and its first three derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanDerivatives {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl Family {
    pub fn is_binary(&self) -> bool {
        matches!(self, Family::Probit | Family::Logit)
    }

    pub fn linear(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Argument(format!(
                "linear family requires sigma > 0, got {sigma}"
            )));
        }
        Ok(Family::Linear { sigma })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear { .. } => "linear",
            Family::Probit => "probit",
            Family::Logit => "logit",
            Family::Poisson => "poisson",
        }
    }

    pub fn supports(&self, y: f64) -> bool {
        match self {
            Family::Linear { .. } => y.is_finite(),
            Family::Probit | Family::Logit => y == 0.0 || y == 1.0,
            Family::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        }
    }

    pub fn check_outcome(&self, y: f64) -> Result<()> {
        if self.supports(y) {
            Ok(())
        } else {
            Err(Error::Domain {
                family: self.name().to_string(),
                value: y,
            })
        }
    }

    /// `ℓ(y, z)`.
    pub fn loglik(&self, y: f64, z: f64) -> Result<f64> {
        self.check_outcome(y)?;
        if !z.is_finite() {
            return Err(Error::Argument(format!("non-finite index {z}")));
        }
        Ok(self.loglik_unchecked(y, z))
    }

    /// `ℓ(y, z)` without the support check. Callers must have validated `y`.
    pub fn loglik_unchecked(&self, y: f64, z: f64) -> f64 {
        match *self {
            Family::Linear { sigma } => {
                let r = (y - z) / sigma;
                -LN_SQRT_2PI - sigma.ln() - 0.5 * r * r
            }
            Family::Probit => {
                let q = 2.0 * y - 1.0;
                log_norm_cdf(q * z)
            }
            Family::Logit => {
                // y z - log(1 + e^z), arranged to avoid overflow
                y * z - softplus(z)
            }
            Family::Poisson => y * z - z.exp() - ln_factorial(y as u64),
        }
    }

    /// Analytic index derivatives up to `max_order` (1..=4). Orders above
    /// `max_order` are left at zero.
    pub fn derivatives(&self, y: f64, z: f64, max_order: u8) -> Result<DerivativeBundle> {
        if !(1..=4).contains(&max_order) {
            return Err(Error::Argument(format!(
                "derivative order must lie in 1..=4, got {max_order}"
            )));
        }
        self.check_outcome(y)?;
        if !z.is_finite() {
            return Err(Error::Argument(format!("non-finite index {z}")));
        }
        let mut b = self.derivs(y, z);
        if max_order < 4 {
            b.d4 = 0.0;
        }
        if max_order < 3 {
            b.d3 = 0.0;
        }
        if max_order < 2 {
            b.d2 = 0.0;
        }
        Ok(b)
    }

    /// All four derivatives plus the value, unchecked. This is the hot path
    /// used by the solvers and the correction formulas.
    pub fn derivs(&self, y: f64, z: f64) -> DerivativeBundle {
        match *self {
            Family::Linear { sigma } => {
                let s2 = sigma * sigma;
                let r = y - z;
                DerivativeBundle {
                    value: -LN_SQRT_2PI - sigma.ln() - 0.5 * r * r / s2,
                    d1: r / s2,
                    d2: -1.0 / s2,
                    d3: 0.0,
                    d4: 0.0,
                }
            }
            Family::Poisson => {
                let e = z.exp();
                DerivativeBundle {
                    value: y * z - e - ln_factorial(y as u64),
                    d1: y - e,
                    d2: -e,
                    d3: -e,
                    d4: -e,
                }
            }
            Family::Logit => {
                let p = logistic(z);
                let w = p * (1.0 - p);
                DerivativeBundle {
                    value: y * z - softplus(z),
                    d1: y - p,
                    d2: -w,
                    d3: -w * (1.0 - 2.0 * p),
                    d4: -w * (1.0 - 6.0 * p + 6.0 * p * p),
                }
            }
            Family::Probit => {
                // ℓ = log Φ(u) with u = q z, q = ±1
                let q = 2.0 * y - 1.0;
                let u = q * z;
                let (log_cdf, m, u_plus_m) = probit_core(u);
                let m1 = -m * u_plus_m;
                let m2 = -m1 * u - m - 2.0 * m * m1;
                let m3 = -m2 * u - 2.0 * m1 - 2.0 * m1 * m1 - 2.0 * m * m2;
                DerivativeBundle {
                    value: log_cdf,
                    d1: q * m,
                    d2: m1,
                    d3: q * m2,
                    d4: m3,
                }
            }
        }
    }

    /// Conditional mean of the outcome given the index, with derivatives.
    pub fn mean(&self, z: f64) -> MeanDerivatives {
        match *self {
            Family::Linear { .. } => MeanDerivatives {
                m0: z,
                m1: 1.0,
                m2: 0.0,
                m3: 0.0,
            },
            Family::Poisson => {
                let e = z.exp();
                MeanDerivatives {
                    m0: e,
                    m1: e,
                    m2: e,
                    m3: e,
                }
            }
            Family::Logit => {
                let p = logistic(z);
                let w = p * (1.0 - p);
                MeanDerivatives {
                    m0: p,
                    m1: w,
                    m2: w * (1.0 - 2.0 * p),
                    m3: w * (1.0 - 6.0 * p + 6.0 * p * p),
                }
            }
            Family::Probit => {
                let f = norm_pdf(z);
                MeanDerivatives {
                    m0: norm_cdf(z),
                    m1: f,
                    m2: -z * f,
                    m3: (z * z - 1.0) * f,
                }
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Linear { sigma } => write!(f, "linear:sigma={sigma}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// Accepts `linear:sigma=<v>` (or bare `linear`, sigma 1), `probit`,
    /// `logit`, `poisson`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head.to_ascii_lowercase().as_str(), rest) {
            ("linear", None) => Family::linear(1.0),
            ("linear", Some(r)) => {
                let v = r
                    .strip_prefix("sigma=")
                    .ok_or_else(|| Error::Argument(format!("expected linear:sigma=<v>, got `{s}`")))?;
                let sigma: f64 = v
                    .parse()
                    .map_err(|_| Error::Argument(format!("invalid sigma `{v}`")))?;
                Family::linear(sigma)
            }
            ("probit", None) => Ok(Family::Probit),
            ("logit", None) => Ok(Family::Logit),
            ("poisson", None) => Ok(Family::Poisson),
            _ => Err(Error::Argument(format!("unknown family `{s}`"))),
        }
    }
}

/// Summary of `-∂_{z²}ℓ` over a grid of outcomes and indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcavityReport {
    pub min_curvature: f64,
    pub max_curvature: f64,
    /// `(y, z)` points where `∂_{z²}ℓ` was not strictly negative.
    pub violations: Vec<(f64, f64)>,
    /// Outcome samples skipped because they lie outside the support.
    pub unsupported: Vec<f64>,
}

impl ConcavityReport {
    pub fn is_concave(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_concavity(family: &Family, y_samples: &[f64], z_grid: &[f64]) -> ConcavityReport {
    let mut report = ConcavityReport {
        min_curvature: f64::INFINITY,
        max_curvature: f64::NEG_INFINITY,
        violations: Vec::new(),
        unsupported: Vec::new(),
    };
    for &y in y_samples {
        if !family.supports(y) {
            report.unsupported.push(y);
            continue;
        }
        for &z in z_grid {
            let c = -family.derivs(y, z).d2;
            report.min_curvature = report.min_curvature.min(c);
            report.max_curvature = report.max_curvature.max(c);
            if !(c > 0.0) {
                report.violations.push((y, z));
            }
        }
    }
    report
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn log_norm_cdf(u: f64) -> f64 {
    probit_core(u).0
}

/// Returns `(log Φ(u), φ(u)/Φ(u), u + φ(u)/Φ(u))`.
fn probit_core(u: f64) -> (f64, f64, f64) {
    if u < -PROBIT_TAIL {
        // Φ(u) = φ(u) / (x + c) with x = -u and c the continued-fraction tail
        // 1/(x + 2/(x + 3/(x + ...))); the inverse Mills ratio is x + c and
        // u + m = c exactly, which avoids cancellation.
        let x = -u;
        let c = mills_tail(x);
        let m = x + c;
        let log_cdf = -0.5 * u * u - LN_SQRT_2PI - m.ln();
        (log_cdf, m, c)
    } else if u > PROBIT_TAIL {
        let upper = 0.5 * erfc(u / std::f64::consts::SQRT_2);
        let log_cdf = (-upper).ln_1p();
        let m = norm_pdf(u) / (1.0 - upper);
        (log_cdf, m, u + m)
    } else {
        let cdf = norm_cdf(u);
        let m = norm_pdf(u) / cdf;
        (cdf.ln(), m, u + m)
    }
}

/// `1/(x + 2/(x + 3/(x + ...)))`, evaluated bottom-up.
fn mills_tail(x: f64) -> f64 {
    let mut acc = 0.0;
    for k in (2..=80).rev() {
        acc = k as f64 / (x + acc);
    }
    1.0 / (x + acc)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn loglik_examples() {
        assert_relative_eq!(Family::Logit.loglik(1.0, 0.0).unwrap(), -(2f64.ln()), epsilon = 1e-15);
        assert_relative_eq!(
            Family::Poisson.loglik(2.0, 0.0).unwrap(),
            -1.0 - 2f64.ln(),
            epsilon = 1e-14
        );
        // 40-digit reference value of log Φ(0.5)
        assert_relative_eq!(
            Family::Probit.loglik(1.0, 0.5).unwrap(),
            -0.368_946_415_288_656_4,
            epsilon = 1e-14
        );
    }

    #[test]
    fn first_derivative_examples() {
        let d = Family::Logit.derivatives(1.0, 0.0, 1).unwrap();
        assert_relative_eq!(d.d1, 0.5, epsilon = 1e-15);
        assert_eq!(d.d2, 0.0);
        let d = Family::Poisson.derivatives(1.0, 0.0, 1).unwrap();
        assert_eq!(d.d1, 0.0);
        let d = Family::Probit.derivatives(1.0, 0.0, 1).unwrap();
        assert_relative_eq!(d.d1, (2.0 / PI).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(d.d1, 0.797_884_6, epsilon = 1e-7);
    }

    #[test]
    fn probit_tail_against_reference() {
        // high-precision values of log Φ(u), φ/Φ and -m(u+m)
        let cases = [
            (-8.0, -35.013_437_159_914_55, 8.121_368_112_236_113, -0.985_675_116_556_659),
            (-10.0, -53.231_285_150_512_47, 10.098_093_233_962_51, -0.990_554_622_174_343_7),
            (-30.0, -454.321_243_956_343_2, 30.033_259_667_433_68, -0.998_896_228_488_11),
        ];
        for (u, lc, m, d2) in cases {
            let b = Family::Probit.derivs(1.0, u);
            assert_relative_eq!(b.value, lc, max_relative = 1e-14);
            assert_relative_eq!(b.d1, m, max_relative = 1e-14);
            assert_relative_eq!(b.d2, d2, max_relative = 1e-11);
        }
        let b = Family::Probit.derivs(1.0, 7.0);
        assert_relative_eq!(b.value, -1.279_812_543_886_654e-12, max_relative = 1e-9);
        assert_relative_eq!(b.d1, 9.134_720_408_376_284e-12, max_relative = 1e-9);
    }

    #[test]
    fn unsupported_outcomes_are_rejected() {
        let err = Family::Probit.loglik(2.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("probit"));
        assert!(err.to_string().contains('2'));
        assert!(Family::Poisson.loglik(-1.0, 0.0).is_err());
        assert!(Family::Poisson.loglik(1.5, 0.0).is_err());
        assert!(Family::Logit.derivatives(0.5, 0.0, 2).is_err());
    }

    #[test]
    fn order_out_of_range() {
        assert!(matches!(
            Family::Logit.derivatives(1.0, 0.0, 0),
            Err(Error::Argument(_))
        ));
        assert!(Family::Logit.derivatives(1.0, 0.0, 5).is_err());
    }

    #[test]
    fn concavity_examples() {
        let grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 * 0.01).collect();
        let r = check_concavity(&Family::Poisson, &[0.0], &grid);
        assert_relative_eq!(r.min_curvature, (-1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(r.max_curvature, 1f64.exp(), epsilon = 1e-15);
        assert!(r.is_concave());

        let r = check_concavity(&Family::Logit, &[0.0, 1.0], &[0.0]);
        assert_relative_eq!(r.min_curvature, 0.25);
        assert_relative_eq!(r.max_curvature, 0.25);

        let r = check_concavity(&Family::linear(2.0).unwrap(), &[-3.0, 0.1, 5.0], &grid);
        assert_eq!(r.min_curvature, 0.25);
        assert_eq!(r.max_curvature, 0.25);

        let r = check_concavity(&Family::Probit, &[0.0, 1.0, 3.0], &[0.0]);
        assert_eq!(r.unsupported, vec![3.0]);
    }

    #[test]
    fn exact_higher_derivatives() {
        let lin = Family::linear(1.7).unwrap();
        for &(y, z) in &[(0.3, -2.0), (5.0, 1.0)] {
            let b = lin.derivs(y, z);
            assert_eq!(b.d3, 0.0);
            assert_eq!(b.d4, 0.0);
            let p = Family::Poisson.derivs(3.0, z);
            assert_eq!(p.d2, -z.exp());
            assert_eq!(p.d3, -z.exp());
            assert_eq!(p.d4, -z.exp());
        }
    }

    #[test]
    fn family_strings_round_trip() {
        for s in ["linear:sigma=2", "probit", "logit", "poisson"] {
            let f: Family = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert_eq!("linear".parse::<Family>().unwrap(), Family::Linear { sigma: 1.0 });
        assert!("linear:sigma=-1".parse::<Family>().is_err());
        assert!("cauchit".parse::<Family>().is_err());
    }
}
