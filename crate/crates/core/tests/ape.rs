use approx::assert_relative_eq;
use ifecmle::ape::{ape_analytic, correct_ape_analytic, effect_cells, plugin_b_delta, plugin_d_delta, ApeOptions, EffectSpec};
use ifecmle::bias::PluginState;
use ifecmle::estimator::{fit_ife, FitOptions, Params};
use ifecmle::projection::psi_projection;
use ifecmle::{Family, Panel};
use ndarray::{array, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

fn random_probit(seed: u64, n: usize, t: usize, k: usize) -> (Panel, Params) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array3::from_shape_fn((n, t, k), |(_, _, kk)| {
        if kk == 0 {
            f64::from(u8::from(rng.random::<bool>()))
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    let y = Array2::from_shape_fn((n, t), |_| f64::from(u8::from(rng.random::<bool>())));
    let params = Params {
        beta: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        alpha: (0..n).map(|_| rng.random_range(0.3..1.5)).collect(),
        gamma: (0..t).map(|_| rng.random_range(-1.2..1.2)).collect(),
    };
    (Panel::from_arrays(y, x).unwrap(), params)
}

#[test]
fn binary_effect_matches_double_loop() {
    let (panel, p) = random_probit(1, 3, 3, 2);
    let cells = effect_cells(&panel, &Family::Probit, &EffectSpec::BinaryDiff { k: 0 }, &p).unwrap();
    let phi = std_normal();
    let x = panel.regressors();
    let mut total = 0.0;
    for i in 0..3 {
        for t in 0..3 {
            let rest = x[[i, t, 1]] * p.beta[1] + p.alpha[i] * p.gamma[t];
            total += phi.cdf(p.beta[0] + rest) - phi.cdf(rest);
        }
    }
    assert_relative_eq!(cells.mean(), total / 9.0, max_relative = 1e-13);
}

#[test]
fn derivative_effect_matches_density() {
    let (panel, p) = random_probit(2, 3, 4, 2);
    let cells = effect_cells(&panel, &Family::Probit, &EffectSpec::ContinuousDeriv { k: 1 }, &p).unwrap();
    let phi = std_normal();
    let x = panel.regressors();
    for i in 0..3 {
        for t in 0..4 {
            let z = x[[i, t, 0]] * p.beta[0] + x[[i, t, 1]] * p.beta[1] + p.alpha[i] * p.gamma[t];
            assert_relative_eq!(cells.delta[[i, t]], p.beta[1] * phi.pdf(z), max_relative = 1e-13);
        }
    }
}

#[test]
fn poisson_derivative_effect_vanishes_with_zero_slope() {
    let panel = Panel::from_arrays(array![[1.0, 2.0], [0.0, 3.0]], Array3::from_elem((2, 2, 1), 0.5)).unwrap();
    let p = Params {
        beta: array![0.0],
        alpha: array![0.4, 1.0],
        gamma: array![1.0, -0.3],
    };
    let cells = effect_cells(&panel, &Family::Poisson, &EffectSpec::ContinuousDeriv { k: 0 }, &p).unwrap();
    assert_eq!(cells.mean(), 0.0);
}

fn gaussian_panel(seed: u64, n: usize, t: usize, noise: f64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Array1<f64> = (0..t).map(|_| rng.random_range(0.5..1.5)).collect();
    let y = Array2::from_shape_fn((n, t), |(i, tt)| {
        a[i] * g[tt] + noise * rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    Panel::without_regressors(y).unwrap()
}

#[test]
fn variance_effect_of_noiseless_panel_is_zero() {
    let panel = gaussian_panel(3, 6, 5, 0.0);
    let family = Family::linear(1.0).unwrap();
    let fit = fit_ife(&panel, &family, &FitOptions::default()).unwrap();
    let r = ape_analytic(&panel, &family, &fit, &EffectSpec::LinearVariance, &ApeOptions::default()).unwrap();
    assert!(r.delta_hat.abs() < 1e-18);
    assert!(r.delta_corrected.abs() < 1e-18);
}

#[test]
fn variance_correction_closed_form() {
    assert_relative_eq!(correct_ape_analytic(0.8, -0.8, -0.8, 10, 10), 0.96, epsilon = 1e-15);
    let (n, t) = (8, 6);
    let panel = gaussian_panel(4, n, t, 1.0);
    let family = Family::linear(1.0).unwrap();
    let fit = fit_ife(&panel, &family, &FitOptions::default()).unwrap();
    let r = ape_analytic(&panel, &family, &fit, &EffectSpec::LinearVariance, &ApeOptions::default()).unwrap();
    let resid = &panel.outcomes().to_owned() - &fit.params.interactive();
    let delta = resid.mapv(|e| e * e).mean().unwrap();
    assert_relative_eq!(r.delta_hat, delta, max_relative = 1e-10);
    assert_relative_eq!(r.delta_corrected, delta * (1.0 + 1.0 / t as f64 + 1.0 / n as f64), max_relative = 1e-10);
}

#[test]
fn plugin_biases_match_naive_sums() {
    let (n, t) = (6, 5);
    let (panel, p) = random_probit(5, n, t, 2);
    let spec = EffectSpec::BinaryDiff { k: 0 };
    let state = PluginState::new(&panel, &Family::Probit, &p).unwrap();
    let cells = effect_cells(&panel, &Family::Probit, &spec, &p).unwrap();
    let psi = psi_projection(&state.hessian, &state.inverse, &cells.d_pi);
    let z = p.index(&panel);
    let der = |i: usize, tt: usize| Family::Probit.derivs(panel.outcomes()[[i, tt]], z[[i, tt]]);
    let trim = 1;
    let mut b = 0.0;
    for i in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        for tt in 0..t {
            let c = der(i, tt);
            den += p.gamma[tt] * p.gamma[tt] * c.d2;
            num -= 0.5 * p.gamma[tt] * p.gamma[tt] * (cells.d_pi2[[i, tt]] - c.d3 * psi[[i, tt]]);
            for j in 0..=trim.min(tt) {
                num += t as f64 / (t - j) as f64 * p.gamma[tt] * p.gamma[tt - j] * der(i, tt - j).d1 * c.d2 * psi[[i, tt]];
            }
        }
        b += num / den;
    }
    let got = plugin_b_delta(&state.derivs, &p.gamma, &cells, &psi, trim).unwrap();
    assert_relative_eq!(got, b / n as f64, max_relative = 1e-12);

    let mut d = 0.0;
    for tt in 0..t {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let c = der(i, tt);
            let a2 = p.alpha[i] * p.alpha[i];
            den += a2 * c.d2;
            num += a2 * (c.d1 * c.d2 * psi[[i, tt]] - 0.5 * cells.d_pi2[[i, tt]] + 0.5 * c.d3 * psi[[i, tt]]);
        }
        d += num / den;
    }
    let got = plugin_d_delta(&state.derivs, &p.alpha, &cells, &psi).unwrap();
    assert_relative_eq!(got, d / t as f64, max_relative = 1e-12);
}

#[test]
fn out_of_range_effect_is_rejected() {
    let (panel, p) = random_probit(6, 3, 3, 1);
    assert!(effect_cells(&panel, &Family::Probit, &EffectSpec::BinaryDiff { k: 1 }, &p).is_err());
    assert!(effect_cells(&panel, &Family::Probit, &EffectSpec::LinearVariance, &p).is_err());
}
