use approx::assert_relative_eq;
use ifecmle::estimator::{
    finalize_effects, fit_ife, fit_ife_from, fit_ife_multistart, gradient, objective, outer, profile_alpha, profile_beta_alpha,
    profile_gamma, rescale_normalize, FitOptions, Params,
};
use ifecmle::oracle::rank1_fit;
use ifecmle::{Family, Panel};
use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_params(rng: &mut ChaCha8Rng, n: usize, t: usize, k: usize) -> Params {
    Params {
        beta: (0..k).map(|_| normal(rng)).collect(),
        alpha: (0..n).map(|_| normal(rng)).collect(),
        gamma: (0..t).map(|_| normal(rng)).collect(),
    }
}

fn naive_objective(panel: &Panel, family: &Family, p: &Params) -> f64 {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let mut total = 0.0;
    for i in 0..n {
        for tt in 0..t {
            let mut z = p.alpha[i] * p.gamma[tt];
            for kk in 0..k {
                z += panel.regressors()[[i, tt, kk]] * p.beta[kk];
            }
            total += family.loglik(panel.outcomes()[[i, tt]], z).unwrap();
        }
    }
    total / ((n * t) as f64).sqrt()
}

/// The 3 × 3 probit panel with one regressor used by the small-sample checks.
fn small_probit() -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array3::from_shape_fn((3, 3, 1), |_| rng.random_range(-1.5..1.5));
    let y = Array2::from_shape_fn((3, 3), |_| f64::from(u8::from(rng.random::<bool>())));
    Panel::from_arrays(y, x).unwrap()
}

#[test]
fn objective_reference_values() {
    let a = array![1.0, -0.5, 2.0];
    let g = array![0.3, 1.0];
    let panel = Panel::without_regressors(outer(&a, &g)).unwrap();
    let p = Params {
        beta: Array1::zeros(0),
        alpha: a,
        gamma: g,
    };
    let value = objective(&panel, &Family::linear(1.0).unwrap(), &p).unwrap();
    let expected = 6.0 / 6f64.sqrt() * (-0.5 * (2.0 * std::f64::consts::PI).ln());
    assert_relative_eq!(value, expected, max_relative = 1e-14);

    let one = Panel::without_regressors(array![[1.0]]).unwrap();
    let zero = Params {
        beta: Array1::zeros(0),
        alpha: array![0.0],
        gamma: array![0.0],
    };
    assert_relative_eq!(objective(&one, &Family::Poisson, &zero).unwrap(), -1.0, epsilon = 1e-15);
}

#[test]
fn objective_matches_naive_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, t, k) = (7, 6, 2);
    let x = Array3::from_shape_fn((n, t, k), |_| normal(&mut rng));
    let binary = Array2::from_shape_fn((n, t), |_| f64::from(u8::from(rng.random::<bool>())));
    let counts = Array2::from_shape_fn((n, t), |_| rng.random_range(0..6) as f64);
    let real = Array2::from_shape_fn((n, t), |_| normal(&mut rng));
    for (family, y) in [
        (Family::Probit, &binary),
        (Family::Logit, &binary),
        (Family::Poisson, &counts),
        (Family::linear(0.7).unwrap(), &real),
    ] {
        let panel = Panel::from_arrays(y.clone(), x.clone()).unwrap();
        let p = random_params(&mut rng, n, t, k);
        let fast = objective(&panel, &family, &p).unwrap();
        assert_relative_eq!(fast, naive_objective(&panel, &family, &p), max_relative = 1e-12);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let panel = small_probit();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(&mut rng, 3, 3, 1);
    let g = gradient(&panel, &Family::Probit, &p).unwrap();
    let h = 1e-6;
    let f = |q: &Params| objective(&panel, &Family::Probit, q).unwrap();
    for i in 0..3 {
        let (mut up, mut dn) = (p.clone(), p.clone());
        up.alpha[i] += h;
        dn.alpha[i] -= h;
        assert_relative_eq!(g.alpha[i], (f(&up) - f(&dn)) / (2.0 * h), epsilon = 1e-7);
    }
    let (mut up, mut dn) = (p.clone(), p.clone());
    up.beta[0] += h;
    dn.beta[0] -= h;
    assert_relative_eq!(g.beta[0], (f(&up) - f(&dn)) / (2.0 * h), epsilon = 1e-7);
}

#[test]
fn gamma_step_closed_forms() {
    let opts = FitOptions::default();
    let lin = Panel::without_regressors(array![[2.0], [4.0]]).unwrap();
    let g = profile_gamma(&lin, &Family::linear(1.0).unwrap(), &Array1::zeros(0), &array![1.0, 1.0], None, &opts).unwrap();
    assert_relative_eq!(g[0], 3.0, epsilon = 1e-10);

    // Σ_i α_i (y − e^γ) = 0 with y = (3, 3) gives γ = log 3
    let pois = Panel::without_regressors(array![[3.0], [3.0]]).unwrap();
    let g = profile_gamma(&pois, &Family::Poisson, &Array1::zeros(0), &array![1.0, 1.0], None, &opts).unwrap();
    assert_relative_eq!(g[0], 3f64.ln(), epsilon = 1e-10);
}

#[test]
fn probit_gamma_step_matches_grid_search() {
    let y = array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0], [1.0, 0.0]];
    let x = Array3::from_shape_fn((5, 2, 1), |(i, t, _)| 0.3 * i as f64 - 0.5 * t as f64);
    let panel = Panel::from_arrays(y.clone(), x.clone()).unwrap();
    let alpha = array![1.2, -0.4, 0.8, -1.5, 0.3];
    let beta = array![0.7];
    let g = profile_gamma(&panel, &Family::Probit, &beta, &alpha, None, &FitOptions::default()).unwrap();
    for t in 0..2 {
        let value = |gam: f64| -> f64 {
            (0..5)
                .map(|i| Family::Probit.loglik(y[[i, t]], x[[i, t, 0]] * beta[0] + alpha[i] * gam).unwrap())
                .sum()
        };
        let best = (-50_000..=50_000)
            .map(|j| j as f64 * 1e-4)
            .max_by(|a, b| value(*a).total_cmp(&value(*b)))
            .unwrap();
        assert!((g[t] - best).abs() < 1e-3, "period {t}: {} vs grid {best}", g[t]);
    }
}

#[test]
fn linear_coefficient_step_is_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, t, k) = (5, 6, 2);
    let x = Array3::from_shape_fn((n, t, k), |_| normal(&mut rng));
    let y = Array2::from_shape_fn((n, t), |_| normal(&mut rng));
    let gamma: Array1<f64> = (0..t).map(|_| normal(&mut rng)).collect();
    let panel = Panel::from_arrays(y.clone(), x.clone()).unwrap();
    let (beta, alpha) = profile_beta_alpha(
        &panel,
        &Family::linear(1.3).unwrap(),
        &gamma,
        (&Array1::zeros(k), &Array1::zeros(n)),
        &FitOptions::precise(),
    )
    .unwrap();
    // regressors: X_k and unit-specific copies of γ
    let design = DMatrix::from_fn(n * t, k + n, |r, c| {
        let (i, tt) = (r / t, r % t);
        if c < k {
            x[[i, tt, c]]
        } else if c - k == i {
            gamma[tt]
        } else {
            0.0
        }
    });
    let rhs = DVector::from_iterator(n * t, y.iter().copied());
    let coef = (design.transpose() * &design).lu().solve(&(design.transpose() * rhs)).unwrap();
    for kk in 0..k {
        assert_relative_eq!(beta[kk], coef[kk], epsilon = 1e-8);
    }
    for i in 0..n {
        assert_relative_eq!(alpha[i], coef[k + i], epsilon = 1e-8);
    }
}

#[test]
fn linear_alpha_step_without_regressors() {
    let y = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]];
    let gamma = array![0.5, -1.0, 2.0];
    let panel = Panel::without_regressors(y.clone()).unwrap();
    let a = profile_alpha(&panel, &Family::linear(1.0).unwrap(), &Array1::zeros(0), &gamma, None, &FitOptions::default()).unwrap();
    for i in 0..2 {
        let expected = y.row(i).dot(&gamma) / gamma.dot(&gamma);
        assert_relative_eq!(a[i], expected, epsilon = 1e-10);
    }
}

/// Logit score and Hessian in (β, α) for the 3 × 3 panel with γ held fixed.
fn logit_score(y: &Array2<f64>, x: &Array3<f64>, gamma: &Array1<f64>, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut grad = DVector::zeros(4);
    let mut hess = DMatrix::zeros(4, 4);
    for i in 0..3 {
        for t in 0..3 {
            let z = x[[i, t, 0]] * theta[0] + theta[1 + i] * gamma[t];
            let p = 1.0 / (1.0 + (-z).exp());
            let mut d = DVector::zeros(4);
            d[0] = x[[i, t, 0]];
            d[1 + i] = gamma[t];
            grad += &d * (y[[i, t]] - p);
            hess -= &d * d.transpose() * (p * (1.0 - p));
        }
    }
    (grad, hess)
}

#[test]
fn logit_coefficient_step_matches_joint_newton() {
    let y = array![[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]];
    let x = Array3::from_shape_fn((3, 3, 1), |(i, t, _)| [0.4, -0.9, 0.2, 1.1, -0.3, 0.6, -0.5, 0.8, -1.2][3 * i + t]);
    let gamma = array![0.8, -0.6, 1.1];
    let panel = Panel::from_arrays(y.clone(), x.clone()).unwrap();
    let (beta, alpha) = profile_beta_alpha(
        &panel,
        &Family::Logit,
        &gamma,
        (&Array1::zeros(1), &Array1::zeros(3)),
        &FitOptions::precise(),
    )
    .unwrap();
    let mut theta = DVector::zeros(4);
    for _ in 0..100 {
        let (g, h) = logit_score(&y, &x, &gamma, &theta);
        theta -= h.lu().solve(&g).unwrap();
    }
    let (g, _) = logit_score(&y, &x, &gamma, &theta);
    assert!(g.amax() < 1e-12, "{g}");
    assert!((beta[0] - theta[0]).abs() < 1e-4);
    for i in 0..3 {
        assert!((alpha[i] - theta[1 + i]).abs() < 1e-4, "{alpha} vs {theta}");
    }
}

#[test]
fn rescaling_examples() {
    let (a, g) = rescale_normalize(&array![2.0, 0.0], &array![1.0, 1.0]).unwrap();
    let c = 0.5f64.powf(0.25);
    assert_relative_eq!(a[0], 2.0 * c, epsilon = 1e-15);
    assert_relative_eq!(a.dot(&a), g.dot(&g), epsilon = 1e-14);
    assert_relative_eq!(a.dot(&a).sqrt(), 2f64.powf(0.75), epsilon = 1e-14);

    let (a, g) = rescale_normalize(&array![1.0, 0.0], &array![0.0, 1.0]).unwrap();
    assert_eq!(a, array![1.0, 0.0]);
    assert_eq!(g, array![0.0, 1.0]);
    assert!(rescale_normalize(&array![0.0], &array![1.0]).is_err());
}

#[test]
fn rescaling_preserves_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let p = random_params(&mut rng, 8, 5, 0);
        let scale = (rng.random_range(-3.0..3.0f64)).exp();
        let (a, g) = finalize_effects(&(&p.alpha * scale), &p.gamma).unwrap();
        let before = outer(&(&p.alpha * scale), &p.gamma);
        let after = outer(&a, &g);
        for (u, v) in before.iter().zip(after.iter()) {
            assert!((u - v).abs() <= 1e-14 * before.iter().fold(1.0f64, |m, w| m.max(w.abs())));
        }
        assert!(g.sum() >= 0.0);
    }
}

#[test]
fn noiseless_rank_one_is_recovered() {
    let a = array![1.0, -2.0, 0.5, 1.5];
    let g = array![0.3, 1.0, -1.0, 2.0, 0.7];
    let y = outer(&a, &g);
    let panel = Panel::without_regressors(y.clone()).unwrap();
    let fit = fit_ife(&panel, &Family::linear(1.0).unwrap(), &FitOptions::default()).unwrap();
    assert!(fit.converged);
    let back = fit.params.interactive();
    for (u, v) in back.iter().zip(y.iter()) {
        assert!((u - v).abs() < 1e-10);
    }
    let expected = 20.0 / 20f64.sqrt() * (-0.5 * (2.0 * std::f64::consts::PI).ln());
    assert_relative_eq!(fit.loglik, expected, max_relative = 1e-12);
}

#[test]
fn noisy_gaussian_fit_matches_principal_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a: Array1<f64> = (0..12).map(|_| normal(&mut rng)).collect();
    let g: Array1<f64> = (0..9).map(|_| normal(&mut rng)).collect();
    let y = outer(&a, &g) + Array2::from_shape_fn((12, 9), |_| 0.5 * normal(&mut rng));
    let panel = Panel::without_regressors(y.clone()).unwrap();
    let fit = fit_ife(&panel, &Family::linear(1.0).unwrap(), &FitOptions::default()).unwrap();
    let pca = rank1_fit(&y, 1e-14).unwrap();
    let reference = outer(&pca.alpha, &pca.gamma);
    for (u, v) in fit.params.interactive().iter().zip(reference.iter()) {
        assert!((u - v).abs() < 1e-6);
    }
}

#[test]
fn ascent_is_monotone_and_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, t) = (15, 12);
    let x = Array3::from_shape_fn((n, t, 1), |_| normal(&mut rng));
    let a: Array1<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let g: Array1<f64> = (0..t).map(|_| rng.random_range(0.5..1.5)).collect();
    let y = Array2::from_shape_fn((n, t), |(i, tt)| {
        let mean = (0.5 * x[[i, tt, 0]] + a[i] * g[tt]).exp();
        rand_distr::Distribution::sample(&rand_distr::Poisson::new(mean).unwrap(), &mut rng)
    });
    let panel = Panel::from_arrays(y, x).unwrap();
    let fit = fit_ife(&panel, &Family::Poisson, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.max_objective_decrease() <= 1e-12);
    assert!(gradient(&panel, &Family::Poisson, &fit.params).unwrap().sup_norm() < 1e-6);
}

#[test]
fn small_probit_beats_random_parameter_draws() {
    let panel = small_probit();
    let fit = fit_ife(&panel, &Family::Probit, &FitOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..200 {
        let p = Params {
            beta: array![rng.random_range(-5.0..5.0)],
            alpha: (0..3).map(|_| rng.random_range(-3.0..3.0)).collect(),
            gamma: (0..3).map(|_| rng.random_range(-3.0..3.0)).collect(),
        };
        assert!(fit.loglik >= objective(&panel, &Family::Probit, &p).unwrap());
    }
}

#[test]
fn negated_effects_leave_the_objective_unchanged() {
    let panel = small_probit();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_params(&mut rng, 3, 3, 1);
    let q = p.negated_effects();
    assert_eq!(
        objective(&panel, &Family::Probit, &p).unwrap(),
        objective(&panel, &Family::Probit, &q).unwrap()
    );
    // a fit started from negated effects ends at the same normalised point
    let a = fit_ife_from(&panel, &Family::linear(1.0).unwrap(), p.clone(), &FitOptions::default()).unwrap();
    let b = fit_ife_from(&panel, &Family::linear(1.0).unwrap(), q, &FitOptions::default()).unwrap();
    for (u, v) in a.params.alpha.iter().zip(b.params.alpha.iter()) {
        assert!((u - v).abs() < 1e-8);
    }
}

#[test]
fn multistart_is_never_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let y = Array2::from_shape_fn((6, 5), |_| normal(&mut rng));
    let panel = Panel::without_regressors(y).unwrap();
    let family = Family::linear(1.0).unwrap();
    let single = fit_ife(&panel, &family, &FitOptions::default()).unwrap();
    let multi = fit_ife_multistart(&panel, &family, &FitOptions::default(), 4, 3).unwrap();
    assert!(multi.loglik >= single.loglik - 1e-12);
}

#[test]
fn binary_runaway_is_reported_as_separation() {
    let x = Array3::from_shape_fn((6, 5, 1), |(i, t, _)| ((i * 7 + t * 3) % 5) as f64 * 0.4 - 0.8);
    let y = Array2::from_shape_fn((6, 5), |(i, t)| f64::from(u8::from((i * 3 + t * 5 + i * t) % 3 != 0)));
    let panel = Panel::from_arrays(y, x).unwrap();
    let err = fit_ife(&panel, &Family::Probit, &FitOptions::default()).unwrap_err();
    assert!(matches!(err, ifecmle::Error::Separation { .. }), "{err}");
}
