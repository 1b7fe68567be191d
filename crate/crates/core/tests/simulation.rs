use ifecmle::estimator::{outer, FitOptions};
use ifecmle::simulation::{dgp_generate, render_tables, run_mc, DgpKind, DgpSpec, EffectLaw, McConfig};

fn small_config(n: usize, t: usize, reps: usize) -> McConfig {
    let mut cfg = McConfig::new(DgpSpec::linear_nonreg(n, t, 1.0, 3), reps);
    cfg.splits = 3;
    cfg.keep_records = true;
    cfg
}

#[test]
fn records_do_not_depend_on_worker_count() {
    let mut one = small_config(8, 6, 12);
    one.workers = Some(1);
    let mut three = one.clone();
    three.workers = Some(3);
    let a = run_mc(&one, &FitOptions::default()).unwrap();
    let b = run_mc(&three, &FitOptions::default()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.estimators, b.estimators);
    assert_eq!(a.failures, 0);
}

#[test]
fn replication_seven_is_reproducible() {
    let spec = DgpSpec {
        kind: DgpKind::ProbitStatic { beta0: vec![1.0] },
        n: 6,
        t: 5,
        effect_law: EffectLaw::Uniform { lo: 0.5, hi: 1.5 },
        seed: 42,
        fixed_effects: false,
    };
    let (a, ta) = dgp_generate(&spec, 7).unwrap();
    let (b, tb) = dgp_generate(&spec, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert!(a.outcomes().iter().all(|&y| y == 0.0 || y == 1.0));
    assert!(ta.alpha.iter().all(|&v| (0.5..1.5).contains(&v)));
}

#[test]
fn error_variance_matches_its_target() {
    let spec = DgpSpec::linear_nonreg(200, 200, 1.7, 9);
    let (p, truth) = dgp_generate(&spec, 0).unwrap();
    let resid = p.outcomes() - &outer(&truth.alpha, &truth.gamma);
    let var = resid.mapv(|e| e * e).mean().unwrap();
    // standard error of the mean of 40000 scaled χ²₁ draws is 1.7·√2/200
    assert!((var - 1.7).abs() < 4.0 * 1.7 * 2f64.sqrt() / 200.0, "{var}");
}

#[test]
fn count_outcomes_are_nonnegative_integers() {
    let spec = DgpSpec {
        kind: DgpKind::PoissonExog { beta0: vec![0.5] },
        n: 10,
        t: 10,
        effect_law: EffectLaw::Uniform { lo: 0.5, hi: 1.5 },
        seed: 1,
        fixed_effects: false,
    };
    let (p, _) = dgp_generate(&spec, 0).unwrap();
    assert!(p.outcomes().iter().all(|&y| y >= 0.0 && y.fract() == 0.0));
    assert_eq!(p.n_regressors(), 1);
}

#[test]
fn tables_follow_the_published_column_order() {
    let mut wide = small_config(25, 10, 4);
    wide.jackknife = false;
    let mut square = small_config(10, 10, 4);
    square.jackknife = false;
    let results = [
        run_mc(&wide, &FitOptions::default()).unwrap(),
        run_mc(&square, &FitOptions::default()).unwrap(),
    ];
    let (t1, t2) = render_tables(&results);
    let header = t1.lines().next().unwrap();
    assert_eq!(header, "statistic,N=10 T=10,N=25 T=10");
    assert_eq!(t2.lines().next().unwrap(), header);
    assert!(t1.contains("bias_factor,-0.20,-0.14"));
    assert!(t1.contains("bias_jackknife,NA,NA"));
    assert!(t2.contains("coverage_jackknife,NA,NA"));
}

#[test]
fn configuration_round_trips_through_json() {
    let mut cfg = small_config(10, 10, 5);
    cfg.dgp.effect_law = EffectLaw::SignedUniform { lo: 0.2, hi: 1.0 };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: McConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let minimal: McConfig = serde_json::from_str(
        r#"{"dgp":{"kind":{"kind":"linear_nonreg","delta0":1.0},"n":10,"t":10,"effect_law":{"law":"standard_normal"},"seed":0},"n_reps":3}"#,
    )
    .unwrap();
    assert_eq!(minimal.level, 0.95);
    assert!(minimal.analytic && minimal.jackknife);
}

#[test]
fn invalid_specifications_are_rejected() {
    let mut spec = DgpSpec::linear_nonreg(5, 5, 1.0, 0);
    spec.effect_law = EffectLaw::Uniform { lo: 1.0, hi: 1.0 };
    assert!(dgp_generate(&spec, 0).is_err());
    assert!(dgp_generate(&DgpSpec::linear_nonreg(5, 5, -1.0, 0), 0).is_err());
    assert!(run_mc(&McConfig::new(DgpSpec::linear_nonreg(5, 5, 1.0, 0), 0), &FitOptions::default()).is_err());
}
