//! Config parsing and built-in problem data.

use std::f64::consts::PI;

use capillary::mesh::{build_bulk_mesh, build_trace_mesh};
use capillary_cli::config::{
    apply_key, builtin_gamma_d, datum_v, gamma_d_from_samples, gamma_d_trig, parse_config,
    radius_label, ConfigError, DatumSpec, ExperimentSpec, TargetSpec,
};

#[test]
fn defaults_follow_the_example_id() {
    let ex1 = ExperimentSpec::for_example(1).unwrap();
    assert_eq!(ex1.radius, 0.9);
    assert_eq!(ex1.lambdas.len(), 7);
    assert_eq!(ex1.lambdas[0], 1.0);
    assert_eq!(ex1.lambdas[6], 1e-6);
    assert_eq!(ex1.levels, vec![1, 2, 3]);
    // finest level + 3, capped at 7
    assert_eq!(ex1.reference_level(), 6);
    let ex2 = ExperimentSpec::for_example(2).unwrap();
    assert!(ex2.radius.is_infinite());
    assert!(matches!(ExperimentSpec::for_example(4), Err(ConfigError::UnknownExample(4))));
}

#[test]
fn reference_level_caps_at_seven() {
    let mut spec = ExperimentSpec::for_example(1).unwrap();
    spec.levels = vec![1, 2, 3, 4, 5];
    assert_eq!(spec.reference_level(), 7);
    spec.ref_level = Some(6);
    assert_eq!(spec.reference_level(), 6);
}

#[test]
fn config_text_round_trips_every_key() {
    let text = "
        # benchmark sweep
        example = 2
        gamma_d = file: targets/profile.txt
        v = zero
        kappa = 2.5
        mu = 0.25       # bulk tracking on
        lambda = 1e-2, 1e-3 1e-4
        radius = 0.7
        levels = 1,2
        ref_level = 4
        out_dir = results/run1
        seed = 42
        hat_depth = 0.3
        snapshots = true
        hessian = true
        workers = 2
        grad_tol = 1e-8
        newton_tol = 1e-12
        max_opt_iter = 900
    ";
    let spec = parse_config(text).unwrap();
    assert_eq!(spec.example, 2);
    assert_eq!(spec.gamma_d, TargetSpec::File("targets/profile.txt".into()));
    assert_eq!(spec.v, DatumSpec::Zero);
    assert_eq!(spec.kappa, 2.5);
    assert_eq!(spec.mu, 0.25);
    assert_eq!(spec.lambdas, vec![1e-2, 1e-3, 1e-4]);
    assert_eq!(spec.radius, 0.7);
    assert_eq!(spec.levels, vec![1, 2]);
    assert_eq!(spec.reference_level(), 4);
    assert_eq!(spec.out_dir, std::path::PathBuf::from("results/run1"));
    assert_eq!(spec.seed, 42);
    assert_eq!(spec.hat_depth, 0.3);
    assert!(spec.snapshots);
    assert!(spec.hessian);
    assert_eq!(spec.workers, 2);
    assert_eq!(spec.grad_tol, 1e-8);
    assert_eq!(spec.newton_tol, 1e-12);
    assert_eq!(spec.max_opt_iter, 900);
    spec.validate().unwrap();
}

#[test]
fn unknown_keys_are_rejected_not_ignored() {
    let err = parse_config("example = 1\nlamda = 1e-3\n").unwrap_err();
    match err {
        ConfigError::UnknownKey { line, key } => {
            assert_eq!(line, 2);
            assert_eq!(key, "lamda");
        }
        other => panic!("expected UnknownKey, got {other:?}"),
    }
}

#[test]
fn malformed_lines_and_duplicates_are_rejected() {
    assert!(matches!(
        parse_config("example 1"),
        Err(ConfigError::NotKeyValue { line: 1, .. })
    ));
    assert!(matches!(
        parse_config("kappa = 1\nkappa = 2"),
        Err(ConfigError::DuplicateKey { line: 2, .. })
    ));
    assert!(matches!(
        parse_config("kappa = fast"),
        Err(ConfigError::BadValue { line: 1, .. })
    ));
    assert!(matches!(
        parse_config("radius = minus"),
        Err(ConfigError::BadValue { line: 1, .. })
    ));
    assert!(matches!(
        parse_config("v = datum"),
        Err(ConfigError::BadValue { line: 1, .. })
    ));
}

#[test]
fn example_key_reseeds_the_radius_default_only() {
    // `radius = inf` wins regardless of key order relative to `example`
    let spec = parse_config("radius = inf\nexample = 1").unwrap();
    assert!(spec.radius.is_infinite());
    let spec = parse_config("example = 1\nradius = inf").unwrap();
    assert!(spec.radius.is_infinite());

    // flag overrides reuse the same machinery
    let mut spec = ExperimentSpec::for_example(2).unwrap();
    apply_key(&mut spec, 0, "example", "1").unwrap();
    assert_eq!(spec.radius, 0.9);
    apply_key(&mut spec, 0, "lambda", "1e-1").unwrap();
    assert_eq!(spec.lambdas, vec![1e-1]);
}

#[test]
fn validation_names_the_offending_field() {
    let mut spec = ExperimentSpec::for_example(1).unwrap();
    spec.lambdas = vec![1e-2, -1.0];
    assert!(matches!(
        spec.validate(),
        Err(ConfigError::InvalidField { name: "lambda", .. })
    ));

    let mut spec = ExperimentSpec::for_example(1).unwrap();
    spec.levels = vec![1, 6];
    spec.ref_level = Some(6);
    assert!(matches!(
        spec.validate(),
        Err(ConfigError::InvalidField { name: "levels", .. })
    ));

    let mut spec = ExperimentSpec::for_example(1).unwrap();
    spec.ref_level = Some(9);
    assert!(matches!(
        spec.validate(),
        Err(ConfigError::InvalidField { name: "ref_level", .. })
    ));

    let mut spec = ExperimentSpec::for_example(1).unwrap();
    spec.workers = 0;
    assert!(matches!(
        spec.validate(),
        Err(ConfigError::InvalidField { name: "workers", .. })
    ));
}

#[test]
fn trig_target_matches_its_printed_formula() {
    // all three sines vanish at 0, ½, 1
    for x in [0.0, 0.5, 1.0] {
        assert!(gamma_d_trig(x).abs() < 1e-16, "γ_d({x}) = {}", gamma_d_trig(x));
    }
    // at x = ¼: sin(π/2) = 1, sin(π) = 0, sin(3π/2) = −1
    let want = 1.0 / (16.0 * PI) - 1.0 / (32.0 * PI);
    assert!((gamma_d_trig(0.25) - want).abs() < 1e-16);
    assert!((want - 1.0 / (32.0 * PI)).abs() < 1e-18);
}

#[test]
fn builtin_targets_interpolate_onto_the_trace() {
    let mesh = build_bulk_mesh(2);
    let trace = build_trace_mesh(&mesh);

    let trig = builtin_gamma_d(1, 0.2, trace.clone()).unwrap();
    for (x, v) in trace.nodes.iter().zip(&trig.values) {
        assert_eq!(*v, gamma_d_trig(*x));
    }
    let same = builtin_gamma_d(2, 0.2, trace.clone()).unwrap();
    assert_eq!(trig.values, same.values);

    // inverted hat: zero ends, configured depth at the midpoint
    let hat = builtin_gamma_d(3, 0.2, trace.clone()).unwrap();
    assert_eq!(hat.values[0], 0.0);
    assert_eq!(*hat.values.last().unwrap(), 0.0);
    assert_eq!(hat.values[trace.n_nodes() / 2], -0.2);
    assert!(hat.values.iter().all(|&v| (-0.2..=0.0).contains(&v)));

    assert!(matches!(
        builtin_gamma_d(9, 0.2, trace),
        Err(ConfigError::UnknownExample(9))
    ));
}

#[test]
fn sampled_target_interpolates_linearly() {
    let mesh = build_bulk_mesh(2);
    let trace = build_trace_mesh(&mesh);
    // piecewise-linear through (0,0), (0.5,1), (1,0): the tent function
    let field = gamma_d_from_samples("0 0\n0.5 1\n1 0\n", trace.clone()).unwrap();
    for (x, v) in trace.nodes.iter().zip(&field.values) {
        let want = 1.0 - (2.0 * x - 1.0).abs();
        assert!((v - want).abs() < 1e-15, "tent({x}) = {v}, want {want}");
    }

    assert!(matches!(
        gamma_d_from_samples("0 0\n1 0 0\n", trace.clone()),
        Err(ConfigError::BadSample { line: 2, .. })
    ));
    assert!(matches!(
        gamma_d_from_samples("0 0\n0.4 1\n0.4 2\n1 0\n", trace.clone()),
        Err(ConfigError::BadSample { line: 3, .. })
    ));
    // span must cover [0, 1]
    assert!(matches!(
        gamma_d_from_samples("0 0\n0.9 1\n", trace),
        Err(ConfigError::BadSample { .. })
    ));
}

#[test]
fn datum_vanishes_on_bottom_and_top() {
    for x1 in [0.0, 0.3, 1.0] {
        assert_eq!(datum_v(x1, 0.0), 0.0);
        assert_eq!(datum_v(x1, 1.0), 0.0);
    }
    assert_eq!(datum_v(0.0, 0.5), 0.25);
    assert_eq!(datum_v(1.0, 0.5), -0.25);
}

#[test]
fn radius_labels_are_stable() {
    assert_eq!(radius_label(f64::INFINITY), "inf");
    assert_eq!(radius_label(0.9), "0.9");
}
