use mvscale::averaging::{
    averaging_error, rate_sweep, solve_averaged, AveragedConfig, AveragedInit, AveragingConfig, DeltaPolicy,
    FastInit,
};
use mvscale::frozen::{InvariantCache, InvariantConfig};
use mvscale::zoo::linear_benchmark_model;
use mvscale::{SimConfig, TimeScales};

fn invariant(n: usize) -> InvariantConfig {
    InvariantConfig {
        n_particles: n,
        tol: 0.05,
        ..Default::default()
    }
}

#[test]
fn linear_averaged_path_matches_closed_form() {
    for (c, n) in [(0.0, 2000), (1.0, 20000)] {
        let model = linear_benchmark_model(1.0, c, 1.0, 1.0).unwrap();
        let (dt, horizon) = (0.01, 1.0);
        let cfg = AveragedConfig {
            horizon,
            dt,
            record_every: 1,
            invariant: invariant(n),
        };
        let path = solve_averaged(&model, &AveragedInit::Point(vec![1.0]), &cfg, &InvariantCache::new()).unwrap();
        let worst = path
            .grid
            .times
            .iter()
            .zip(path.grid.points())
            .map(|(t, x)| (x[0] - model.averaged_path(1.0, *t)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 5.0 * dt * horizon, "c = {c}: sup error {worst}");
    }
}

fn linear_config(n: usize, reps: usize, horizon: f64, seed: u64) -> AveragingConfig {
    let mut sim = SimConfig::new(0.01, horizon, n, seed);
    sim.n_reps = reps;
    sim.fast_substep_factor = 0.5;
    AveragingConfig {
        sim,
        x0: vec![1.0],
        fast_init: FastInit::default(),
        invariant: invariant(2000),
        averaged_dt: None,
    }
}

#[test]
fn averaging_error_is_non_negative() {
    let model = linear_benchmark_model(1.0, 1.0, 1.0, 1.0).unwrap();
    for (eps, delta, init) in [
        (0.2, 0.01, FastInit::Gaussian(0.0)),
        (0.05, 0.002, FastInit::Invariant),
        (0.0, 0.01, FastInit::Point(vec![2.0])),
    ] {
        let mut cfg = linear_config(64, 4, 0.5, 3);
        cfg.fast_init = init;
        let ts = TimeScales::new(eps, delta, 0.05).unwrap();
        let e = averaging_error(&model, &ts, &cfg, None).unwrap();
        assert!(e.estimate >= 0.0 && e.per_rep.iter().all(|v| *v >= 0.0));
        assert!(e.std_error >= 0.0);
    }
}

#[test]
fn noiseless_limit_reaches_discretisation_floor() {
    let model = linear_benchmark_model(1.0, 1.0, 1.0, 1.0).unwrap();
    let cfg = linear_config(200, 2, 1.0, 5);
    let ts = TimeScales::new(0.0, 1e-4, 0.05).unwrap();
    let e = averaging_error(&model, &ts, &cfg, None).unwrap();
    assert!(e.estimate < 10.0 * cfg.sim.dt_macro, "estimate {}", e.estimate);
}

#[test]
fn linear_rate_exponent_near_one() {
    let model = linear_benchmark_model(1.0, 1.0, 1.0, 1.0).unwrap();
    let cfg = linear_config(400, 10, 1.0, 17);
    let report = rate_sweep(&model, &[0.05, 0.1, 0.2, 0.4], &DeltaPolicy::default(), 0.05, &cfg).unwrap();
    assert!(report.cells.iter().all(|c| c.error.is_none()));
    assert!((0.7..=1.3).contains(&report.slope), "slope {}", report.slope);
    assert!(report.monotone_within(2.0));
}

#[test]
fn uncoupled_rate_interval_covers_one() {
    // Without coupling the error is pure slow noise, exactly linear in epsilon.
    let model = linear_benchmark_model(1.0, 0.0, 1.0, 1.0).unwrap();
    let cfg = linear_config(400, 10, 1.0, 23);
    let report = rate_sweep(&model, &[0.05, 0.1, 0.2, 0.4], &DeltaPolicy::default(), 0.05, &cfg).unwrap();
    assert!((0.7..=1.3).contains(&report.slope), "slope {}", report.slope);
    assert!(report.ci_low <= 1.0 && 1.0 <= report.ci_high, "CI [{}, {}]", report.ci_low, report.ci_high);
}
