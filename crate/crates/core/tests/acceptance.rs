//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! ```text
//! cargo test --release -p mvscale --test acceptance            # all criteria
//! cargo test --release -p mvscale --test acceptance -- ac3 ac6 # a subset
//! cargo test --release -p mvscale --test acceptance -- --strict
//! ```
//!
//! Without `--strict` the process exits 0 even when a criterion fails.

use std::path::Path;
use std::time::Instant;

use mvscale::averaging::{rate_sweep, solve_averaged, AveragedConfig, AveragedInit, AveragingConfig, DeltaPolicy, FastInit};
use mvscale::experiment::{self, ExperimentConfig, RunOptions};
use mvscale::frozen::{ergodicity_rate, gaussian_ensemble, invariant_measure, ErgodicityConfig, InvariantCache, InvariantConfig};
use mvscale::ldp::{controlled_simulate, exit_probability, occupation_measure, rate_functional, CompanionNoise, ControlPath, ControlledConfig};
use mvscale::measures::{moment, psd_sqrt, wasserstein2, weighted_mean_ell, weighted_mean_h, weighted_wasserstein2, PsdMatrix, W2Options};
use mvscale::rng::{derive_seed, generator, Purpose};
use mvscale::sde::simulate;
use mvscale::zoo::{cbo_bilevel_model, linear_benchmark_model, CboParams};
use mvscale::{Ensemble, PathGrid, Result, SimConfig, TimeScales};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

mod tol {
    pub const AC1_SLOPE: (f64, f64) = (0.7, 1.3);
    pub const AC1_MONOTONE_SE: f64 = 2.0;
    pub const AC1_RUNTIME_S: f64 = 600.0;
    pub const AC2_RATE: (f64, f64) = (0.7, 1.3);
    pub const AC2_M2: (f64, f64) = (0.9, 1.1);
    pub const AC2_RUNTIME_S: f64 = 60.0;
    pub const AC3_CLOSED_FORM_REL: f64 = 1e-3;
    pub const AC3_AVERAGED_ABS: f64 = 1e-8;
    pub const AC3_SCALING_REL: f64 = 1e-6;
    pub const AC4_REL: f64 = 0.35;
    pub const AC4_ORACLE_REL: f64 = 1e-3;
    pub const AC4_RUNTIME_S: f64 = 900.0;
    pub const AC5_RADIUS: f64 = 0.1;
    pub const AC5_MIN_SEEDS: usize = 9;
    pub const AC5_RUNTIME_S: f64 = 120.0;
    pub const AC6_PSD_REL: f64 = 1e-8;
    pub const AC6_SHIFT_REL: f64 = 1e-12;
    pub const AC6_TRIANGLE_ABS: f64 = 1e-10;
    pub const AC6_RUNTIME_S: f64 = 30.0;
    pub const AC7_MASS_STEPS: f64 = 2.0;
    pub const AC7_W2: f64 = 0.15;
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: &[(bool, String)]) -> Self {
        Self {
            pass: checks.iter().all(|c| c.0),
            detail: checks
                .iter()
                .map(|(ok, s)| if *ok { s.clone() } else { format!("{s} [x]") })
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

fn within((lo, hi): (f64, f64), v: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn ac1() -> Result<Outcome> {
    let start = Instant::now();
    let model = linear_benchmark_model(1.0, 1.0, 1.0, 1.0)?;
    let mut sim = SimConfig::new(0.01, 1.0, 2000, 2024);
    sim.n_reps = 50;
    sim.fast_substep_factor = 1.0;
    let cfg = AveragingConfig {
        sim,
        x0: vec![1.0],
        fast_init: FastInit::default(),
        invariant: InvariantConfig::default(),
        averaged_dt: None,
    };
    let grid = [0.02, 0.04, 0.08, 0.16];
    let report = rate_sweep(&model, &grid, &DeltaPolicy::default(), 0.05, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let cells: Vec<String> = report
        .cells
        .iter()
        .map(|c| format!("eps={} err={:.4e}+-{:.1e}", c.epsilon, c.estimate, c.std_error))
        .collect();
    Ok(Outcome::new(&[
        (
            within(tol::AC1_SLOPE, report.slope),
            format!("slope {:.4} (95% CI [{:.4}, {:.4}])", report.slope, report.ci_low, report.ci_high),
        ),
        (report.monotone_within(tol::AC1_MONOTONE_SE), "monotone within 2 joint SE".into()),
        (secs < tol::AC1_RUNTIME_S, format!("{secs:.0} s")),
        (true, cells.join(", ")),
    ]))
}

fn ac2() -> Result<Outcome> {
    let start = Instant::now();
    let model = linear_benchmark_model(1.0, 1.0, 1.0, 1.0)?;
    let mu = Ensemble::from_scalars(&[0.0])?;
    let a = gaussian_ensemble(1, 1000, 1.0, 1)?;
    let b = a.translated(&[3.0])?;
    let fit = ergodicity_rate(
        &model,
        &mu,
        &a,
        &b,
        &ErgodicityConfig {
            horizon: 10.0,
            dt: 0.1,
            record_every: 1,
            taming: Default::default(),
            seed: 2,
        },
    )?;
    let inv = invariant_measure(
        &model,
        &mu,
        &InvariantConfig {
            n_particles: 5000,
            tol: 0.06,
            seed: 3,
            ..Default::default()
        },
        None,
    )?;
    let m2 = moment(&inv.measure, 2.0)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(&[
        (within(tol::AC2_RATE, fit.rate), format!("rate {:.4}", fit.rate)),
        (within(tol::AC2_M2, m2) && inv.converged, format!("invariant M2 {m2:.4}")),
        (secs < tol::AC2_RUNTIME_S, format!("{secs:.1} s")),
    ]))
}

/// Composite Simpson rule for `(1/2) int_0^1 (phi' + phi)^2 dt`.
fn closed_form_rate(phi: &dyn Fn(f64) -> (f64, f64)) -> f64 {
    let n = 200_000;
    let h = 1.0 / n as f64;
    let f = |t: f64| {
        let (p, dp) = phi(t);
        0.5 * (dp + p) * (dp + p)
    };
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn grid_path(dt: f64, f: impl Fn(f64) -> f64) -> Result<PathGrid> {
    let n = (1.0 / dt).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    let pts: Vec<Vec<f64>> = times.iter().map(|t| vec![f(*t)]).collect();
    PathGrid::from_points(times, &pts)
}

fn ac3() -> Result<Outcome> {
    let model = linear_benchmark_model(1.0, 0.0, 1.0, 1.0)?;
    let averaged = |dt: f64| {
        let cfg = AveragedConfig {
            horizon: 1.0,
            dt,
            record_every: 1,
            invariant: InvariantConfig::default(),
        };
        solve_averaged(&model, &AveragedInit::Point(vec![1.0]), &cfg, &InvariantCache::new())
    };
    use std::f64::consts::PI;
    let paths: Vec<Box<dyn Fn(f64) -> (f64, f64)>> = vec![
        Box::new(|t| (1.0 + 0.5 * (PI * t).sin(), 0.5 * PI * (PI * t).cos())),
        Box::new(|t| ((-t).exp() + 0.3 * t * t, -(-t).exp() + 0.6 * t)),
        Box::new(|t| (1.0 - 0.4 * t + 0.2 * t.powi(3), -0.4 + 0.6 * t * t)),
        Box::new(|t| ((2.0 * t).cos(), -2.0 * (2.0 * t).sin())),
        Box::new(|t| (1.0 + 0.2 * (3.0 * PI * t).sin() + 0.1 * t, 0.6 * PI * (3.0 * PI * t).cos() + 0.1)),
    ];
    let dt = 1e-3;
    let avg = averaged(dt)?;
    let mut worst = 0.0_f64;
    for p in &paths {
        let v = rate_functional(&model, &grid_path(dt, |t| p(t).0)?, &avg, None)?.value;
        let exact = closed_form_rate(p.as_ref());
        worst = worst.max((v - exact).abs() / exact);
    }

    let fine = averaged(1e-4)?;
    let on_path = rate_functional(&model, &fine.grid, &fine, None)?.value;

    let dt = 2.5e-4;
    let avg = averaged(dt)?;
    let psi = |t: f64| (PI * t).sin() + t * t;
    let rate = |c: f64| -> Result<f64> {
        let path = grid_path(dt, |t| model.averaged_path(1.0, t) + c * psi(t))?;
        Ok(rate_functional(&model, &path, &avg, None)?.value)
    };
    let base = rate(1.0)?;
    let mut scaling = 0.0_f64;
    for c in [0.1, 0.5, 2.0, 3.0] {
        scaling = scaling.max((rate(c)? / base - c * c).abs() / (c * c));
    }
    Ok(Outcome::new(&[
        (worst <= tol::AC3_CLOSED_FORM_REL, format!("closed form rel err {worst:.2e} over 5 paths")),
        (on_path <= tol::AC3_AVERAGED_ABS, format!("I(averaged) {on_path:.2e}")),
        (scaling <= tol::AC3_SCALING_REL, format!("c^2 scaling rel err {scaling:.2e}")),
    ]))
}

/// Minimal energy to leave the radius-`r` tube by time `horizon`, found by
/// searching exit steps of the discretised deviation `psi' = -psi + u`.
fn exit_oracle(r: f64, horizon: f64, dt: f64) -> f64 {
    let steps = (horizon / dt).round() as usize;
    // psi_K = sum_j (1 - dt)^(K-1-j) u_j dt; the cheapest u hits r exactly.
    let mut gram = 0.0;
    let mut best = f64::INFINITY;
    for _ in 0..steps {
        gram = gram * (1.0 - dt) * (1.0 - dt) + dt * dt;
        best = best.min(0.5 * r * r * dt / gram);
    }
    best
}

fn ac4() -> Result<Outcome> {
    let start = Instant::now();
    let (r, horizon, dt_macro) = (0.6, 1.0, 5e-4);
    let model = linear_benchmark_model(1.0, 0.0, 1.0, 1.0)?;
    let oracle = exit_oracle(r, horizon, 1e-5);
    let analytic = r * r / (1.0 - (-2.0 * horizon).exp());
    let avg = solve_averaged(
        &model,
        &AveragedInit::Point(vec![1.0]),
        &AveragedConfig {
            horizon,
            dt: dt_macro / 10.0,
            record_every: 10,
            invariant: InvariantConfig::default(),
        },
        &InvariantCache::new(),
    )?;
    let (n, reps) = (10_000, 10);
    let slow0 = Ensemble::dirac(&[1.0], n)?;
    let fast0 = Ensemble::zeros(1, n)?;
    let mut checks = vec![(
        ((oracle - analytic) / analytic).abs() <= tol::AC4_ORACLE_REL,
        format!("oracle inf I = {oracle:.4} (analytic {analytic:.4})"),
    )];
    for (i, eps) in [0.05, 0.1, 0.2].into_iter().enumerate() {
        let ts = TimeScales::new(eps, 0.1 * eps, 0.05)?;
        let mut sim = SimConfig::new(dt_macro, horizon, n, 40 + i as u64);
        sim.n_reps = reps;
        let est = exit_probability(&model, &slow0, &fast0, &ts, &sim, &avg.grid, r)?;
        let rel = (est.scaled_log - oracle).abs() / oracle;
        checks.push((
            rel <= tol::AC4_REL,
            format!("eps={eps}: P={:.3e} ({} of {}), -eps log P={:.4} (rel {rel:.3})", est.probability, est.exits, est.samples, est.scaled_log),
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    checks.push((secs < tol::AC4_RUNTIME_S, format!("{secs:.0} s")));
    Ok(Outcome::new(&checks))
}

fn ac5() -> Result<Outcome> {
    let start = Instant::now();
    let params = || {
        CboParams::new(
            1,
            1,
            |x, y| (x[0] - 2.0 * y[0]).powi(2),
            |y| (y[0] - 1.0).powi(2),
        )
    };
    let model = cbo_bilevel_model(params())?;
    let ts = TimeScales::new(0.1, 0.01, 0.05)?;
    let n = 500;
    let mut hits = 0;
    let mut finals = Vec::new();
    for seed in 0..10u64 {
        let mut sim = SimConfig::new(0.05, 10.0, n, seed);
        sim.taming = mvscale::Taming::DriftTamed;
        let slow0 = gaussian_ensemble(1, n, 2.0, derive_seed(seed, Purpose::Init, &[0]))?;
        let fast0 = gaussian_ensemble(1, n, 2.0, derive_seed(seed, Purpose::Init, &[1]))?;
        let path = simulate(&slow0, &fast0, &model, &ts, &sim)?;
        let law = model.consensus(path.slow.last(), path.fast.last())?;
        let d = ((law.m_ell[0] - 2.0).powi(2) + (law.m_h[0] - 1.0).powi(2)).sqrt();
        if d <= tol::AC5_RADIUS {
            hits += 1;
        }
        finals.push(format!("({:.3}, {:.3})", law.m_ell[0], law.m_h[0]));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(&[
        (hits >= tol::AC5_MIN_SEEDS, format!("{hits}/10 seeds within 0.1 of (2, 1); terminal consensus {}", finals.join(" "))),
        (secs < tol::AC5_RUNTIME_S, format!("{secs:.1} s")),
    ]))
}

fn ac6() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = generator(derive_seed(6, Purpose::Init, &[]));
    let normal = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, scale: f64| -> Vec<f64> {
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut bound_bad = 0;
    for _ in 0..1000 {
        let count = rng.random_range(1..60);
        let ys = normal(&mut rng, count, 2.0);
        let (amp, freq, floor, beta) = (
            rng.random_range(0.0..3.0),
            rng.random_range(0.1..3.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(0.05..10.0),
        );
        let h = move |y: &[f64]| floor + amp * (freq * y[0]).sin().powi(2);
        let nu = Ensemble::from_scalars(&ys)?;
        let rel: Vec<f64> = ys.iter().map(|y| h(&[*y]) - floor).collect();
        let cl = rel.iter().cloned().fold(f64::INFINITY, f64::min);
        let cu = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m = weighted_mean_h(&nu, h, beta)?;
        if m[0] * m[0] > (-2.0 * beta * (cl - cu)).exp() * moment(&nu, 2.0)? * (1.0 + 1e-12) {
            bound_bad += 1;
        }
    }
    let mut metric_bad = 0;
    for _ in 0..1000 {
        let count = rng.random_range(1..33);
        let e = |rng: &mut rand_chacha::ChaCha8Rng| Ensemble::new(2, normal(rng, 2 * count, 1.5));
        let (a, b, c) = (e(&mut rng)?, e(&mut rng)?, e(&mut rng)?);
        let ab = wasserstein2(&a, &b)?;
        let ba = wasserstein2(&b, &a)?;
        let ac = wasserstein2(&a, &c)?.value;
        let cb = wasserstein2(&c, &b)?.value;
        let aa = wasserstein2(&a, &a)?.value;
        if ab.approximate || ab.value != ba.value || ab.value > ac + cb + tol::AC6_TRIANGLE_ABS || aa != 0.0 || ab.value < 0.0 {
            metric_bad += 1;
        }
    }
    let mut psd_worst = 0.0_f64;
    for _ in 0..1000 {
        let a = DMatrix::from_vec(3, 3, normal(&mut rng, 9, 1.0));
        let m = &a * a.transpose();
        let s = psd_sqrt(&PsdMatrix::new(m.clone())?)?;
        psd_worst = psd_worst.max((s.matrix() * s.matrix() - &m).norm() / m.norm());
    }
    let mut shift_worst = 0.0_f64;
    for _ in 0..1000 {
        let (nx, ny) = (rng.random_range(1..40), rng.random_range(1..40));
        let mu = Ensemble::new(2, normal(&mut rng, 2 * nx, 2.0))?;
        let nu = Ensemble::from_scalars(&normal(&mut rng, ny, 2.0))?;
        let (alpha, beta, shift) = (rng.random_range(0.1..50.0), rng.random_range(0.1..50.0), rng.random_range(-20.0..20.0));
        let h = |y: &[f64]| (y[0] - 0.5).powi(2);
        let ell = |x: &[f64], y: &[f64]| (x[0] - y[0]).powi(2) + x[1] * x[1];
        let a = weighted_mean_ell(&mu, &nu, ell, alpha, beta, h)?;
        let b = weighted_mean_ell(&mu, &nu, |x, y| ell(x, y) + shift, alpha, beta, |y| h(y) + shift)?;
        let ha = weighted_mean_h(&nu, h, beta)?;
        let hb = weighted_mean_h(&nu, |y| h(y) + shift, beta)?;
        for (u, v) in a.iter().zip(&b).chain(ha.iter().zip(&hb)) {
            shift_worst = shift_worst.max((u - v).abs() / (1.0 + u.abs()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(&[
        (bound_bad == 0, format!("weighted-mean bound violated on {bound_bad}/1000")),
        (metric_bad == 0, format!("W2 axioms violated on {metric_bad}/1000")),
        (psd_worst <= tol::AC6_PSD_REL, format!("psd_sqrt rel err {psd_worst:.2e}")),
        (shift_worst <= tol::AC6_SHIFT_REL, format!("exp-shift rel err {shift_worst:.2e}")),
        (secs < tol::AC6_RUNTIME_S, format!("{secs:.1} s")),
    ]))
}

fn ac7() -> Result<Outcome> {
    let model = linear_benchmark_model(1.0, 1.0, 1.0, 1.0)?;
    let ts = TimeScales::new(0.05, 1e-4, 0.05)?;
    let (n, horizon, dt_macro) = (500, 1.0, 5e-3);
    let control = ControlPath::zero(1, 1, horizon, dt_macro)?;
    let cfg = ControlledConfig {
        sim: SimConfig::new(dt_macro, horizon, n, 77),
        companion_noise: CompanionNoise::Independent,
        energy_bound: None,
    };
    let slow0 = Ensemble::dirac(&[1.0], n)?;
    let fast0 = Ensemble::zeros(1, n)?;
    let run = controlled_simulate(&model, &slow0, &fast0, &ts, &control, &cfg)?;
    let rec = occupation_measure(&run, ts.separation, 1)?;
    let mass_err = rec
        .window_times()
        .iter()
        .map(|t| (rec.time_mass(*t) - t).abs())
        .fold(0.0, f64::max);

    let (lo, hi) = (0.75, 0.95);
    let (ys, w) = rec.y_marginal(lo, hi);
    let x_bar = model.averaged_path(1.0, 0.5 * (lo + hi));
    let inv = invariant_measure(
        &model,
        &Ensemble::from_scalars(&[x_bar])?,
        &InvariantConfig {
            n_particles: 5000,
            tol: 0.06,
            seed: 78,
            ..Default::default()
        },
        None,
    )?;
    let uniform = vec![1.0; inv.measure.count()];
    let w2 = weighted_wasserstein2(1, &ys, &w, inv.measure.as_slice(), &uniform, &W2Options::default())?.value;
    Ok(Outcome::new(&[
        (
            mass_err <= tol::AC7_MASS_STEPS * dt_macro,
            format!("max |mass([0,t]) - t| = {mass_err:.2e} over {} window starts", rec.window_times().len()),
        ),
        (w2 <= tol::AC7_W2 && inv.converged, format!("late-window y-marginal W2 to frozen invariant {w2:.4}")),
    ]))
}

fn ac8() -> Result<Outcome> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir()?;
    let mut checks = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(&configs)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    names.sort();
    for path in names.iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
        let cfg = ExperimentConfig::load(path)?;
        let kind = cfg.experiment;
        let opts = RunOptions {
            out_dir: Some(tmp.path().join(kind.name())),
            seed_override: None,
        };
        let (_, dir) = experiment::with_threads(Some(1), || experiment::run(cfg, &opts))??;
        let mut ok = true;
        for threads in [4, 8] {
            let report = experiment::with_threads(Some(threads), || experiment::replay(&dir.join("summary.json")))??;
            ok &= report.passed();
        }
        checks.push((ok, format!("{kind}")));
    }
    Ok(Outcome::new(&checks))
}

type Criterion = (&'static str, &'static str, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 8] = [
    ("ac1", "averaging-rate exponent", ac1),
    ("ac2", "frozen ergodicity", ac2),
    ("ac3", "rate-functional oracle", ac3),
    ("ac4", "exit-rate sanity", ac4),
    ("ac5", "bi-level CBO convergence", ac5),
    ("ac6", "measure primitives", ac6),
    ("ac7", "occupation diagnostics", ac7),
    ("ac8", "replay determinism (1, 4, 8 workers)", ac8),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let filters: Vec<String> = args
        .iter()
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|p| id.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            id.to_uppercase(),
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
