use std::collections::BTreeMap;

use serde_json::json;

use super::config::{require, ControlSection, ExperimentConfig, ExperimentKind, InitSpec, PathSpec};
use super::{with_model, Artifact, Execution};
use crate::averaging::{rate_sweep, solve_averaged, AveragedConfig, AveragedInit, AveragingConfig};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::frozen::{
    ergodicity_rate, gaussian_ensemble, invariant_measure, ErgodicityConfig, InvariantCache, InvariantConfig,
};
use crate::ldp::{controlled_simulate, occupation_measure, rate_functional, ControlPath, ControlledConfig};
use crate::measures::PSD_EIGEN_TOLERANCE;
use crate::model::MeanFieldModel;
use crate::path::PathGrid;
use crate::rng::{derive_seed, Purpose};
use crate::sde::simulate_with;
use crate::zoo::{assumption_probe, CboModel};

use super::ZooModel;

fn f(v: f64) -> String {
    format!("{v:?}")
}

struct Table {
    out: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(header.iter().map(|s| s.as_ref()))?;
        Ok(Self { out })
    }

    fn row(&mut self, values: &[f64]) -> Result<()> {
        self.out.write_record(values.iter().map(|v| f(*v)))?;
        Ok(())
    }

    fn finish(self, name: &str) -> Result<Artifact> {
        let bytes = self
            .out
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(Artifact {
            name: name.to_string(),
            bytes,
        })
    }
}

fn second_moment(e: &Ensemble) -> f64 {
    e.as_slice().iter().map(|v| v * v).sum::<f64>() / e.count() as f64
}

fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("mean_x{i}")));
    h.extend((0..m).map(|j| format!("mean_y{j}")));
    h.push("m2_x".into());
    h.push("m2_y".into());
    h
}

fn trajectory_row(t: f64, slow: &Ensemble, fast: &Ensemble) -> Vec<f64> {
    let mut row = vec![t];
    row.extend(slow.mean());
    row.extend(fast.mean());
    row.push(second_moment(slow));
    row.push(second_moment(fast));
    row
}

fn base_tolerances() -> BTreeMap<String, f64> {
    BTreeMap::from([("psd.eigen_tolerance".to_string(), PSD_EIGEN_TOLERANCE)])
}

fn initial_pair<M: MeanFieldModel>(model: &M, cfg: &ExperimentConfig, count: usize) -> Result<(Ensemble, Ensemble)> {
    let d = model.dims();
    let slow = cfg.slow_init.clone().unwrap_or_else(|| InitSpec::zeros(d.slow));
    let fast = cfg.fast_init.clone().unwrap_or_else(|| InitSpec::zeros(d.fast));
    Ok((
        slow.sample(d.slow, count, cfg.seed, 0)?,
        fast.sample(d.fast, count, cfg.seed, 1)?,
    ))
}

pub(super) fn execute(cfg: &ExperimentConfig) -> Result<Execution> {
    let zoo = cfg.model.build()?;
    match cfg.experiment {
        ExperimentKind::CboOptimize => match &zoo {
            ZooModel::Cbo(m) => cbo_optimize(m, cfg),
            _ => Err(Error::config("cbo-optimize needs the cbo model")),
        },
        kind => with_model!(&zoo, m => match kind {
            ExperimentKind::Simulate => simulate(m, cfg),
            ExperimentKind::AveragingRate => averaging_rate(m, cfg),
            ExperimentKind::FrozenInvariant => frozen_invariant(m, cfg),
            ExperimentKind::LdpRate => ldp_rate(m, cfg),
            ExperimentKind::ControlledRun => controlled_run(m, cfg),
            ExperimentKind::Probe => probe(m, cfg),
            ExperimentKind::CboOptimize => unreachable!(),
        }),
    }
}

fn simulate<M: MeanFieldModel>(model: &M, cfg: &ExperimentConfig) -> Result<Execution> {
    let kind = cfg.experiment;
    let ts = require(&cfg.time_scales, "time_scales", kind)?;
    let sim = require(&cfg.sim, "sim", kind)?;
    let d = model.dims();
    let (x0, y0) = initial_pair(model, cfg, sim.n_particles)?;
    let mut table = Table::new(&trajectory_header(d.slow, d.fast))?;
    let start = x0.mean();
    let mut drift = 0.0_f64;
    let mut last = (x0.mean(), y0.mean());
    simulate_with(&x0, &y0, model, ts, sim, 0, |_, t, slow, fast| {
        let mean = slow.mean();
        drift = mean.iter().zip(&start).fold(drift, |a, (u, v)| a.max((u - v).abs()));
        last = (mean, fast.mean());
        table.row(&trajectory_row(t, slow, fast))
    })?;
    let plan = sim.plan(ts)?;
    Ok(Execution {
        headline: json!({
            "terminal_slow_mean": last.0,
            "terminal_fast_mean": last.1,
            "max_slow_mean_change": drift,
            "integrator_step": plan.dt,
        }),
        tolerances: base_tolerances(),
        artifacts: vec![table.finish("trajectory.csv")?],
    })
}

fn cbo_optimize(model: &CboModel, cfg: &ExperimentConfig) -> Result<Execution> {
    let kind = cfg.experiment;
    let ts = require(&cfg.time_scales, "time_scales", kind)?;
    let sim = require(&cfg.sim, "sim", kind)?;
    let d = model.dims();
    let (x0, y0) = initial_pair(model, cfg, sim.n_particles)?;
    let mut traj = Table::new(&trajectory_header(d.slow, d.fast))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..d.slow).map(|i| format!("m_alpha{i}")));
    header.extend((0..d.fast).map(|j| format!("m_beta{j}")));
    let mut cons = Table::new(&header)?;
    let mut last = None;
    simulate_with(&x0, &y0, model, ts, sim, 0, |_, t, slow, fast| {
        traj.row(&trajectory_row(t, slow, fast))?;
        let c = model.consensus(slow, fast)?;
        let mut row = vec![t];
        row.extend(&c.m_ell);
        row.extend(&c.m_h);
        cons.row(&row)?;
        last = Some(c);
        Ok(())
    })?;
    let c = last.expect("observer runs at t = 0");
    let mut headline = json!({ "m_alpha": c.m_ell, "m_beta": c.m_h });
    let mut tolerances = base_tolerances();
    if let Some(section) = &cfg.cbo {
        tolerances.insert("cbo.tolerance".into(), section.tolerance);
        if let Some((xs, ys)) = &section.target {
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            let (dx, dy) = (dist(&c.m_ell, xs), dist(&c.m_h, ys));
            headline["distance_alpha"] = json!(dx);
            headline["distance_beta"] = json!(dy);
            headline["within_tolerance"] = json!(dx <= section.tolerance && dy <= section.tolerance);
        }
    }
    Ok(Execution {
        headline,
        tolerances,
        artifacts: vec![traj.finish("trajectory.csv")?, cons.finish("consensus.csv")?],
    })
}

fn averaging_rate<M: MeanFieldModel>(model: &M, cfg: &ExperimentConfig) -> Result<Execution> {
    let kind = cfg.experiment;
    let sim = require(&cfg.sim, "sim", kind)?;
    let a = require(&cfg.averaging, "averaging", kind)?;
    let invariant = cfg.invariant.clone().unwrap_or_default();
    let acfg = AveragingConfig {
        sim: sim.clone(),
        x0: a.x0.clone(),
        fast_init: a.fast_init.clone(),
        invariant: invariant.clone(),
        averaged_dt: a.averaged_dt,
    };
    let report = rate_sweep(model, &a.eps_grid, &a.delta_policy, a.separation, &acfg)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let mut tolerances = base_tolerances();
    tolerances.insert("invariant.tol".into(), invariant.tol);
    Ok(Execution {
        headline: json!({
            "slope": report.slope,
            "intercept": report.intercept,
            "ci_low": report.ci_low,
            "ci_high": report.ci_high,
            "monotone_within_2se": report.monotone_within(2.0),
            "cells": report.cells,
        }),
        tolerances,
        artifacts: vec![Artifact {
            name: "rate_report.csv".into(),
            bytes: csv,
        }],
    })
}

fn frozen_invariant<M: MeanFieldModel>(model: &M, cfg: &ExperimentConfig) -> Result<Execution> {
    let kind = cfg.experiment;
    let fz = require(&cfg.frozen, "frozen", kind)?;
    let d = model.dims();
    let inv_cfg: InvariantConfig = cfg.invariant.clone().unwrap_or_default();
    let mu = fz.mu.sample(d.slow, fz.mu_particles, cfg.seed, 0)?;
    let inv = invariant_measure(model, &mu, &inv_cfg, None)?;
    let header: Vec<String> = (0..d.fast).map(|j| format!("y{j}")).collect();
    let mut dump = Table::new(&header)?;
    for p in inv.measure.particles() {
        dump.row(p)?;
    }
    let mut headline = json!({
        "converged": inv.converged,
        "w2_residual": inv.w2_residual,
        "burn_in_time": inv.burn_in_time,
        "mean": inv.measure.mean(),
        "second_moment": second_moment(&inv.measure),
    });
    let mut artifacts = vec![dump.finish("invariant.csv")?];
    if let Some(e) = &fz.ergodicity {
        let init1 = gaussian_ensemble(d.fast, e.n_particles, 1.0, derive_seed(cfg.seed, Purpose::Init, &[2]))?;
        let init2 = init1.translated(&vec![e.shift; d.fast])?;
        let ecfg = ErgodicityConfig {
            horizon: e.horizon,
            dt: e.dt,
            record_every: 1,
            taming: inv_cfg.taming,
            seed: cfg.seed,
        };
        let fit = ergodicity_rate(model, &mu, &init1, &init2, &ecfg)?;
        let mut t = Table::new(&["t", "w2"])?;
        for (time, w) in fit.times.iter().zip(&fit.w2) {
            t.row(&[*time, *w])?;
        }
        artifacts.push(t.finish("ergodicity.csv")?);
        headline["ergodicity_rate"] = json!(fit.rate);
        headline["ergodicity_points_used"] = json!(fit.used);
    }
    let mut tolerances = base_tolerances();
    tolerances.insert("invariant.tol".into(), inv_cfg.tol);
    Ok(Execution {
        headline,
        tolerances,
        artifacts,
    })
}

fn ldp_rate<M: MeanFieldModel>(model: &M, cfg: &ExperimentConfig) -> Result<Execution> {
    let l = require(&cfg.ldp, "ldp", cfg.experiment)?;
    let invariant = cfg.invariant.clone().unwrap_or_default();
    let acfg = AveragedConfig {
        horizon: l.horizon,
        dt: l.dt,
        record_every: 1,
        invariant: invariant.clone(),
    };
    let averaged = solve_averaged(model, &AveragedInit::Point(l.x0.clone()), &acfg, &InvariantCache::new())?;
    let grid = &averaged.grid;
    let bar = grid.points();
    let points: Vec<Vec<f64>> = match &l.path {
        PathSpec::Averaged => bar.clone(),
        PathSpec::Constant => vec![l.x0.clone(); grid.len()],
        PathSpec::Perturbed { amplitude, frequency } => grid
            .times
            .iter()
            .zip(&bar)
            .map(|(t, p)| {
                let bump = amplitude * (frequency * std::f64::consts::PI * t / l.horizon).sin();
                p.iter().map(|v| v + bump).collect()
            })
            .collect(),
        PathSpec::Points { values } => {
            if values.len() != grid.len() {
                return Err(Error::config(format!(
                    "path has {} points, the grid has {}",
                    values.len(),
                    grid.len()
                )));
            }
            values.clone()
        }
    };
    let phi = PathGrid::from_points(grid.times.clone(), &points)?;
    let eval = rate_functional(model, &phi, &averaged, l.eig_floor)?;
    let mut t = Table::new(&["t", "integrand", "q2_condition"])?;
    for ((time, v), c) in eval.times.iter().zip(&eval.integrand).zip(&eval.condition_numbers) {
        t.row(&[*time, *v, *c])?;
    }
    let mut tolerances = base_tolerances();
    tolerances.insert("invariant.tol".into(), invariant.tol);
    tolerances.insert("q2.floor_factor".into(), crate::ldp::Q2_FLOOR_FACTOR);
    Ok(Execution {
        headline: json!({ "value": if eval.value.is_finite() { json!(eval.value) } else { json!("inf") } }),
        tolerances,
        artifacts: vec![
            Artifact {
                name: "rate_evaluation.json".into(),
                bytes: serde_json::to_vec_pretty(&json!({
                    "value": if eval.value.is_finite() { json!(eval.value) } else { json!("inf") },
                    "times": eval.times,
                    "integrand": eval.integrand,
                    "condition_numbers": eval.condition_numbers,
                }))?,
            },
            t.finish("rate_integrand.csv")?,
        ],
    })
}

fn controlled_run<M: MeanFieldModel>(model: &M, cfg: &ExperimentConfig) -> Result<Execution> {
    let kind = cfg.experiment;
    let ts = require(&cfg.time_scales, "time_scales", kind)?;
    let sim = require(&cfg.sim, "sim", kind)?;
    let c: &ControlSection = require(&cfg.control, "control", kind)?;
    let d = model.dims();
    let control = ControlPath::constant(&c.value, d.slow_noise, c.horizon.unwrap_or(sim.horizon), sim.dt_macro)?;
    let (x0, y0) = initial_pair(model, cfg, sim.n_particles)?;
    let ccfg = ControlledConfig {
        sim: sim.clone(),
        companion_noise: c.companion_noise,
        energy_bound: c.energy_bound,
    };
    let run = controlled_simulate(model, &x0, &y0, ts, &control, &ccfg)?;
    let mut traj = Table::new(&trajectory_header(d.slow, d.fast))?;
    for ((t, x), y) in run.slow.times.iter().zip(&run.slow.snapshots).zip(&run.fast.snapshots) {
        traj.row(&trajectory_row(*t, x, y))?;
    }
    let occ = occupation_measure(&run, ts.separation, c.thinning)?;
    let mut time_csv = Vec::new();
    occ.write_time_marginal(&mut time_csv)?;
    let mut y_csv = Vec::new();
    occ.write_y_histogram(&mut y_csv, c.bins)?;
    let mut h_csv = Vec::new();
    occ.write_h_histogram(&mut h_csv, c.bins)?;
    let mut tolerances = base_tolerances();
    tolerances.insert("occupation.mass_tolerance".into(), 2.0 * sim.dt_macro);
    Ok(Execution {
        headline: json!({
            "terminal_slow_mean": run.slow.last().mean(),
            "terminal_fast_mean": run.fast.last().mean(),
            "control_energy": control.energy(),
            "occupation_total_mass": occ.total_mass(),
        }),
        tolerances,
        artifacts: vec![
            traj.finish("trajectory.csv")?,
            Artifact {
                name: "occupation_time.csv".into(),
                bytes: time_csv,
            },
            Artifact {
                name: "occupation_y.csv".into(),
                bytes: y_csv,
            },
            Artifact {
                name: "occupation_h.csv".into(),
                bytes: h_csv,
            },
        ],
    })
}

fn probe<M: MeanFieldModel>(model: &M, cfg: &ExperimentConfig) -> Result<Execution> {
    let sampler = cfg.probe.clone().unwrap_or_default();
    let report = assumption_probe(model, &sampler);
    Ok(Execution {
        headline: serde_json::to_value(&report)?,
        tolerances: base_tolerances(),
        artifacts: vec![Artifact {
            name: "probe.json".into(),
            bytes: serde_json::to_vec_pretty(&report)?,
        }],
    })
}
