//! Large-deviation layer: the effective diffusion `Q2`, the explicit rate
//! functional
//!
//! ```text
//! I(phi) = 1/2 int_0^T < Q2^{-1} r_t, r_t > dt,   r_t = phi'_t - b_bar(phi_t, L_{X_bar_t})
//! ```
//!
//! controlled slow/fast runs and occupation measures of the controlled fast
//! process.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::AveragedPath;
use crate::ensemble::{Ensemble, TimeScales};
use crate::error::{Error, Result};
use crate::frozen::{drift_average, InvariantEnsemble};
use crate::measures::PsdMatrix;
use crate::model::{check_dims, MeanFieldModel};
use crate::path::{steps_in, uniform_times, PathGrid};
use crate::rng::{derive_seed, NoiseStreams, Purpose};
use crate::sde::{advance_all, ControlTerm, SimConfig, StepCoef};

/// A deterministic control `h_t in R^(d1 + d2)` on a uniform grid from zero.
/// The first `d1` coordinates drive the slow noise directions, the rest the
/// fast ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub slow_dim: usize,
}

impl ControlPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>, slow_dim: usize) -> Result<Self> {
        let points = values.iter().map(|v| v.as_slice()).collect::<Vec<_>>();
        PathGrid::from_points(times.clone(), &points.iter().map(|p| p.to_vec()).collect::<Vec<_>>())?;
        let width = values.first().map_or(0, |v| v.len());
        if width <= slow_dim || values.iter().any(|v| v.len() != width) {
            return Err(Error::config("control values need d1 + d2 coordinates each"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("control values must be finite"));
        }
        Ok(Self {
            times,
            values,
            slow_dim,
        })
    }

    /// `h = value` at every grid time of `[0, horizon]`.
    pub fn constant(value: &[f64], slow_dim: usize, horizon: f64, dt: f64) -> Result<Self> {
        let steps = steps_in(horizon, dt)?;
        Self::new(uniform_times(dt, steps), vec![value.to_vec(); steps + 1], slow_dim)
    }

    pub fn zero(slow_noise: usize, fast_noise: usize, horizon: f64, dt: f64) -> Result<Self> {
        Self::constant(&vec![0.0; slow_noise + fast_noise], slow_noise, horizon, dt)
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty control")
    }

    pub fn width(&self) -> usize {
        self.values[0].len()
    }

    /// Linear interpolation on `[0, T]`, zero beyond `T`.
    pub fn value_at(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        let horizon = self.horizon();
        if t > horizon * (1.0 + 1e-12) + 1e-15 || t < 0.0 {
            out.fill(0.0);
            return;
        }
        if n == 1 {
            out.copy_from_slice(&self.values[0]);
            return;
        }
        let h = horizon / (n - 1) as f64;
        let pos = (t / h).clamp(0.0, (n - 1) as f64);
        let k = (pos.floor() as usize).min(n - 2);
        let w = pos - k as f64;
        for ((o, a), b) in out.iter_mut().zip(&self.values[k]).zip(&self.values[k + 1]) {
            *o = (1.0 - w) * a + w * b;
        }
    }

    /// `int_0^T |h|^2 dt` by the trapezoid rule.
    pub fn squared_norm_integral(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v.iter().map(|a| a * a).sum()).collect();
        trapezoid(&self.times, &sq)
    }

    /// `1/2 int_0^T |h|^2 dt`
    pub fn energy(&self) -> f64 {
        0.5 * self.squared_norm_integral()
    }

    /// Rejects controls with `int |h|^2 > bound`.
    pub fn check_admissible(&self, bound: f64) -> Result<()> {
        let value = self.squared_norm_integral();
        if value > bound {
            return Err(Error::Inadmissible { value, bound });
        }
        Ok(())
    }
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// `(1/N) sum_y sigma(x, mu, y, inv) sigma(x, mu, y, inv)^T` over the
/// invariant ensemble.
pub fn q2_matrix<M: MeanFieldModel>(
    model: &M,
    x: &[f64],
    mu: &Ensemble,
    inv: &InvariantEnsemble,
) -> Result<PsdMatrix> {
    let law = model.law(mu, &inv.measure)?;
    Ok(q2_with_law(model, &law, x, &inv.measure))
}

fn q2_with_law<M: MeanFieldModel>(model: &M, law: &M::Law, x: &[f64], measure: &Ensemble) -> PsdMatrix {
    let d = model.dims();
    let (n, d1) = (d.slow, d.slow_noise);
    let mut s = vec![0.0; n * d1];
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let samples: Box<dyn Iterator<Item = &[f64]>> = if model.slow_diffusion_depends_on_fast() {
        Box::new(measure.particles())
    } else {
        Box::new(measure.particles().take(1))
    };
    let mut count = 0usize;
    for y in samples {
        model.slow_diffusion(law, x, y, &mut s);
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..d1).map(|k| s[i * d1 + k] * s[j * d1 + k]).sum();
                acc[(i, j)] += v;
            }
        }
        count += 1;
    }
    for i in 0..n {
        for j in i..n {
            let v = acc[(i, j)] / count as f64;
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
    }
    PsdMatrix::from_trusted(acc)
}

/// The rate functional on a grid path, with its integrand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEvaluation {
    /// `f64::INFINITY` when the path does not start at the averaged start.
    pub value: f64,
    pub times: Vec<f64>,
    /// `<Q2^{-1} r_t, r_t>`; the value is half its time integral.
    pub integrand: Vec<f64>,
    pub condition_numbers: Vec<f64>,
}

/// Default `eig_floor` factor: `1e-12 trace(Q2) / n`.
pub const Q2_FLOOR_FACTOR: f64 = 1e-12;

/// Evaluates `I(phi)` against the averaged path and its invariant ensembles,
/// which must share `phi`'s grid. `phi'` uses central differences with
/// second-order one-sided differences at the ends; the time integral is the
/// trapezoid rule.
pub fn rate_functional<M: MeanFieldModel>(
    model: &M,
    phi: &PathGrid,
    averaged: &AveragedPath,
    eig_floor: Option<f64>,
) -> Result<RateEvaluation> {
    phi.validate()?;
    let grid = &averaged.grid;
    if phi.len() != grid.len() || averaged.invariants.len() != grid.len() || phi.len() < 2 {
        return Err(Error::config("path and averaged path must share a grid of at least two points"));
    }
    let h = phi.step();
    if (h - grid.step()).abs() > 1e-9 * h {
        return Err(Error::config("path and averaged path have different steps"));
    }
    let n = model.dims().slow;
    let pts = phi.points();
    if pts[0].len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: pts[0].len(),
        });
    }
    let start = grid.snapshots[0].particle(0);
    let scale = start.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if pts[0].iter().zip(start).any(|(a, b)| (a - b).abs() > 1e-12 * scale) {
        return Ok(RateEvaluation {
            value: f64::INFINITY,
            times: phi.times.clone(),
            integrand: vec![],
            condition_numbers: vec![],
        });
    }
    let len = pts.len();
    let deriv = |k: usize, i: usize| -> f64 {
        if len == 2 {
            return (pts[1][i] - pts[0][i]) / h;
        }
        if k == 0 {
            (-3.0 * pts[0][i] + 4.0 * pts[1][i] - pts[2][i]) / (2.0 * h)
        } else if k == len - 1 {
            (3.0 * pts[k][i] - 4.0 * pts[k - 1][i] + pts[k - 2][i]) / (2.0 * h)
        } else {
            (pts[k + 1][i] - pts[k - 1][i]) / (2.0 * h)
        }
    };
    let rows = (0..len)
        .into_par_iter()
        .map(|k| {
            let mu = &grid.snapshots[k];
            let inv = &averaged.invariants[k];
            let law = model.law(mu, &inv.measure)?;
            let bbar = drift_average(model, &law, &pts[k], &inv.measure);
            let q2 = q2_with_law(model, &law, &pts[k], &inv.measure);
            let r = DVector::from_iterator(n, (0..n).map(|i| deriv(k, i) - bbar[i]));
            let eig = SymmetricEigen::new(q2.matrix().clone());
            let floor = eig_floor.unwrap_or(Q2_FLOOR_FACTOR * q2.trace().abs() / n as f64);
            let min = eig.eigenvalues.min();
            let max = eig.eigenvalues.max();
            if !(min >= floor) || !(min > 0.0) {
                return Err(Error::SingularDiffusion {
                    min_eigenvalue: min,
                    floor,
                }
                .at(phi.times[k]));
            }
            let proj = eig.eigenvectors.transpose() * &r;
            let value: f64 = proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p * p / l).sum();
            Ok((value, max / min))
        })
        .collect::<Result<Vec<_>>>()?;
    let integrand: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(RateEvaluation {
        value: 0.5 * trapezoid(&phi.times, &integrand),
        times: phi.times.clone(),
        integrand,
        condition_numbers: rows.iter().map(|r| r.1).collect(),
    })
}

/// Noise of the uncontrolled companion run that supplies the laws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompanionNoise {
    #[default]
    Independent,
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlledConfig {
    pub sim: SimConfig,
    #[serde(default)]
    pub companion_noise: CompanionNoise,
    /// Admissibility bound on `int |h|^2`.
    #[serde(default)]
    pub energy_bound: Option<f64>,
}

/// Controlled and companion trajectories on the recording grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlledRun {
    pub slow: PathGrid,
    pub fast: PathGrid,
    pub companion_slow: PathGrid,
    pub companion_fast: PathGrid,
    /// Control evaluated on the recording grid (zero beyond its horizon).
    pub control: Vec<Vec<f64>>,
}

/// Simulates the controlled pair
///
/// ```text
/// dX = (b + sigma h1) dt + sqrt(eps) sigma dW1
/// dY = (f / delta + g h2 / sqrt(delta eps)) dt + g dW2 / sqrt(delta)
/// ```
///
/// with every law taken from an uncontrolled companion run. The control is
/// frozen at the left end of each step.
pub fn controlled_simulate<M: MeanFieldModel>(
    model: &M,
    slow0: &Ensemble,
    fast0: &Ensemble,
    ts: &TimeScales,
    control: &ControlPath,
    cfg: &ControlledConfig,
) -> Result<ControlledRun> {
    controlled_simulate_rep(model, slow0, fast0, ts, control, cfg, 0)
}

pub fn controlled_simulate_rep<M: MeanFieldModel>(
    model: &M,
    slow0: &Ensemble,
    fast0: &Ensemble,
    ts: &TimeScales,
    control: &ControlPath,
    cfg: &ControlledConfig,
    rep: u64,
) -> Result<ControlledRun> {
    ts.validate()?;
    if !(ts.delta < ts.epsilon) {
        return Err(Error::config("controlled runs need delta < epsilon"));
    }
    let dims = model.dims();
    check_dims(&dims, slow0, fast0)?;
    if control.slow_dim != dims.slow_noise || control.width() != dims.slow_noise + dims.fast_noise {
        return Err(Error::DimensionMismatch {
            expected: dims.slow_noise + dims.fast_noise,
            got: control.width(),
        });
    }
    if let Some(bound) = cfg.energy_bound {
        control.check_admissible(bound)?;
    }
    let plan = cfg.sim.plan(ts)?;
    let mut streams = NoiseStreams::new(derive_seed(cfg.sim.seed, Purpose::Controlled, &[rep]), slow0.count());
    let mut companion_streams = match cfg.companion_noise {
        CompanionNoise::Shared => streams.clone(),
        CompanionNoise::Independent => {
            NoiseStreams::new(derive_seed(cfg.sim.seed, Purpose::Companion, &[rep]), slow0.count())
        }
    };
    let coef = StepCoef::coupled(ts, plan.dt, cfg.sim.taming);
    let gain = 1.0 / (ts.delta * ts.epsilon).sqrt();
    let (mut x, mut y) = (slow0.clone(), fast0.clone());
    let (mut cx, mut cy) = (slow0.clone(), fast0.clone());
    let mut h = vec![0.0; control.width()];
    let record_h = |t: f64, h: &mut Vec<f64>| {
        control.value_at(t, h);
        h.clone()
    };
    let mut rec = (vec![x.clone()], vec![y.clone()], vec![cx.clone()], vec![cy.clone()]);
    let mut ctl = vec![record_h(0.0, &mut h)];
    for k in 1..=plan.macro_steps {
        let t0 = (k - 1) as f64 * plan.dt_macro;
        for j in 0..plan.substeps {
            let t = t0 + j as f64 * plan.dt;
            let stamp = t + plan.dt;
            let law = model.law(&cx, &cy).map_err(|e| e.at(t))?;
            control.value_at(t, &mut h);
            let term = ControlTerm {
                h1: &h[..dims.slow_noise],
                h2: &h[dims.slow_noise..],
                fast_gain: gain,
            };
            let bad = advance_all(&dims, model, &law, &coef, Some(&term), &mut x, &mut y, &mut streams);
            if let Some(index) = bad {
                return Err(Error::NonFiniteState { index }.at(stamp));
            }
            let bad = advance_all(&dims, model, &law, &coef, None, &mut cx, &mut cy, &mut companion_streams);
            if let Some(index) = bad {
                return Err(Error::NonFiniteState { index }.at(stamp));
            }
        }
        rec.0.push(x.clone());
        rec.1.push(y.clone());
        rec.2.push(cx.clone());
        rec.3.push(cy.clone());
        ctl.push(record_h(k as f64 * plan.dt_macro, &mut h));
    }
    let times = uniform_times(plan.dt_macro, plan.macro_steps);
    Ok(ControlledRun {
        slow: PathGrid::new(times.clone(), rec.0)?,
        fast: PathGrid::new(times.clone(), rec.1)?,
        companion_slow: PathGrid::new(times.clone(), rec.2)?,
        companion_fast: PathGrid::new(times, rec.3)?,
        control: ctl,
    })
}

/// One quadrature atom of the occupation measure: window start `t`, inner
/// time `s in [t, t + Delta]`, and a particle of the controlled fast process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationAtom {
    pub t_index: u32,
    pub s_index: u32,
    pub particle: u32,
    pub weight: f64,
}

/// Discrete occupation measure over `(h, y, fast law, t)`. Controls, fast
/// states and law snapshots are stored once per grid index; the law
/// snapshot id of an atom is its `s_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationRecord {
    pub times: Vec<f64>,
    pub separation: f64,
    pub control: Vec<Vec<f64>>,
    /// Thinned controlled fast ensembles per grid index.
    pub fast: Vec<Ensemble>,
    pub atoms: Vec<OccupationAtom>,
}

/// Occupation measure of a controlled run. Window starts `t_k` carry the
/// left-Riemann weight `dt`; inner times use trapezoid weights normalised by
/// `Delta`; particles are thinned by `thinning` and averaged. Only windows
/// with `t_k + Delta` inside the run are used.
pub fn occupation_measure(run: &ControlledRun, separation: f64, thinning: usize) -> Result<OccupationRecord> {
    let dt = run.fast.step();
    let inner = steps_in(separation, dt)
        .map_err(|_| Error::config(format!("separation {separation} is not aligned with the grid step {dt}")))?;
    let len = run.fast.len();
    if inner + 1 > len {
        return Err(Error::config("separation exceeds the simulated horizon"));
    }
    let fast: Vec<Ensemble> = run.fast.snapshots.iter().map(|e| e.thinned(thinning.max(1))).collect();
    let count = fast[0].count();
    let windows = len - inner;
    let mut atoms = Vec::with_capacity(windows * (inner + 1) * count);
    for k in 0..windows {
        for j in 0..=inner {
            let end = if j == 0 || j == inner { 0.5 } else { 1.0 };
            let w = dt * end * dt / separation / count as f64;
            for p in 0..count {
                atoms.push(OccupationAtom {
                    t_index: k as u32,
                    s_index: (k + j) as u32,
                    particle: p as u32,
                    weight: w,
                });
            }
        }
    }
    Ok(OccupationRecord {
        times: run.fast.times.clone(),
        separation,
        control: run.control.clone(),
        fast,
        atoms,
    })
}

impl OccupationRecord {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Mass of the atoms whose window start lies in `[0, t]`.
    pub fn time_mass(&self, t: f64) -> f64 {
        let tol = 1e-9 * self.times.get(1).copied().unwrap_or(1.0);
        self.atoms
            .iter()
            .filter(|a| self.times[a.t_index as usize] <= t + tol)
            .map(|a| a.weight)
            .sum()
    }

    /// Window starts present in the record.
    pub fn window_times(&self) -> Vec<f64> {
        let last = self.atoms.iter().map(|a| a.t_index).max().map_or(0, |v| v as usize + 1);
        self.times[..last].to_vec()
    }

    /// The `h` marginal as distinct control values with their masses.
    pub fn h_marginal(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for a in &self.atoms {
            let h = &self.control[a.s_index as usize];
            match out.iter_mut().find(|(v, _)| v == h) {
                Some(e) => e.1 += a.weight,
                None => out.push((h.clone(), a.weight)),
            }
        }
        out
    }

    /// Weighted fast states of the atoms whose window start lies in
    /// `[t_lo, t_hi]`: flat points and weights.
    pub fn y_marginal(&self, t_lo: f64, t_hi: f64) -> (Vec<f64>, Vec<f64>) {
        let (mut pts, mut ws) = (Vec::new(), Vec::new());
        for a in &self.atoms {
            let t = self.times[a.t_index as usize];
            if t >= t_lo && t <= t_hi {
                pts.extend_from_slice(self.fast[a.s_index as usize].particle(a.particle as usize));
                ws.push(a.weight);
            }
        }
        (pts, ws)
    }

    pub fn fast_dim(&self) -> usize {
        self.fast[0].dim()
    }

    /// Histogram of the `y` marginal per coordinate: columns
    /// `coordinate, bin_lo, bin_hi, mass`.
    pub fn write_y_histogram<W: std::io::Write>(&self, w: W, bins: usize) -> Result<()> {
        let (pts, ws) = self.y_marginal(f64::NEG_INFINITY, f64::INFINITY);
        write_histogram(w, self.fast_dim(), &pts, &ws, bins)
    }

    /// Histogram of the `h` marginal per coordinate.
    pub fn write_h_histogram<W: std::io::Write>(&self, w: W, bins: usize) -> Result<()> {
        let marg = self.h_marginal();
        let dim = self.control[0].len();
        let pts: Vec<f64> = marg.iter().flat_map(|(v, _)| v.iter().copied()).collect();
        let ws: Vec<f64> = marg.iter().map(|(_, m)| *m).collect();
        write_histogram(w, dim, &pts, &ws, bins)
    }

    /// Mass over `[0, t]` for every window start: columns `t, mass`.
    pub fn write_time_marginal<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "mass"])?;
        let windows = self.window_times();
        let mut per = vec![0.0; windows.len()];
        for a in &self.atoms {
            per[a.t_index as usize] += a.weight;
        }
        let mut acc = 0.0;
        for (t, m) in windows.iter().zip(&per) {
            acc += m;
            out.write_record([format!("{t:?}"), format!("{acc:?}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn write_histogram<W: std::io::Write>(w: W, dim: usize, pts: &[f64], ws: &[f64], bins: usize) -> Result<()> {
    let bins = bins.max(1);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["coordinate", "bin_lo", "bin_hi", "mass"])?;
    for c in 0..dim {
        let vals = pts.iter().skip(c).step_by(dim);
        let (lo, hi) = vals.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            continue;
        }
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut mass = vec![0.0; bins];
        for (v, wt) in vals.zip(ws) {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            mass[b] += wt;
        }
        for (b, m) in mass.iter().enumerate() {
            out.write_record([
                c.to_string(),
                format!("{:?}", lo + b as f64 * width),
                format!("{:?}", lo + (b + 1) as f64 * width),
                format!("{m:?}"),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Monte Carlo estimate of `P(sup_grid |X_t - X_bar_t| > radius)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitEstimate {
    pub radius: f64,
    pub samples: usize,
    pub exits: usize,
    pub probability: f64,
    /// `-epsilon log P`; infinite when no sample exits.
    pub scaled_log: f64,
}

/// Counts particles whose deviation from `averaged` exceeds `radius` at some
/// recording time. Every particle and replication is one sample.
pub fn exit_probability<M: MeanFieldModel>(
    model: &M,
    slow0: &Ensemble,
    fast0: &Ensemble,
    ts: &TimeScales,
    sim: &SimConfig,
    averaged: &PathGrid,
    radius: f64,
) -> Result<ExitEstimate> {
    let plan = sim.plan(ts)?;
    if averaged.len() != plan.macro_steps + 1 {
        return Err(Error::config("averaged path does not match the recording grid"));
    }
    let bar = averaged.points();
    let r2 = radius * radius;
    let exits = (0..sim.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut out = vec![false; slow0.count()];
            crate::sde::simulate_with(slow0, fast0, model, ts, sim, rep, |k, _, slow, _| {
                for (o, x) in out.iter_mut().zip(slow.particles()) {
                    if !*o && crate::measures::sq_dist(x, &bar[k]) > r2 {
                        *o = true;
                    }
                }
                Ok(())
            })?;
            Ok(out.iter().filter(|&&b| b).count())
        })
        .collect::<Result<Vec<usize>>>()?
        .iter()
        .sum::<usize>();
    let samples = slow0.count() * sim.n_reps;
    let probability = exits as f64 / samples as f64;
    Ok(ExitEstimate {
        radius,
        samples,
        exits,
        probability,
        scaled_log: if exits == 0 {
            f64::INFINITY
        } else {
            -ts.epsilon * probability.ln()
        },
    })
}
