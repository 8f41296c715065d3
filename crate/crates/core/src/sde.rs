//! Euler-Maruyama time stepping for paired slow/fast particle systems.
//!
//! One step advances particle `i` by
//!
//! ```text
//! x_i += b dt + sqrt(eps) sigma dW1_i
//! y_i += (1/delta) f dt + (1/sqrt(delta)) g dW2_i
//! ```
//!
//! with every coefficient evaluated against the pre-step empirical laws.
//! Both components share one step `dt = min(dt_macro, theta * delta)`
//! (rounded down so it divides `dt_macro`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, TimeScales};
use crate::error::{Error, Result};
use crate::model::{check_dims, Dims, MeanFieldModel};
use crate::path::{steps_in, uniform_times, PathGrid};
use crate::rng::{derive_seed, fill_normal, NoiseStreams, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taming {
    #[default]
    None,
    DriftTamed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Spacing of the recording grid.
    pub dt_macro: f64,
    /// `theta`: the step never exceeds `theta * delta`.
    #[serde(default = "default_theta")]
    pub fast_substep_factor: f64,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    pub n_particles: usize,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default)]
    pub taming: Taming,
}

fn default_theta() -> f64 {
    0.1
}

fn default_reps() -> usize {
    1
}

/// How a horizon is cut into recording intervals and integrator steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub dt: f64,
    pub substeps: usize,
    pub macro_steps: usize,
    pub dt_macro: f64,
}

impl SimConfig {
    pub fn new(dt_macro: f64, horizon: f64, n_particles: usize, seed: u64) -> Self {
        Self {
            dt_macro,
            fast_substep_factor: default_theta(),
            horizon,
            seed,
            n_particles,
            n_reps: 1,
            taming: Taming::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_macro > 0.0 && self.dt_macro.is_finite()) {
            return Err(Error::config("dt_macro must be positive"));
        }
        if !(self.fast_substep_factor > 0.0 && self.fast_substep_factor <= 1.0) {
            return Err(Error::config("fast_substep_factor must lie in (0, 1]"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon must be positive"));
        }
        if self.n_particles == 0 || self.n_reps == 0 {
            return Err(Error::config("n_particles and n_reps must be positive"));
        }
        Ok(())
    }

    /// Largest admissible integrator step, `min(dt_macro, theta * delta)`.
    pub fn max_step(&self, ts: &TimeScales) -> f64 {
        self.dt_macro.min(self.fast_substep_factor * ts.delta)
    }

    pub fn plan(&self, ts: &TimeScales) -> Result<StepPlan> {
        self.validate()?;
        let macro_steps = steps_in(self.horizon, self.dt_macro)?;
        let ratio = self.dt_macro / self.max_step(ts);
        let substeps = ((ratio - 1e-9).ceil() as usize).max(1);
        Ok(StepPlan {
            dt: self.dt_macro / substeps as f64,
            substeps,
            macro_steps,
            dt_macro: self.dt_macro,
        })
    }
}

/// `raw / (1 + dt |raw|)`; the result has norm at most `1/dt`.
pub fn tamed_drift(raw: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::config("taming step must be positive"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDrift);
    }
    let mut out = raw.to_vec();
    tame_in_place(&mut out, dt);
    Ok(out)
}

#[inline]
pub(crate) fn tame_in_place(v: &mut [f64], dt: f64) {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = 1.0 / (1.0 + dt * norm);
    v.iter_mut().for_each(|a| *a *= scale);
}

/// Per-particle work buffers.
pub(crate) struct Scratch {
    pub bx: Vec<f64>,
    pub sx: Vec<f64>,
    pub zx: Vec<f64>,
    pub fy: Vec<f64>,
    pub gy: Vec<f64>,
    pub zy: Vec<f64>,
}

impl Scratch {
    pub fn new(d: &Dims) -> Self {
        Self {
            bx: vec![0.0; d.slow],
            sx: vec![0.0; d.slow * d.slow_noise],
            zx: vec![0.0; d.slow_noise],
            fy: vec![0.0; d.fast],
            gy: vec![0.0; d.fast * d.fast_noise],
            zy: vec![0.0; d.fast_noise],
        }
    }
}

/// Step constants shared by all particles.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StepCoef {
    pub dt: f64,
    pub slow_noise: f64,
    pub fast_rate: f64,
    pub fast_noise: f64,
    pub taming: Taming,
}

impl StepCoef {
    pub fn coupled(ts: &TimeScales, dt: f64, taming: Taming) -> Self {
        Self {
            dt,
            slow_noise: (ts.epsilon * dt).sqrt(),
            fast_rate: 1.0 / ts.delta,
            fast_noise: (dt / ts.delta).sqrt(),
            taming,
        }
    }

    /// Fast equation at unit speed (frozen dynamics).
    pub fn unit_fast(dt: f64, taming: Taming) -> Self {
        Self {
            dt,
            slow_noise: 0.0,
            fast_rate: 1.0,
            fast_noise: dt.sqrt(),
            taming,
        }
    }
}

/// Deterministic control added on top of the drifts: `sigma h1` on the slow
/// component and `fast_gain g h2` on the fast one.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ControlTerm<'a> {
    pub h1: &'a [f64],
    pub h2: &'a [f64],
    pub fast_gain: f64,
}

#[inline]
fn mat_vec_acc(out: &mut [f64], mat: &[f64], v: &[f64], scale: f64) {
    let cols = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &mat[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o += scale * acc;
    }
}

/// Advances one `(x, y)` pair in place.
#[inline]
pub(crate) fn advance_pair<M: MeanFieldModel>(
    model: &M,
    law: &M::Law,
    c: &StepCoef,
    control: Option<&ControlTerm<'_>>,
    x: &mut [f64],
    y: &mut [f64],
    rng: &mut ChaCha8Rng,
    s: &mut Scratch,
) {
    model.slow_drift(law, x, y, &mut s.bx);
    model.slow_diffusion(law, x, y, &mut s.sx);
    model.fast_drift(law, y, &mut s.fy);
    model.fast_diffusion(law, y, &mut s.gy);
    fill_normal(rng, &mut s.zx);
    fill_normal(rng, &mut s.zy);

    s.fy.iter_mut().for_each(|v| *v *= c.fast_rate);
    if let Some(ctl) = control {
        mat_vec_acc(&mut s.bx, &s.sx, ctl.h1, 1.0);
        mat_vec_acc(&mut s.fy, &s.gy, ctl.h2, ctl.fast_gain);
    }
    if c.taming == Taming::DriftTamed {
        tame_in_place(&mut s.bx, c.dt);
        tame_in_place(&mut s.fy, c.dt);
    }

    for (xi, b) in x.iter_mut().zip(&s.bx) {
        *xi += b * c.dt;
    }
    if c.slow_noise != 0.0 {
        mat_vec_acc(x, &s.sx, &s.zx, c.slow_noise);
    }
    for (yi, f) in y.iter_mut().zip(&s.fy) {
        *yi += f * c.dt;
    }
    mat_vec_acc(y, &s.gy, &s.zy, c.fast_noise);
}

/// [`advance_pair`] for models whose four dimensions are all one.
#[inline]
pub(crate) fn advance_scalar_pair<M: MeanFieldModel>(
    model: &M,
    law: &M::Law,
    c: &StepCoef,
    control: Option<&ControlTerm<'_>>,
    x: &mut f64,
    y: &mut f64,
    rng: &mut ChaCha8Rng,
) {
    let (xs, ys) = (std::slice::from_ref(x), std::slice::from_ref(y));
    let (mut b, mut sg, mut f, mut g) = ([0.0], [0.0], [0.0], [0.0]);
    model.slow_drift(law, xs, ys, &mut b);
    model.slow_diffusion(law, xs, ys, &mut sg);
    model.fast_drift(law, ys, &mut f);
    model.fast_diffusion(law, ys, &mut g);
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    let (mut b, sg, mut f, g) = (b[0], sg[0], f[0] * c.fast_rate, g[0]);
    if let Some(ctl) = control {
        b += sg * ctl.h1[0];
        f += ctl.fast_gain * g * ctl.h2[0];
    }
    if c.taming == Taming::DriftTamed {
        b /= 1.0 + c.dt * b.abs();
        f /= 1.0 + c.dt * f.abs();
    }
    *x += b * c.dt + c.slow_noise * sg * zx;
    *y += f * c.dt + c.fast_noise * g * zy;
}

/// Advances one fast particle in place under coefficients frozen in `law`.
#[inline]
pub(crate) fn advance_fast<M: MeanFieldModel>(
    model: &M,
    law: &M::Law,
    c: &StepCoef,
    y: &mut [f64],
    rng: &mut ChaCha8Rng,
    s: &mut Scratch,
) {
    model.fast_drift(law, y, &mut s.fy);
    model.fast_diffusion(law, y, &mut s.gy);
    fill_normal(rng, &mut s.zy);
    s.fy.iter_mut().for_each(|v| *v *= c.fast_rate);
    if c.taming == Taming::DriftTamed {
        tame_in_place(&mut s.fy, c.dt);
    }
    for (yi, f) in y.iter_mut().zip(&s.fy) {
        *yi += f * c.dt;
    }
    mat_vec_acc(y, &s.gy, &s.zy, c.fast_noise);
}

const CHUNK: usize = 256;

fn use_parallel(count: usize) -> bool {
    count >= 2 * CHUNK && rayon::current_num_threads() > 1
}

#[inline(always)]
fn all_finite(v: &[f64]) -> bool {
    v.iter().map(|a| a - a).sum::<f64>() == 0.0
}

/// Runs `update(x_i, y_i, rng_i, scratch)` for every pair, in parallel chunks
/// when worthwhile. Returns the smallest index whose new state is non-finite.
pub(crate) fn update_pairs<F>(
    dims: &Dims,
    slow: &mut [f64],
    fast: &mut [f64],
    rngs: &mut [ChaCha8Rng],
    update: F,
) -> Option<usize>
where
    F: Fn(&mut [f64], &mut [f64], &mut ChaCha8Rng, &mut Scratch) + Sync,
{
    let (n, m) = (dims.slow, dims.fast);
    let run_chunk = |base: usize, xs: &mut [f64], ys: &mut [f64], rs: &mut [ChaCha8Rng]| {
        let mut s = Scratch::new(dims);
        let mut bad = None;
        for (k, ((x, y), r)) in xs
            .chunks_exact_mut(n)
            .zip(ys.chunks_exact_mut(m))
            .zip(rs.iter_mut())
            .enumerate()
        {
            update(x, y, r, &mut s);
            if bad.is_none() && !(all_finite(x) && all_finite(y)) {
                bad = Some(base + k);
            }
        }
        bad
    };
    if use_parallel(rngs.len()) {
        slow.par_chunks_mut(CHUNK * n)
            .zip(fast.par_chunks_mut(CHUNK * m))
            .zip(rngs.par_chunks_mut(CHUNK))
            .enumerate()
            .filter_map(|(c, ((xs, ys), rs))| run_chunk(c * CHUNK, xs, ys, rs))
            .min()
    } else {
        run_chunk(0, slow, fast, rngs)
    }
}

/// Single-component analogue of [`update_pairs`].
pub(crate) fn update_fast<F>(
    dims: &Dims,
    fast: &mut [f64],
    rngs: &mut [ChaCha8Rng],
    update: F,
) -> Option<usize>
where
    F: Fn(&mut [f64], &mut ChaCha8Rng, &mut Scratch) + Sync,
{
    let m = dims.fast;
    let run_chunk = |base: usize, ys: &mut [f64], rs: &mut [ChaCha8Rng]| {
        let mut s = Scratch::new(dims);
        let mut bad = None;
        for (k, (y, r)) in ys.chunks_exact_mut(m).zip(rs.iter_mut()).enumerate() {
            update(y, r, &mut s);
            if bad.is_none() && !all_finite(y) {
                bad = Some(base + k);
            }
        }
        bad
    };
    if use_parallel(rngs.len()) {
        fast.par_chunks_mut(CHUNK * m)
            .zip(rngs.par_chunks_mut(CHUNK))
            .enumerate()
            .filter_map(|(c, (ys, rs))| run_chunk(c * CHUNK, ys, rs))
            .min()
    } else {
        run_chunk(0, fast, rngs)
    }
}

/// Advances every pair with [`advance_pair`], or its scalar form when the
/// model is one-dimensional throughout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn advance_all<M: MeanFieldModel>(
    dims: &Dims,
    model: &M,
    law: &M::Law,
    coef: &StepCoef,
    control: Option<&ControlTerm<'_>>,
    slow: &mut Ensemble,
    fast: &mut Ensemble,
    streams: &mut NoiseStreams,
) -> Option<usize> {
    let scalar = dims.slow == 1 && dims.fast == 1 && dims.slow_noise == 1 && dims.fast_noise == 1;
    if scalar {
        update_pairs(dims, slow.data_mut(), fast.data_mut(), streams.as_mut_slice(), |x, y, r, _| {
            advance_scalar_pair(model, law, coef, control, &mut x[0], &mut y[0], r)
        })
    } else {
        update_pairs(dims, slow.data_mut(), fast.data_mut(), streams.as_mut_slice(), |x, y, r, s| {
            advance_pair(model, law, coef, control, x, y, r, s)
        })
    }
}

pub(crate) fn check_pairing(slow: &Ensemble, fast: &Ensemble, streams: &NoiseStreams) -> Result<()> {
    if slow.count() != fast.count() {
        return Err(Error::DimensionMismatch {
            expected: slow.count(),
            got: fast.count(),
        });
    }
    if streams.len() != slow.count() {
        return Err(Error::DimensionMismatch {
            expected: slow.count(),
            got: streams.len(),
        });
    }
    Ok(())
}

/// One Euler-Maruyama step of the coupled system, in place.
pub fn step_coupled<M: MeanFieldModel>(
    slow: &mut Ensemble,
    fast: &mut Ensemble,
    model: &M,
    ts: &TimeScales,
    cfg: &SimConfig,
    dt: f64,
    streams: &mut NoiseStreams,
) -> Result<()> {
    let dims = model.dims();
    check_dims(&dims, slow, fast)?;
    check_pairing(slow, fast, streams)?;
    let max = cfg.fast_substep_factor * ts.delta;
    if !(dt > 0.0) || dt > max * (1.0 + 1e-12) {
        return Err(Error::config(format!(
            "step {dt} exceeds theta*delta = {max}"
        )));
    }
    step_unchecked(slow, fast, model, &StepCoef::coupled(ts, dt, cfg.taming), None, streams)
}

pub(crate) fn step_unchecked<M: MeanFieldModel>(
    slow: &mut Ensemble,
    fast: &mut Ensemble,
    model: &M,
    coef: &StepCoef,
    control: Option<&ControlTerm<'_>>,
    streams: &mut NoiseStreams,
) -> Result<()> {
    let dims = model.dims();
    let law = model.law(slow, fast)?;
    let bad = advance_all(&dims, model, &law, coef, control, slow, fast, streams);
    match bad {
        Some(index) => Err(Error::NonFiniteState { index }),
        None => Ok(()),
    }
}

/// Recorded slow and fast ensembles on the macro grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPath {
    pub slow: PathGrid,
    pub fast: PathGrid,
}

/// Integrates from `(slow0, fast0)` over `cfg.horizon`, calling `observer`
/// at `t = 0` and after every macro interval. Replication `rep` selects the
/// noise streams.
pub fn simulate_with<M, F>(
    slow0: &Ensemble,
    fast0: &Ensemble,
    model: &M,
    ts: &TimeScales,
    cfg: &SimConfig,
    rep: u64,
    mut observer: F,
) -> Result<()>
where
    M: MeanFieldModel,
    F: FnMut(usize, f64, &Ensemble, &Ensemble) -> Result<()>,
{
    ts.validate()?;
    let plan = cfg.plan(ts)?;
    check_dims(&model.dims(), slow0, fast0)?;
    let mut slow = slow0.clone();
    let mut fast = fast0.clone();
    let mut streams = NoiseStreams::new(
        derive_seed(cfg.seed, Purpose::Coupled, &[rep]),
        slow.count(),
    );
    check_pairing(&slow, &fast, &streams)?;
    let coef = StepCoef::coupled(ts, plan.dt, cfg.taming);
    observer(0, 0.0, &slow, &fast)?;
    for k in 1..=plan.macro_steps {
        let t0 = (k - 1) as f64 * plan.dt_macro;
        for j in 0..plan.substeps {
            step_unchecked(&mut slow, &mut fast, model, &coef, None, &mut streams)
                .map_err(|e| e.at(t0 + (j + 1) as f64 * plan.dt))?;
        }
        let t = k as f64 * plan.dt_macro;
        observer(k, t, &slow, &fast).map_err(|e| e.at(t))?;
    }
    Ok(())
}

/// Full recorded trajectory of replication 0.
pub fn simulate<M: MeanFieldModel>(
    slow0: &Ensemble,
    fast0: &Ensemble,
    model: &M,
    ts: &TimeScales,
    cfg: &SimConfig,
) -> Result<SimulatedPath> {
    simulate_rep(slow0, fast0, model, ts, cfg, 0)
}

pub fn simulate_rep<M: MeanFieldModel>(
    slow0: &Ensemble,
    fast0: &Ensemble,
    model: &M,
    ts: &TimeScales,
    cfg: &SimConfig,
    rep: u64,
) -> Result<SimulatedPath> {
    let mut slow = Vec::new();
    let mut fast = Vec::new();
    simulate_with(slow0, fast0, model, ts, cfg, rep, |_, _, x, y| {
        slow.push(x.clone());
        fast.push(y.clone());
        Ok(())
    })?;
    let times = uniform_times(cfg.dt_macro, slow.len() - 1);
    Ok(SimulatedPath {
        slow: PathGrid::new(times.clone(), slow)?,
        fast: PathGrid::new(times, fast)?,
    })
}
