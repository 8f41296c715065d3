//! Frozen fast dynamics: the fast equation at unit speed with the slow law
//! held fixed,
//!
//! ```text
//! dY = f(mu, Y, L_Y) dt + g(mu, Y, L_Y) dW
//! ```
//!
//! its invariant measure `nu^mu`, the lifted (tagged particle, flow law) pair,
//! synchronous-coupling contraction rates and the averaged drift
//! `b_bar(x, mu) = int b(x, mu, z, nu^mu) nu^mu(dz)`.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, RwLock};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::measures::{second_moment, wasserstein2, wasserstein2_with, W2Options};
use crate::model::MeanFieldModel;
use crate::path::{steps_in, uniform_times, PathGrid};
use crate::rng::{derive_seed, fill_normal, generator, NoiseStreams, Purpose};
use crate::sde::{advance_fast, update_fast, StepCoef, Taming};

fn check_fast_dim<M: MeanFieldModel>(model: &M, mu: &Ensemble, fast: &Ensemble) -> Result<()> {
    let d = model.dims();
    if mu.dim() != d.slow {
        return Err(Error::DimensionMismatch {
            expected: d.slow,
            got: mu.dim(),
        });
    }
    if fast.dim() != d.fast {
        return Err(Error::DimensionMismatch {
            expected: d.fast,
            got: fast.dim(),
        });
    }
    Ok(())
}

fn check_frozen_step(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(Error::config(format!(
            "frozen step must lie in (0, 1], got {dt}"
        )));
    }
    Ok(())
}

/// One step of the self-interacting frozen system, in place.
fn frozen_step<M: MeanFieldModel>(
    model: &M,
    mu: &Ensemble,
    fast: &mut Ensemble,
    coef: &StepCoef,
    streams: &mut NoiseStreams,
) -> Result<M::Law> {
    let law = model.law(mu, fast)?;
    advance_with_law(model, &law, fast, coef, streams)?;
    Ok(law)
}

fn advance_with_law<M: MeanFieldModel>(
    model: &M,
    law: &M::Law,
    fast: &mut Ensemble,
    coef: &StepCoef,
    streams: &mut NoiseStreams,
) -> Result<()> {
    let dims = model.dims();
    let bad = update_fast(&dims, fast.data_mut(), streams.as_mut_slice(), |y, r, s| {
        advance_fast(model, law, coef, y, r, s)
    });
    match bad {
        Some(index) => Err(Error::NonFiniteState { index }),
        None => Ok(()),
    }
}

/// Runs the frozen system for `steps` steps of size `dt`, recording every
/// `record_every` steps (and the initial state).
#[allow(clippy::too_many_arguments)]
pub fn simulate_frozen<M: MeanFieldModel>(
    model: &M,
    mu: &Ensemble,
    gamma0: &Ensemble,
    steps: usize,
    dt: f64,
    record_every: usize,
    taming: Taming,
    seed: u64,
) -> Result<PathGrid> {
    check_fast_dim(model, mu, gamma0)?;
    check_frozen_step(dt)?;
    let every = record_every.max(1);
    let coef = StepCoef::unit_fast(dt, taming);
    let mut streams = NoiseStreams::new(derive_seed(seed, Purpose::Frozen, &[]), gamma0.count());
    let mut fast = gamma0.clone();
    let mut snaps = vec![fast.clone()];
    for k in 1..=steps {
        frozen_step(model, mu, &mut fast, &coef, &mut streams).map_err(|e| e.at(k as f64 * dt))?;
        if k % every == 0 {
            snaps.push(fast.clone());
        }
    }
    let times = uniform_times(dt * every as f64, snaps.len() - 1);
    PathGrid::new(times, snaps)
}

/// Settings of the invariant-measure solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantConfig {
    #[serde(default = "default_inv_particles")]
    pub n_particles: usize,
    /// Stop once consecutive lagged snapshots are this close in W2.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Lag `tau` between compared snapshots.
    #[serde(default = "default_lag")]
    pub check_lag: f64,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    #[serde(default = "default_frozen_dt")]
    pub dt: f64,
    #[serde(default)]
    pub taming: Taming,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the default Gaussian initial ensemble.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_inv_particles() -> usize {
    2000
}
fn default_tol() -> f64 {
    0.05
}
fn default_lag() -> f64 {
    1.0
}
fn default_max_time() -> f64 {
    200.0
}
fn default_frozen_dt() -> f64 {
    0.1
}
fn default_init_scale() -> f64 {
    1.0
}

impl Default for InvariantConfig {
    fn default() -> Self {
        Self {
            n_particles: default_inv_particles(),
            tol: default_tol(),
            check_lag: default_lag(),
            max_time: default_max_time(),
            dt: default_frozen_dt(),
            taming: Taming::None,
            seed: 0,
            init_scale: default_init_scale(),
        }
    }
}

impl InvariantConfig {
    pub fn validate(&self) -> Result<()> {
        check_frozen_step(self.dt)?;
        if self.n_particles == 0 {
            return Err(Error::config("invariant solver needs at least one particle"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("invariant tolerance must be positive"));
        }
        if !(self.check_lag > 0.0 && self.max_time >= self.check_lag) {
            return Err(Error::config("need 0 < check_lag <= max_time"));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::config("init_scale must be non-negative"));
        }
        Ok(())
    }
}

/// Particle approximation of `nu^mu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantEnsemble {
    pub measure: Ensemble,
    pub frozen_mu: Ensemble,
    pub converged: bool,
    /// Last lagged W2 when converged, best seen otherwise.
    pub w2_residual: f64,
    pub burn_in_time: f64,
    pub tol: f64,
}

/// Gaussian start `N(0, scale^2 I)` of `count` particles.
pub fn gaussian_ensemble(dim: usize, count: usize, scale: f64, seed: u64) -> Result<Ensemble> {
    let mut rng: ChaCha8Rng = generator(seed);
    let mut data = vec![0.0; dim * count];
    fill_normal(&mut rng, &mut data);
    data.iter_mut().for_each(|v| *v *= scale);
    Ensemble::new(dim, data)
}

/// Runs the frozen system until two consecutive lagged-snapshot checks
/// `W2(Y_t, Y_{t+tau}) <= tol` pass, or `max_time` is reached. The initial
/// ensemble is `gamma0` when given, a Gaussian draw otherwise.
pub fn invariant_measure<M: MeanFieldModel>(
    model: &M,
    mu: &Ensemble,
    cfg: &InvariantConfig,
    gamma0: Option<&Ensemble>,
) -> Result<InvariantEnsemble> {
    invariant_measure_seeded(model, mu, cfg, gamma0, cfg.seed)
}

fn invariant_measure_seeded<M: MeanFieldModel>(
    model: &M,
    mu: &Ensemble,
    cfg: &InvariantConfig,
    gamma0: Option<&Ensemble>,
    seed: u64,
) -> Result<InvariantEnsemble> {
    cfg.validate()?;
    let dims = model.dims();
    let mut fast = match gamma0 {
        Some(g) => g.clone(),
        None => gaussian_ensemble(
            dims.fast,
            cfg.n_particles,
            cfg.init_scale,
            derive_seed(seed, Purpose::Init, &[]),
        )?,
    };
    check_fast_dim(model, mu, &fast)?;
    let lag_steps = steps_in(cfg.check_lag, cfg.dt)?;
    let checks = (cfg.max_time / cfg.check_lag).floor().max(1.0) as usize;
    let coef = StepCoef::unit_fast(cfg.dt, cfg.taming);
    let mut streams = NoiseStreams::new(derive_seed(seed, Purpose::Invariant, &[]), fast.count());
    let opts = W2Options {
        seed: derive_seed(seed, Purpose::Projection, &[]),
        ..W2Options::default()
    };
    let mut previous = fast.clone();
    let mut best = f64::INFINITY;
    let mut passes = 0;
    for c in 1..=checks {
        for j in 0..lag_steps {
            let t = ((c - 1) * lag_steps + j + 1) as f64 * cfg.dt;
            frozen_step(model, mu, &mut fast, &coef, &mut streams).map_err(|e| e.at(t))?;
        }
        let r = wasserstein2_with(&previous, &fast, &opts)?.value;
        best = best.min(r);
        passes = if r <= cfg.tol { passes + 1 } else { 0 };
        if passes >= 2 {
            return Ok(InvariantEnsemble {
                measure: fast,
                frozen_mu: mu.clone(),
                converged: true,
                w2_residual: r,
                burn_in_time: c as f64 * cfg.check_lag,
                tol: cfg.tol,
            });
        }
        previous.clone_from(&fast);
    }
    Ok(InvariantEnsemble {
        measure: fast,
        frozen_mu: mu.clone(),
        converged: false,
        w2_residual: best,
        burn_in_time: checks as f64 * cfg.check_lag,
        tol: cfg.tol,
    })
}

fn sorted_key(mu: &Ensemble) -> u64 {
    let mut pts: Vec<&[f64]> = mu.particles().collect();
    pts.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut h = std::collections::hash_map::DefaultHasher::new();
    mu.dim().hash(&mut h);
    for p in pts {
        for v in p {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Reuse threshold `0.05 (1 + M2(mu)^(1/2))` for the W2 distance between a
/// requested slow law and a cached one.
pub fn reuse_threshold(mu: &Ensemble) -> f64 {
    0.05 * (1.0 + second_moment(mu).sqrt())
}

/// Cache statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub exact_hits: usize,
    pub near_hits: usize,
    pub solves: usize,
}

/// Invariant ensembles keyed by a hash of the sorted slow law, with reuse of
/// nearby entries and warm starts from the nearest one.
#[derive(Debug, Default)]
pub struct InvariantCache {
    inner: RwLock<CacheInner>,
}

#[derive(Debug, Default)]
struct CacheInner {
    by_key: HashMap<u64, usize>,
    entries: Vec<Arc<InvariantEnsemble>>,
    stats: CacheStats,
}

impl InvariantCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        self.inner.read().expect("cache lock").stats
    }

    /// The invariant ensemble for `mu`: an exact hit, a cached entry within
    /// [`reuse_threshold`], or a fresh solve warm-started from the nearest
    /// entry. Unconverged solves are an error.
    pub fn get_or_solve<M: MeanFieldModel>(
        &self,
        model: &M,
        mu: &Ensemble,
        cfg: &InvariantConfig,
    ) -> Result<Arc<InvariantEnsemble>> {
        let key = sorted_key(mu);
        let nearest = {
            let mut g = self.inner.write().expect("cache lock");
            if let Some(&i) = g.by_key.get(&key) {
                if g.entries[i].frozen_mu.dim() == mu.dim() {
                    g.stats.exact_hits += 1;
                    return Ok(g.entries[i].clone());
                }
            }
            let mut nearest: Option<(f64, Arc<InvariantEnsemble>)> = None;
            for e in &g.entries {
                if e.frozen_mu.dim() != mu.dim() {
                    continue;
                }
                let d = wasserstein2(&e.frozen_mu, mu)?.value;
                if nearest.as_ref().is_none_or(|(b, _)| d < *b) {
                    nearest = Some((d, e.clone()));
                }
            }
            if let Some((d, e)) = &nearest {
                if *d <= reuse_threshold(mu) {
                    g.stats.near_hits += 1;
                    return Ok(e.clone());
                }
            }
            nearest
        };
        let warm = nearest.as_ref().map(|(_, e)| &e.measure);
        let seed = derive_seed(cfg.seed, Purpose::Invariant, &[key]);
        let inv = invariant_measure_seeded(model, mu, cfg, warm, seed)?;
        if !inv.converged {
            return Err(Error::NotConverged {
                residual: inv.w2_residual,
            });
        }
        let inv = Arc::new(inv);
        let mut g = self.inner.write().expect("cache lock");
        g.stats.solves += 1;
        let idx = g.entries.len();
        g.entries.push(inv.clone());
        g.by_key.insert(key, idx);
        Ok(inv)
    }
}

/// Noise of the tagged copies in [`lifted_pair_simulate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggedNoise {
    Independent,
    /// Every tagged copy reuses the noise of flow particle `i`.
    SharedWith(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftedConfig {
    pub horizon: f64,
    #[serde(default = "default_frozen_dt")]
    pub dt: f64,
    #[serde(default = "default_tagged")]
    pub n_tagged: usize,
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default = "default_tagged_noise")]
    pub noise: TaggedNoise,
    #[serde(default)]
    pub taming: Taming,
    #[serde(default)]
    pub seed: u64,
}

fn default_tagged() -> usize {
    1024
}
fn default_record() -> usize {
    1
}
fn default_tagged_noise() -> TaggedNoise {
    TaggedNoise::Independent
}

impl LiftedConfig {
    pub fn new(horizon: f64, dt: f64, seed: u64) -> Self {
        Self {
            horizon,
            dt,
            n_tagged: default_tagged(),
            record_every: default_record(),
            noise: TaggedNoise::Independent,
            taming: Taming::None,
            seed,
        }
    }
}

/// The tagged copies and the flow law at one recorded time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedPairSample {
    pub time: f64,
    pub tagged: Ensemble,
    pub flow_law: Ensemble,
}

/// Co-evolves the self-interacting flow started from `gamma0` and
/// `cfg.n_tagged` copies started at `tagged_y`, which see the flow's law but
/// do not contribute to it.
pub fn lifted_pair_simulate<M: MeanFieldModel>(
    model: &M,
    mu: &Ensemble,
    gamma0: &Ensemble,
    tagged_y: &[f64],
    cfg: &LiftedConfig,
) -> Result<Vec<LiftedPairSample>> {
    check_fast_dim(model, mu, gamma0)?;
    check_frozen_step(cfg.dt)?;
    if tagged_y.len() != gamma0.dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma0.dim(),
            got: tagged_y.len(),
        });
    }
    if cfg.n_tagged == 0 {
        return Err(Error::config("need at least one tagged copy"));
    }
    let steps = steps_in(cfg.horizon, cfg.dt)?;
    let every = cfg.record_every.max(1);
    let coef = StepCoef::unit_fast(cfg.dt, cfg.taming);
    let mut flow_streams = NoiseStreams::new(derive_seed(cfg.seed, Purpose::Frozen, &[]), gamma0.count());
    let mut tagged_streams = match cfg.noise {
        TaggedNoise::Independent => {
            NoiseStreams::new(derive_seed(cfg.seed, Purpose::Tagged, &[]), cfg.n_tagged)
        }
        TaggedNoise::SharedWith(i) => {
            if i >= gamma0.count() {
                return Err(Error::config(format!(
                    "shared noise index {i} out of range for {} flow particles",
                    gamma0.count()
                )));
            }
            NoiseStreams::from_streams(vec![flow_streams.stream(i).clone(); cfg.n_tagged])
        }
    };
    let mut flow = gamma0.clone();
    let mut tagged = Ensemble::dirac(tagged_y, cfg.n_tagged)?;
    let mut out = vec![LiftedPairSample {
        time: 0.0,
        tagged: tagged.clone(),
        flow_law: flow.clone(),
    }];
    for k in 1..=steps {
        let t = k as f64 * cfg.dt;
        let law = model.law(mu, &flow).map_err(|e| e.at(t))?;
        advance_with_law(model, &law, &mut flow, &coef, &mut flow_streams).map_err(|e| e.at(t))?;
        advance_with_law(model, &law, &mut tagged, &coef, &mut tagged_streams).map_err(|e| e.at(t))?;
        if k % every == 0 {
            out.push(LiftedPairSample {
                time: t,
                tagged: tagged.clone(),
                flow_law: flow.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicityConfig {
    pub horizon: f64,
    #[serde(default = "default_frozen_dt")]
    pub dt: f64,
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default)]
    pub taming: Taming,
    #[serde(default)]
    pub seed: u64,
}

/// Fitted exponential contraction `W2(t) ~ A exp(-rate t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub log_intercept: f64,
    pub times: Vec<f64>,
    pub w2: Vec<f64>,
    /// Leading points used by the fit.
    pub used: usize,
}

/// Contraction rate of two copies of the frozen system driven by the same
/// noise. Fits `log W2` against `t` on the leading points above the floor
/// `max(1e-10, 1e-8 W2(0))`.
pub fn ergodicity_rate<M: MeanFieldModel>(
    model: &M,
    mu: &Ensemble,
    init1: &Ensemble,
    init2: &Ensemble,
    cfg: &ErgodicityConfig,
) -> Result<RateFit> {
    check_fast_dim(model, mu, init1)?;
    check_fast_dim(model, mu, init2)?;
    check_frozen_step(cfg.dt)?;
    if init1.count() != init2.count() {
        return Err(Error::DimensionMismatch {
            expected: init1.count(),
            got: init2.count(),
        });
    }
    let steps = steps_in(cfg.horizon, cfg.dt)?;
    let every = cfg.record_every.max(1);
    let coef = StepCoef::unit_fast(cfg.dt, cfg.taming);
    let mut s1 = NoiseStreams::new(derive_seed(cfg.seed, Purpose::Frozen, &[]), init1.count());
    let mut s2 = s1.clone();
    let (mut a, mut b) = (init1.clone(), init2.clone());
    let opts = W2Options {
        seed: derive_seed(cfg.seed, Purpose::Projection, &[]),
        ..W2Options::default()
    };
    let mut times = vec![0.0];
    let mut w2 = vec![wasserstein2_with(&a, &b, &opts)?.value];
    for k in 1..=steps {
        let t = k as f64 * cfg.dt;
        frozen_step(model, mu, &mut a, &coef, &mut s1).map_err(|e| e.at(t))?;
        frozen_step(model, mu, &mut b, &coef, &mut s2).map_err(|e| e.at(t))?;
        if k % every == 0 {
            times.push(t);
            w2.push(wasserstein2_with(&a, &b, &opts)?.value);
        }
    }
    let floor = 1e-10_f64.max(1e-8 * w2[0]);
    let used = w2.iter().take_while(|&&w| w > floor && w.is_finite()).count();
    if used < 3 {
        return Err(Error::DegenerateFit(format!(
            "only {used} points above the noise floor {floor:e}"
        )));
    }
    let logs: Vec<f64> = w2[..used].iter().map(|w| w.ln()).collect();
    let (slope, intercept) = ols(&times[..used], &logs).ok_or_else(|| {
        Error::DegenerateFit("recorded times do not vary".to_string())
    })?;
    Ok(RateFit {
        rate: -slope,
        log_intercept: intercept,
        times,
        w2,
        used,
    })
}

/// Ordinary least squares `y = slope x + intercept`.
pub(crate) fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 1e-300) || sxx <= 1e-14 * x.iter().map(|v| v * v).sum::<f64>() {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// `(1/N) sum_z b(x, mu, z, nu)` over the particles `z` of `inv.measure`.
/// Fails on an unconverged ensemble unless `allow_unconverged`.
pub fn averaged_drift<M: MeanFieldModel>(
    model: &M,
    x: &[f64],
    mu: &Ensemble,
    inv: &InvariantEnsemble,
    allow_unconverged: bool,
) -> Result<Vec<f64>> {
    if !inv.converged && !allow_unconverged {
        return Err(Error::NotConverged {
            residual: inv.w2_residual,
        });
    }
    check_fast_dim(model, mu, &inv.measure)?;
    if x.len() != model.dims().slow {
        return Err(Error::DimensionMismatch {
            expected: model.dims().slow,
            got: x.len(),
        });
    }
    let law = model.law(mu, &inv.measure)?;
    Ok(drift_average(model, &law, x, &inv.measure))
}

pub(crate) fn drift_average<M: MeanFieldModel>(
    model: &M,
    law: &M::Law,
    x: &[f64],
    measure: &Ensemble,
) -> Vec<f64> {
    let n = x.len();
    let mut acc = vec![0.0; n];
    let mut b = vec![0.0; n];
    for z in measure.particles() {
        model.slow_drift(law, x, z, &mut b);
        for (a, v) in acc.iter_mut().zip(&b) {
            *a += v;
        }
    }
    let c = measure.count() as f64;
    acc.iter_mut().for_each(|v| *v /= c);
    acc
}
