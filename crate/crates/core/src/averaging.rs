//! The averaged slow equation `dX/dt = b_bar(X, L_X)` and Monte Carlo
//! estimates of `E sup_t |X^eps_t - X_bar_t|^2` across time scales.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, TimeScales};
use crate::error::{Error, Result};
use crate::frozen::{drift_average, ols, InvariantCache, InvariantConfig, InvariantEnsemble};
use crate::measures::sq_dist;
use crate::model::MeanFieldModel;
use crate::path::{steps_in, uniform_times, PathGrid};
use crate::rng::{derive_seed, generator, Purpose};
use crate::sde::{simulate_with, SimConfig};

/// Initial condition of the averaged equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragedInit {
    /// Deterministic start; the law along the path is a Dirac mass.
    Point(Vec<f64>),
    /// Random start; the ODE paths interact through their empirical law.
    Ensemble(Ensemble),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragedConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Record every this many Euler steps.
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub invariant: InvariantConfig,
}

fn one() -> usize {
    1
}

/// The averaged path and the invariant ensemble used at each recorded time.
#[derive(Clone, Debug)]
pub struct AveragedPath {
    pub grid: PathGrid,
    pub invariants: Vec<Arc<InvariantEnsemble>>,
}

/// Explicit Euler for the averaged equation, with `b_bar` evaluated on cached
/// invariant ensembles.
pub fn solve_averaged<M: MeanFieldModel>(
    model: &M,
    init: &AveragedInit,
    cfg: &AveragedConfig,
    cache: &InvariantCache,
) -> Result<AveragedPath> {
    if !(cfg.dt > 0.0) {
        return Err(Error::config("averaged step must be positive"));
    }
    let steps = steps_in(cfg.horizon, cfg.dt)?;
    let every = cfg.record_every.max(1);
    if steps % every != 0 {
        return Err(Error::config("record_every must divide the number of averaged steps"));
    }
    let mut x = match init {
        AveragedInit::Point(p) => Ensemble::dirac(p, 1)?,
        AveragedInit::Ensemble(e) => e.clone(),
    };
    if x.dim() != model.dims().slow {
        return Err(Error::DimensionMismatch {
            expected: model.dims().slow,
            got: x.dim(),
        });
    }
    let n = x.dim();
    let mut snaps = Vec::with_capacity(steps / every + 1);
    let mut invariants = Vec::with_capacity(steps / every + 1);
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let inv = cache
            .get_or_solve(model, &x, &cfg.invariant)
            .map_err(|e| e.at(t))?;
        if k % every == 0 {
            snaps.push(x.clone());
            invariants.push(inv.clone());
        }
        if k == steps {
            break;
        }
        let law = model.law(&x, &inv.measure).map_err(|e| e.at(t))?;
        let drifts: Vec<Vec<f64>> = x
            .particles()
            .map(|p| drift_average(model, &law, p, &inv.measure))
            .collect();
        let data = x.data_mut();
        for (i, d) in drifts.iter().enumerate() {
            for (v, b) in data[i * n..(i + 1) * n].iter_mut().zip(d) {
                *v += b * cfg.dt;
            }
        }
        if let Some(index) = x.first_non_finite() {
            return Err(Error::NonFiniteState { index }.at(t + cfg.dt));
        }
    }
    let times = uniform_times(cfg.dt * every as f64, snaps.len() - 1);
    Ok(AveragedPath {
        grid: PathGrid::new(times, snaps)?,
        invariants,
    })
}

/// Initial fast ensemble of an averaging-error replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastInit {
    /// All particles at one point.
    Point(Vec<f64>),
    /// Independent `N(0, scale^2 I)` draws.
    Gaussian(f64),
    /// Resampled from the invariant ensemble at the initial slow law.
    Invariant,
}

impl Default for FastInit {
    fn default() -> Self {
        FastInit::Gaussian(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingConfig {
    pub sim: SimConfig,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub fast_init: FastInit,
    #[serde(default)]
    pub invariant: InvariantConfig,
    /// Step of the averaged ODE; defaults to `sim.dt_macro / 10`.
    #[serde(default)]
    pub averaged_dt: Option<f64>,
}

impl AveragingConfig {
    fn averaged_config(&self) -> Result<AveragedConfig> {
        let dt = self.averaged_dt.unwrap_or(self.sim.dt_macro / 10.0);
        let every = steps_in(self.sim.dt_macro, dt)?;
        Ok(AveragedConfig {
            horizon: self.sim.horizon,
            dt,
            record_every: every,
            invariant: self.invariant.clone(),
        })
    }

    /// The averaged path on the recording grid of `sim`.
    pub fn averaged_path<M: MeanFieldModel>(&self, model: &M, cache: &InvariantCache) -> Result<AveragedPath> {
        solve_averaged(model, &AveragedInit::Point(self.x0.clone()), &self.averaged_config()?, cache)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragingError {
    pub estimate: f64,
    pub std_error: f64,
    /// Per replication: particle mean of the grid sup of `|X_i - X_bar|^2`.
    pub per_rep: Vec<f64>,
}

fn fast_start(
    init: &FastInit,
    fast_dim: usize,
    count: usize,
    rep: u64,
    seed: u64,
    inv0: &InvariantEnsemble,
) -> Result<Ensemble> {
    match init {
        FastInit::Point(p) => {
            if p.len() != fast_dim {
                return Err(Error::DimensionMismatch {
                    expected: fast_dim,
                    got: p.len(),
                });
            }
            Ensemble::dirac(p, count)
        }
        FastInit::Gaussian(scale) => {
            let mut rng = generator(derive_seed(seed, Purpose::Init, &[rep]));
            let data = (0..fast_dim * count)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>();
            Ensemble::new(fast_dim, data)
        }
        FastInit::Invariant => {
            let mut rng = generator(derive_seed(seed, Purpose::Init, &[rep]));
            let src = &inv0.measure;
            let mut data = Vec::with_capacity(fast_dim * count);
            for _ in 0..count {
                let j = rand::Rng::random_range(&mut rng, 0..src.count());
                data.extend_from_slice(src.particle(j));
            }
            Ensemble::new(fast_dim, data)
        }
    }
}

/// Mean and standard error over `sim.n_reps >= 2` replications. `averaged`
/// may supply a precomputed averaged path on the recording grid.
pub fn averaging_error<M: MeanFieldModel>(
    model: &M,
    ts: &TimeScales,
    cfg: &AveragingConfig,
    averaged: Option<&AveragedPath>,
) -> Result<AveragingError> {
    ts.validate()?;
    cfg.sim.validate()?;
    if cfg.sim.n_reps < 2 {
        return Err(Error::config("averaging error needs at least two replications"));
    }
    let dims = model.dims();
    if cfg.x0.len() != dims.slow {
        return Err(Error::DimensionMismatch {
            expected: dims.slow,
            got: cfg.x0.len(),
        });
    }
    let owned;
    let avg = match averaged {
        Some(a) => a,
        None => {
            owned = cfg.averaged_path(model, &InvariantCache::new())?;
            &owned
        }
    };
    let macro_steps = steps_in(cfg.sim.horizon, cfg.sim.dt_macro)?;
    if avg.grid.len() != macro_steps + 1 || (avg.grid.step() - cfg.sim.dt_macro).abs() > 1e-9 * cfg.sim.dt_macro {
        return Err(Error::config("averaged path does not match the recording grid"));
    }
    let bar: Vec<Vec<f64>> = avg.grid.points();
    let slow0 = Ensemble::dirac(&cfg.x0, cfg.sim.n_particles)?;
    let per_rep = (0..cfg.sim.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let fast0 = fast_start(
                &cfg.fast_init,
                dims.fast,
                cfg.sim.n_particles,
                rep,
                cfg.sim.seed,
                &avg.invariants[0],
            )?;
            let mut sup = vec![0.0_f64; cfg.sim.n_particles];
            simulate_with(&slow0, &fast0, model, ts, &cfg.sim, rep, |k, _, slow, _| {
                for (s, x) in sup.iter_mut().zip(slow.particles()) {
                    *s = s.max(sq_dist(x, &bar[k]));
                }
                Ok(())
            })?;
            Ok(sup.iter().sum::<f64>() / sup.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (estimate, std_error) = mean_and_se(&per_rep);
    Ok(AveragingError {
        estimate,
        std_error,
        per_rep,
    })
}

pub(crate) fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// How `delta` follows `epsilon` across a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaPolicy {
    /// `delta = scale * epsilon^exponent`
    Power { exponent: f64, scale: f64 },
    Fixed { delta: f64 },
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::Power {
            exponent: 3.0,
            scale: 1.0,
        }
    }
}

impl DeltaPolicy {
    pub fn delta(&self, epsilon: f64) -> f64 {
        match *self {
            DeltaPolicy::Power { exponent, scale } => scale * epsilon.powf(exponent),
            DeltaPolicy::Fixed { delta } => delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub epsilon: f64,
    pub delta: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub error: Option<String>,
}

impl RateCell {
    /// `epsilon + delta^(1/3)`
    pub fn scale(&self) -> f64 {
        self.epsilon + self.delta.cbrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub cells: Vec<RateCell>,
    /// Slope of `log estimate` against `log(epsilon + delta^(1/3))`.
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_samples: usize,
}

/// Parametric bootstrap draws for the slope confidence interval.
pub const BOOTSTRAP_SAMPLES: usize = 2000;

impl RateReport {
    /// Whether the estimates never increase as the scale shrinks, beyond
    /// `k` joint standard errors.
    pub fn monotone_within(&self, k: f64) -> bool {
        let mut ok: Vec<&RateCell> = self.cells.iter().filter(|c| c.error.is_none()).collect();
        ok.sort_by(|a, b| a.scale().total_cmp(&b.scale()));
        ok.windows(2).all(|w| {
            let joint = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[0].estimate <= w[1].estimate + k * joint
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epsilon", "delta", "estimate", "std_error"])?;
        for c in self.cells.iter().filter(|c| c.error.is_none()) {
            out.write_record([
                format!("{:?}", c.epsilon),
                format!("{:?}", c.delta),
                format!("{:?}", c.estimate),
                format!("{:?}", c.std_error),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs [`averaging_error`] on every `epsilon` (cells seeded independently)
/// and fits the convergence exponent.
pub fn rate_sweep<M: MeanFieldModel>(
    model: &M,
    eps_grid: &[f64],
    policy: &DeltaPolicy,
    separation: f64,
    cfg: &AveragingConfig,
) -> Result<RateReport> {
    if eps_grid.len() < 4 {
        return Err(Error::config("rate sweep needs at least four grid points"));
    }
    let cache = InvariantCache::new();
    let averaged = cfg.averaged_path(model, &cache)?;
    let mut cells = Vec::with_capacity(eps_grid.len());
    for (i, &epsilon) in eps_grid.iter().enumerate() {
        let delta = policy.delta(epsilon);
        let mut cell_cfg = cfg.clone();
        cell_cfg.sim.seed = derive_seed(cfg.sim.seed, Purpose::Cell, &[i as u64]);
        let res = TimeScales::new(epsilon, delta, separation)
            .and_then(|ts| averaging_error(model, &ts, &cell_cfg, Some(&averaged)));
        cells.push(match res {
            Ok(e) => RateCell {
                epsilon,
                delta,
                estimate: e.estimate,
                std_error: e.std_error,
                error: None,
            },
            Err(e) => {
                log::warn!("rate sweep cell epsilon = {epsilon}: {e}");
                RateCell {
                    epsilon,
                    delta,
                    estimate: f64::NAN,
                    std_error: f64::NAN,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    fit_rate(cells, cfg.sim.seed)
}

/// OLS slope of `log estimate` on `log scale` plus a parametric bootstrap
/// 95% interval drawing `log estimate + (se/estimate) Z` per cell.
pub fn fit_rate(cells: Vec<RateCell>, seed: u64) -> Result<RateReport> {
    let ok: Vec<&RateCell> = cells
        .iter()
        .filter(|c| c.error.is_none() && c.estimate > 0.0 && c.estimate.is_finite())
        .collect();
    if ok.len() < 3 {
        return Err(Error::DegenerateRegression(format!(
            "only {} usable cells",
            ok.len()
        )));
    }
    let x: Vec<f64> = ok.iter().map(|c| c.scale().ln()).collect();
    let y: Vec<f64> = ok.iter().map(|c| c.estimate.ln()).collect();
    let (slope, intercept) = ols(&x, &y).ok_or_else(|| {
        Error::DegenerateRegression("all cells share the same time scales".to_string())
    })?;
    let rel: Vec<f64> = ok
        .iter()
        .map(|c| if c.std_error.is_finite() { c.std_error / c.estimate } else { 0.0 })
        .collect();
    let mut rng = generator(derive_seed(seed, Purpose::Bootstrap, &[]));
    let mut slopes = Vec::with_capacity(BOOTSTRAP_SAMPLES);
    let mut yb = vec![0.0; y.len()];
    for _ in 0..BOOTSTRAP_SAMPLES {
        for ((b, v), r) in yb.iter_mut().zip(&y).zip(&rel) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *b = v + r * z;
        }
        if let Some((s, _)) = ols(&x, &yb) {
            slopes.push(s);
        }
    }
    slopes.sort_by(f64::total_cmp);
    let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    Ok(RateReport {
        slope,
        intercept,
        ci_low: q(0.025),
        ci_high: q(0.975),
        bootstrap_samples: slopes.len(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, FnModel};
    use crate::zoo::linear_benchmark_model;

    #[test]
    fn linear_averaged_path_matches_exponential() {
        let m = linear_benchmark_model(1.0, 0.0, 1.0, 1.0).unwrap();
        let cfg = AveragedConfig {
            horizon: 1.0,
            dt: 1e-3,
            record_every: 10,
            invariant: InvariantConfig {
                n_particles: 2000,
                ..Default::default()
            },
        };
        let p = solve_averaged(&m, &AveragedInit::Point(vec![1.0]), &cfg, &InvariantCache::new()).unwrap();
        assert_eq!(p.grid.len(), 101);
        let end = p.grid.last().particle(0)[0];
        assert!((end - (-1.0f64).exp()).abs() < 1e-3);
        assert_eq!(p.invariants.len(), p.grid.len());
    }

    #[test]
    fn zero_drift_gives_constant_path() {
        let m = FnModel::zero(Dims::scalar());
        let cfg = AveragedConfig {
            horizon: 0.5,
            dt: 0.1,
            record_every: 1,
            invariant: InvariantConfig {
                n_particles: 10,
                ..Default::default()
            },
        };
        let p = solve_averaged(&m, &AveragedInit::Point(vec![0.7]), &cfg, &InvariantCache::new()).unwrap();
        assert!(p.grid.points().iter().all(|x| x[0] == 0.7));
    }

    #[test]
    fn identical_cells_are_degenerate() {
        let cell = RateCell {
            epsilon: 0.1,
            delta: 0.001,
            estimate: 0.05,
            std_error: 0.001,
            error: None,
        };
        let r = fit_rate(vec![cell.clone(), cell.clone(), cell.clone(), cell], 0);
        assert!(matches!(r, Err(Error::DegenerateRegression(_))));
    }

    #[test]
    fn exact_power_law_fits_exactly() {
        let cells = [0.02, 0.04, 0.08, 0.16]
            .iter()
            .map(|&e| RateCell {
                epsilon: e,
                delta: e * e * e,
                estimate: 3.0 * (2.0 * e),
                std_error: 0.0,
                error: None,
            })
            .collect();
        let r = fit_rate(cells, 1).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-9);
        assert!((r.ci_low - 1.0).abs() < 1e-9 && (r.ci_high - 1.0).abs() < 1e-9);
        assert!(r.monotone_within(0.0));
    }
}
