use std::path::PathBuf;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::averaging::{DeltaPolicy, FastInit};
use crate::ensemble::{Ensemble, TimeScales};
use crate::error::{Error, Result};
use crate::frozen::InvariantConfig;
use crate::ldp::CompanionNoise;
use crate::model::{AssumptionParams, Dims, FnLaw, FnModel, MeanFieldModel};
use crate::rng::{derive_seed, generator, Purpose};
use crate::sde::SimConfig;
use crate::zoo::{
    cbo_bilevel_model, eks_model, linear_benchmark_model, CboLaw, CboModel, CboParams, EksLaw, EksModel, LinearModel,
    LowerCostSpec, ProbeSampler, UpperCostSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    CboOptimize,
    AveragingRate,
    FrozenInvariant,
    LdpRate,
    ControlledRun,
    Probe,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Simulate,
        ExperimentKind::CboOptimize,
        ExperimentKind::AveragingRate,
        ExperimentKind::FrozenInvariant,
        ExperimentKind::LdpRate,
        ExperimentKind::ControlledRun,
        ExperimentKind::Probe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::CboOptimize => "cbo-optimize",
            ExperimentKind::AveragingRate => "averaging-rate",
            ExperimentKind::FrozenInvariant => "frozen-invariant",
            ExperimentKind::LdpRate => "ldp-rate",
            ExperimentKind::ControlledRun => "controlled-run",
            ExperimentKind::Probe => "probe",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown experiment '{s}'")))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn one() -> f64 {
    1.0
}
fn one_dim() -> usize {
    1
}
fn fifty() -> f64 {
    50.0
}
fn two() -> f64 {
    2.0
}

/// Models selectable by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `b = -a x + c y`, `sigma = s`, `f = -k y`, `g = sqrt 2`.
    Linear {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        c: f64,
        #[serde(default = "one")]
        k: f64,
        #[serde(default = "one")]
        s: f64,
    },
    /// All coefficients zero.
    Zero {
        #[serde(default = "one_dim")]
        slow_dim: usize,
        #[serde(default = "one_dim")]
        fast_dim: usize,
    },
    Cbo {
        #[serde(default = "one_dim")]
        slow_dim: usize,
        #[serde(default = "one_dim")]
        fast_dim: usize,
        #[serde(default = "fifty")]
        alpha: f64,
        #[serde(default = "fifty")]
        beta: f64,
        #[serde(default = "one")]
        lambda1: f64,
        #[serde(default = "default_lambda2")]
        lambda2: f64,
        #[serde(default = "one")]
        lambda3: f64,
        #[serde(default = "default_sigma1")]
        sigma1: f64,
        #[serde(default = "two")]
        r0: f64,
        upper: UpperCostSpec,
        lower: LowerCostSpec,
        #[serde(default)]
        lambda2_constant: Option<f64>,
    },
    Eks {
        #[serde(default = "one_dim")]
        dim: usize,
    },
}

fn default_lambda2() -> f64 {
    0.1
}
fn default_sigma1() -> f64 {
    0.3
}

/// A built model of the zoo.
#[derive(Clone, Debug)]
pub enum ZooModel {
    Linear(LinearModel),
    Zero(FnModel),
    Cbo(CboModel),
    Eks(EksModel),
}

impl ModelSpec {
    pub fn build(&self) -> Result<ZooModel> {
        Ok(match self {
            ModelSpec::Linear { a, c, k, s } => ZooModel::Linear(linear_benchmark_model(*a, *c, *k, *s)?),
            ModelSpec::Zero { slow_dim, fast_dim } => {
                ZooModel::Zero(FnModel::zero(Dims::new(*slow_dim, *fast_dim, *slow_dim, *fast_dim)?))
            }
            ModelSpec::Cbo {
                slow_dim,
                fast_dim,
                alpha,
                beta,
                lambda1,
                lambda2,
                lambda3,
                sigma1,
                r0,
                upper,
                lower,
                lambda2_constant,
            } => {
                let (ell, h) = (upper.build(*slow_dim, *fast_dim)?, lower.build());
                let mut p = CboParams::new(*slow_dim, *fast_dim, move |x: &[f64], y: &[f64]| ell(x, y), move |y: &[f64]| h(y));
                p.alpha = *alpha;
                p.beta = *beta;
                p.lambda1 = *lambda1;
                p.lambda2 = *lambda2;
                p.lambda3 = *lambda3;
                p.sigma1 = *sigma1;
                p.r0 = *r0;
                p.lambda2_constant = *lambda2_constant;
                ZooModel::Cbo(cbo_bilevel_model(p)?)
            }
            ModelSpec::Eks { dim } => ZooModel::Eks(eks_model(*dim)?),
        })
    }
}

/// Binds the concrete model of a [`ZooModel`] to `$m` and evaluates `$body`.
macro_rules! with_model {
    ($zoo:expr, $m:ident => $body:expr) => {
        match $zoo {
            $crate::experiment::ZooModel::Linear($m) => $body,
            $crate::experiment::ZooModel::Zero($m) => $body,
            $crate::experiment::ZooModel::Cbo($m) => $body,
            $crate::experiment::ZooModel::Eks($m) => $body,
        }
    };
}
pub(crate) use with_model;

/// Initial particle distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Point { value: Vec<f64> },
    /// Independent `N(mean, scale^2 I)`.
    Gaussian {
        mean: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Independent uniform coordinates on `[low, high]`.
    Uniform { low: f64, high: f64 },
}

impl InitSpec {
    /// `count` particles; `stream` separates the slow and fast draws.
    pub fn sample(&self, dim: usize, count: usize, seed: u64, stream: u64) -> Result<Ensemble> {
        let mut rng = generator(derive_seed(seed, Purpose::Init, &[stream]));
        let check = |v: &[f64]| {
            if v.len() != dim {
                Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                })
            } else {
                Ok(())
            }
        };
        match self {
            InitSpec::Point { value } => {
                check(value)?;
                Ensemble::dirac(value, count)
            }
            InitSpec::Gaussian { mean, scale } => {
                check(mean)?;
                let mut data = Vec::with_capacity(dim * count);
                for _ in 0..count {
                    for m in mean {
                        let z: f64 = Distribution::sample(&StandardNormal, &mut rng);
                        data.push(m + scale * z);
                    }
                }
                Ensemble::new(dim, data)
            }
            InitSpec::Uniform { low, high } => {
                if !(low < high) {
                    return Err(Error::config("uniform init needs low < high"));
                }
                let data = (0..dim * count)
                    .map(|_| rand::Rng::random_range(&mut rng, *low..*high))
                    .collect();
                Ensemble::new(dim, data)
            }
        }
    }

    pub fn zeros(dim: usize) -> Self {
        InitSpec::Point { value: vec![0.0; dim] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingSection {
    pub x0: Vec<f64>,
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub delta_policy: DeltaPolicy,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub fast_init: FastInit,
    #[serde(default)]
    pub averaged_dt: Option<f64>,
}

fn default_separation() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicitySection {
    pub horizon: f64,
    #[serde(default = "default_frozen_dt")]
    pub dt: f64,
    /// The second copy starts from the first shifted by this much in every
    /// coordinate.
    #[serde(default = "default_shift")]
    pub shift: f64,
    #[serde(default = "default_ergodicity_particles")]
    pub n_particles: usize,
}

fn default_frozen_dt() -> f64 {
    0.1
}
fn default_shift() -> f64 {
    3.0
}
fn default_ergodicity_particles() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenSection {
    /// The frozen slow law.
    pub mu: InitSpec,
    #[serde(default = "one_count")]
    pub mu_particles: usize,
    #[serde(default)]
    pub ergodicity: Option<ErgodicitySection>,
}

fn one_count() -> usize {
    1
}

/// Test paths for the rate functional; perturbations vanish at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    Averaged,
    Constant,
    /// Averaged path plus `amplitude sin(frequency pi t / T)` per coordinate.
    Perturbed { amplitude: f64, frequency: f64 },
    /// Explicit points on the grid.
    Points { values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpSection {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub path: PathSpec,
    #[serde(default)]
    pub eig_floor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// Constant control `h in R^(d1 + d2)` on `[0, horizon]`.
    pub value: Vec<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub energy_bound: Option<f64>,
    #[serde(default)]
    pub companion_noise: CompanionNoise,
    #[serde(default = "one_count")]
    pub thinning: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CboSection {
    /// Expected `(M_alpha, M_beta)`; reported distances use it when present.
    #[serde(default)]
    pub target: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default = "default_cbo_tol")]
    pub tolerance: f64,
}

fn default_cbo_tol() -> f64 {
    0.1
}

/// A JSON experiment description. The top-level `seed` replaces every
/// nested seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub time_scales: Option<TimeScales>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub slow_init: Option<InitSpec>,
    #[serde(default)]
    pub fast_init: Option<InitSpec>,
    #[serde(default)]
    pub invariant: Option<InvariantConfig>,
    #[serde(default)]
    pub averaging: Option<AveragingSection>,
    #[serde(default)]
    pub frozen: Option<FrozenSection>,
    #[serde(default)]
    pub ldp: Option<LdpSection>,
    #[serde(default)]
    pub control: Option<ControlSection>,
    #[serde(default)]
    pub probe: Option<ProbeSampler>,
    #[serde(default)]
    pub cbo: Option<CboSection>,
}

pub(crate) fn require<'a, T>(v: &'a Option<T>, name: &str, kind: ExperimentKind) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::config(format!("experiment '{kind}' needs a '{name}' section")))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Copies the top-level seed into every nested seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(s) = self.sim.as_mut() {
            s.seed = seed;
        }
        if let Some(i) = self.invariant.as_mut() {
            i.seed = seed;
        }
        if let Some(p) = self.probe.as_mut() {
            p.seed = seed;
        }
        self
    }

    /// Checks that the sections needed by the experiment are present and
    /// that the model can be built.
    pub fn validate(&self) -> Result<()> {
        let kind = self.experiment;
        self.model.build()?;
        let ts = |c: &Self| -> Result<()> {
            require(&c.time_scales, "time_scales", kind)?.validate()?;
            require(&c.sim, "sim", kind)?.validate()
        };
        match kind {
            ExperimentKind::Simulate => ts(self)?,
            ExperimentKind::CboOptimize => {
                ts(self)?;
                if !matches!(self.model, ModelSpec::Cbo { .. }) {
                    return Err(Error::config("cbo-optimize needs the cbo model"));
                }
            }
            ExperimentKind::AveragingRate => {
                require(&self.sim, "sim", kind)?.validate()?;
                let a = require(&self.averaging, "averaging", kind)?;
                if a.eps_grid.len() < 4 {
                    return Err(Error::config("averaging eps_grid needs at least four values"));
                }
            }
            ExperimentKind::FrozenInvariant => {
                require(&self.frozen, "frozen", kind)?;
                self.invariant.clone().unwrap_or_default().validate()?;
            }
            ExperimentKind::LdpRate => {
                require(&self.ldp, "ldp", kind)?;
            }
            ExperimentKind::ControlledRun => {
                ts(self)?;
                require(&self.control, "control", kind)?;
            }
            ExperimentKind::Probe => {}
        }
        Ok(())
    }
}

/// Law of a [`ZooModel`]; always the variant of the model that produced it.
pub enum ZooLaw {
    Linear(()),
    Zero(FnLaw),
    Cbo(CboLaw),
    Eks(EksLaw),
}

macro_rules! zoo_coefficient {
    ($self:ident, $law:ident, $m:ident, $l:ident => $body:expr) => {
        match ($self, $law) {
            (ZooModel::Linear($m), ZooLaw::Linear($l)) => $body,
            (ZooModel::Zero($m), ZooLaw::Zero($l)) => $body,
            (ZooModel::Cbo($m), ZooLaw::Cbo($l)) => $body,
            (ZooModel::Eks($m), ZooLaw::Eks($l)) => $body,
            _ => unreachable!("law from a different zoo model"),
        }
    };
}

impl MeanFieldModel for ZooModel {
    type Law = ZooLaw;

    fn dims(&self) -> Dims {
        with_model!(self, m => m.dims())
    }

    fn assumptions(&self) -> AssumptionParams {
        with_model!(self, m => m.assumptions())
    }

    fn law(&self, slow: &Ensemble, fast: &Ensemble) -> Result<ZooLaw> {
        Ok(match self {
            ZooModel::Linear(m) => ZooLaw::Linear(m.law(slow, fast)?),
            ZooModel::Zero(m) => ZooLaw::Zero(m.law(slow, fast)?),
            ZooModel::Cbo(m) => ZooLaw::Cbo(m.law(slow, fast)?),
            ZooModel::Eks(m) => ZooLaw::Eks(m.law(slow, fast)?),
        })
    }

    fn slow_drift(&self, law: &ZooLaw, x: &[f64], y: &[f64], out: &mut [f64]) {
        zoo_coefficient!(self, law, m, l => m.slow_drift(l, x, y, out))
    }

    fn slow_diffusion(&self, law: &ZooLaw, x: &[f64], y: &[f64], out: &mut [f64]) {
        zoo_coefficient!(self, law, m, l => m.slow_diffusion(l, x, y, out))
    }

    fn fast_drift(&self, law: &ZooLaw, y: &[f64], out: &mut [f64]) {
        zoo_coefficient!(self, law, m, l => m.fast_drift(l, y, out))
    }

    fn fast_diffusion(&self, law: &ZooLaw, y: &[f64], out: &mut [f64]) {
        zoo_coefficient!(self, law, m, l => m.fast_diffusion(l, y, out))
    }

    fn slow_diffusion_depends_on_fast(&self) -> bool {
        with_model!(self, m => m.slow_diffusion_depends_on_fast())
    }
}
