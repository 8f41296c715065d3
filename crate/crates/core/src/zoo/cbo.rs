use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::measures::{cutoff_in_place, weighted_mean_ell_at, weighted_mean_h};
use crate::model::{AssumptionParams, Dims, MeanFieldModel};

pub type UpperCost = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
pub type LowerCost = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type Gradient = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Parameters of the bi-level consensus-based optimiser. `ell` is the upper
/// (slow) objective, `h` the lower (fast) one, `grad_phi` a confining force.
#[derive(Clone)]
pub struct CboParams {
    pub slow_dim: usize,
    pub fast_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub sigma1: f64,
    pub r0: f64,
    pub ell: Arc<UpperCost>,
    pub h: Arc<LowerCost>,
    pub grad_phi: Arc<Gradient>,
    /// Growth exponent matching `grad_phi`.
    pub q: f64,
    /// User estimate of the Lipschitz-type constant in the smallness
    /// condition on `lambda2`; `None` skips that warning.
    pub lambda2_constant: Option<f64>,
}

impl std::fmt::Debug for CboParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CboParams")
            .field("slow_dim", &self.slow_dim)
            .field("fast_dim", &self.fast_dim)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("lambda1", &self.lambda1)
            .field("lambda2", &self.lambda2)
            .field("lambda3", &self.lambda3)
            .field("sigma1", &self.sigma1)
            .field("r0", &self.r0)
            .field("q", &self.q)
            .finish_non_exhaustive()
    }
}

/// `|y|^2 y`
pub fn cubic_confinement(y: &[f64], out: &mut [f64]) {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    for (o, v) in out.iter_mut().zip(y) {
        *o = r2 * v;
    }
}

impl CboParams {
    /// Defaults `alpha = beta = 50`, `lambda = (1, 0.1, 1)`, `sigma1 = 0.3`,
    /// `R0 = 2` and the cubic confinement.
    pub fn new(
        slow_dim: usize,
        fast_dim: usize,
        ell: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            slow_dim,
            fast_dim,
            alpha: 50.0,
            beta: 50.0,
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 1.0,
            sigma1: 0.3,
            r0: 2.0,
            ell: Arc::new(ell),
            h: Arc::new(h),
            grad_phi: Arc::new(cubic_confinement),
            q: 4.0,
            lambda2_constant: None,
        }
    }

    pub fn with_grad_phi(
        mut self,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        q: f64,
    ) -> Self {
        self.grad_phi = Arc::new(grad);
        self.q = q;
        self
    }

    /// `2 lambda1 - sigma1^2 lambda1^2 - 1`, which must be positive.
    pub fn stability_margin(&self) -> f64 {
        2.0 * self.lambda1 - self.sigma1 * self.sigma1 * self.lambda1 * self.lambda1 - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.slow_dim == 0 || self.fast_dim == 0 {
            return Err(Error::config("CBO dimensions must be positive"));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::config("CBO alpha and beta must be positive"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda3 >= 0.0 && self.sigma1 >= 0.0) {
            return Err(Error::config("CBO lambda1..3 and sigma1 must be non-negative"));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::config("CBO cutoff radius must be positive"));
        }
        if !(self.q >= 2.0) {
            return Err(Error::config("CBO growth exponent q must be >= 2"));
        }
        if !(self.stability_margin() > 0.0) {
            return Err(Error::config(format!(
                "CBO needs 2*lambda1 > sigma1^2*lambda1^2 + 1 (margin {})",
                self.stability_margin()
            )));
        }
        Ok(())
    }

    /// Non-fatal diagnostics about the smallness of `lambda2`.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.lambda2_constant {
            Some(c) => {
                let lhs = (1.0 + self.sigma1 * self.sigma1) * self.lambda2 * self.lambda2 * c;
                if lhs >= self.stability_margin() {
                    out.push(format!(
                        "lambda2 = {} may be too large: (1+sigma1^2) lambda2^2 C = {lhs} >= {}",
                        self.lambda2,
                        self.stability_margin()
                    ));
                }
            }
            None => {
                if self.lambda2 > 0.0 {
                    out.push(
                        "smallness of lambda2 not certified: no constant estimate supplied".to_string(),
                    );
                }
            }
        }
        out
    }
}

/// Bi-level consensus-based optimisation:
///
/// ```text
/// b     = -(x - M_ell)                 sigma = diag(x - M_ell)
/// f     = -(l1 y - l2 M_h + l3 grad_phi(y))
/// g     = (sigma1 / sqrt 2) diag(chi_R0(l1 y - l2 M_h))
/// ```
#[derive(Clone, Debug)]
pub struct CboModel {
    params: CboParams,
}

/// The two consensus points of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct CboLaw {
    pub m_h: Vec<f64>,
    pub m_ell: Vec<f64>,
}

pub fn cbo_bilevel_model(params: CboParams) -> Result<CboModel> {
    params.validate()?;
    for w in params.warnings() {
        log::warn!("{w}");
    }
    Ok(CboModel { params })
}

impl CboModel {
    pub fn params(&self) -> &CboParams {
        &self.params
    }

    /// Large-deviation runs additionally need a confining force.
    pub fn validate_ldp(&self) -> Result<()> {
        if !(self.params.lambda3 > 0.0) {
            return Err(Error::config("CBO large-deviation runs need lambda3 > 0"));
        }
        Ok(())
    }

    /// `(M_ell, M_h)` of the given laws.
    pub fn consensus(&self, slow: &Ensemble, fast: &Ensemble) -> Result<CboLaw> {
        self.law(slow, fast)
    }

    /// Frobenius bound on the fast diffusion from the cutoff.
    pub fn fast_noise_bound(&self) -> f64 {
        self.params.sigma1 / std::f64::consts::SQRT_2 * self.params.r0 * (self.params.fast_dim as f64).sqrt()
    }

    fn fast_argument(&self, law: &CboLaw, y: &[f64], out: &mut [f64]) {
        let p = &self.params;
        for ((o, v), m) in out.iter_mut().zip(y).zip(&law.m_h) {
            *o = p.lambda1 * v - p.lambda2 * m;
        }
    }
}

impl MeanFieldModel for CboModel {
    type Law = CboLaw;

    fn dims(&self) -> Dims {
        Dims {
            slow: self.params.slow_dim,
            fast: self.params.fast_dim,
            slow_noise: self.params.slow_dim,
            fast_noise: self.params.fast_dim,
        }
    }

    fn assumptions(&self) -> AssumptionParams {
        let p = &self.params;
        let k2 = (1.0 + p.sigma1 * p.sigma1) * p.lambda2 * p.lambda2 * p.lambda2_constant.unwrap_or(1.0);
        AssumptionParams {
            kappa: 2.0,
            q: p.q,
            k0: 2.0 * p.lambda3,
            k0_tilde: 2.0 * p.lambda3,
            k1: p.stability_margin(),
            k2,
            gamma_growth: 0.0,
            c1: 0.0,
        }
    }

    fn law(&self, slow: &Ensemble, fast: &Ensemble) -> Result<CboLaw> {
        let p = &self.params;
        let m_h = weighted_mean_h(fast, |y| (p.h)(y), p.beta)?;
        let m_ell = weighted_mean_ell_at(slow, &m_h, |x, y| (p.ell)(x, y), p.alpha)?;
        Ok(CboLaw { m_h, m_ell })
    }

    fn slow_drift(&self, law: &CboLaw, x: &[f64], _: &[f64], out: &mut [f64]) {
        for ((o, v), m) in out.iter_mut().zip(x).zip(&law.m_ell) {
            *o = m - v;
        }
    }

    fn slow_diffusion(&self, law: &CboLaw, x: &[f64], _: &[f64], out: &mut [f64]) {
        let n = x.len();
        out.fill(0.0);
        for i in 0..n {
            out[i * n + i] = x[i] - law.m_ell[i];
        }
    }

    fn fast_drift(&self, law: &CboLaw, y: &[f64], out: &mut [f64]) {
        let p = &self.params;
        (p.grad_phi)(y, out);
        for ((o, v), m) in out.iter_mut().zip(y).zip(&law.m_h) {
            *o = -(p.lambda1 * v - p.lambda2 * m + p.lambda3 * *o);
        }
    }

    fn fast_diffusion(&self, law: &CboLaw, y: &[f64], out: &mut [f64]) {
        let m = y.len();
        let mut u = vec![0.0; m];
        self.fast_argument(law, y, &mut u);
        cutoff_in_place(&mut u, self.params.r0);
        let s = self.params.sigma1 / std::f64::consts::SQRT_2;
        out.fill(0.0);
        for i in 0..m {
            out[i * m + i] = s * u[i];
        }
    }

    fn slow_diffusion_depends_on_fast(&self) -> bool {
        false
    }
}

/// Upper objectives selectable by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpperCostSpec {
    /// `|x - scale * y - offset|^2`, needs `n = m`.
    ShiftedQuadratic {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
}

/// Lower objectives selectable by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LowerCostSpec {
    /// `|y - center|^2`
    Quadratic {
        #[serde(default)]
        center: f64,
    },
    /// `sum (y_i - c)^2 - A cos(2 pi (y_i - c)) + A`
    Rastrigin {
        #[serde(default)]
        center: f64,
        #[serde(default = "ten")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

impl UpperCostSpec {
    pub fn build(&self, n: usize, m: usize) -> Result<Arc<UpperCost>> {
        match *self {
            UpperCostSpec::ShiftedQuadratic { scale, offset } => {
                if n != m {
                    return Err(Error::config("shifted_quadratic needs equal slow and fast dimensions"));
                }
                Ok(Arc::new(move |x: &[f64], y: &[f64]| {
                    x.iter()
                        .zip(y)
                        .map(|(a, b)| {
                            let d = a - scale * b - offset;
                            d * d
                        })
                        .sum()
                }))
            }
        }
    }
}

impl LowerCostSpec {
    pub fn build(&self) -> Arc<LowerCost> {
        match *self {
            LowerCostSpec::Quadratic { center } => {
                Arc::new(move |y: &[f64]| y.iter().map(|v| (v - center) * (v - center)).sum())
            }
            LowerCostSpec::Rastrigin { center, amplitude } => Arc::new(move |y: &[f64]| {
                y.iter()
                    .map(|v| {
                        let d = v - center;
                        d * d - amplitude * (2.0 * std::f64::consts::PI * d).cos() + amplitude
                    })
                    .sum()
            }),
        }
    }
}
