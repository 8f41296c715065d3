//! The coefficient quadruple `(b, sigma, f, g)` of a slow/fast mean-field system.
//!
//! ```text
//! dX = b(X, L_X, Y, L_Y) dt + sqrt(eps) sigma(X, L_X, Y, L_Y) dW1
//! dY = (1/delta) f(L_X, Y, L_Y) dt + (1/sqrt(delta)) g(L_X, Y, L_Y) dW2
//! ```
//!
//! Law dependence is evaluated once per time step through
//! [`MeanFieldModel::law`]; the per-particle coefficient calls then only see
//! the particle state and that precomputed summary. Matrix-valued outputs are
//! row-major (`n x d1` for `sigma`, `m x d2` for `g`).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// `n`
    pub slow: usize,
    /// `m`
    pub fast: usize,
    /// `d1`
    pub slow_noise: usize,
    /// `d2`
    pub fast_noise: usize,
}

impl Dims {
    pub fn new(slow: usize, fast: usize, slow_noise: usize, fast_noise: usize) -> Result<Self> {
        if slow == 0 || fast == 0 || slow_noise == 0 || fast_noise == 0 {
            return Err(Error::config("all model dimensions must be positive"));
        }
        Ok(Self {
            slow,
            fast,
            slow_noise,
            fast_noise,
        })
    }

    pub fn scalar() -> Self {
        Self {
            slow: 1,
            fast: 1,
            slow_noise: 1,
            fast_noise: 1,
        }
    }
}

/// Growth and dissipativity constants a model declares about itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionParams {
    pub kappa: f64,
    pub q: f64,
    pub k0: f64,
    pub k0_tilde: f64,
    pub k1: f64,
    pub k2: f64,
    pub gamma_growth: f64,
    /// Ellipticity floor of `sigma sigma^T`; zero when not declared.
    pub c1: f64,
}

impl Default for AssumptionParams {
    fn default() -> Self {
        Self {
            kappa: 2.0,
            q: 2.0,
            k0: 0.0,
            k0_tilde: 0.0,
            k1: 1.0,
            k2: 0.0,
            gamma_growth: 0.0,
            c1: 0.0,
        }
    }
}

impl AssumptionParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.kappa >= 2.0) {
            bad.push("kappa >= 2");
        }
        if !(self.q >= 2.0) {
            bad.push("q >= 2");
        }
        if !(self.k0 >= 0.0 && self.k0_tilde >= 0.0 && self.k2 >= 0.0 && self.c1 >= 0.0) {
            bad.push("K0, K0~, K2, c1 >= 0");
        }
        if !(self.k1 > 0.0) {
            bad.push("K1 > 0");
        }
        if !(self.k1 > self.k2) {
            bad.push("K1 > K2");
        }
        if !(self.k0_tilde <= self.k0) {
            bad.push("K0~ <= K0");
        }
        if !(self.gamma_growth >= 0.0 && self.gamma_growth < 1.0) {
            bad.push("gamma in [0, 1)");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "assumption constants violate: {}",
                bad.join(", ")
            )))
        }
    }

    /// Extra requirements of the large-deviation results, reported as
    /// warnings: they are sufficient conditions only.
    pub fn ldp_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.q < 4.0_f64.max(self.kappa) {
            out.push(format!("q = {} is below max(4, kappa = {})", self.q, self.kappa));
        }
        if !(self.k0_tilde > 0.0) {
            out.push("K0~ is not positive".to_string());
        }
        out
    }
}

/// Coefficients of a slow/fast McKean-Vlasov system.
pub trait MeanFieldModel: Send + Sync {
    /// Law-dependent quantities shared by every particle within one step.
    type Law: Send + Sync;

    fn dims(&self) -> Dims;

    fn assumptions(&self) -> AssumptionParams;

    fn law(&self, slow: &Ensemble, fast: &Ensemble) -> Result<Self::Law>;

    fn slow_drift(&self, law: &Self::Law, x: &[f64], y: &[f64], out: &mut [f64]);

    fn slow_diffusion(&self, law: &Self::Law, x: &[f64], y: &[f64], out: &mut [f64]);

    fn fast_drift(&self, law: &Self::Law, y: &[f64], out: &mut [f64]);

    fn fast_diffusion(&self, law: &Self::Law, y: &[f64], out: &mut [f64]);

    /// Whether `sigma` may vary with the fast state. Models that return
    /// `false` guarantee it does not.
    fn slow_diffusion_depends_on_fast(&self) -> bool {
        true
    }
}

impl<M: MeanFieldModel + ?Sized> MeanFieldModel for &M {
    type Law = M::Law;
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn assumptions(&self) -> AssumptionParams {
        (**self).assumptions()
    }
    fn law(&self, slow: &Ensemble, fast: &Ensemble) -> Result<Self::Law> {
        (**self).law(slow, fast)
    }
    fn slow_drift(&self, law: &Self::Law, x: &[f64], y: &[f64], out: &mut [f64]) {
        (**self).slow_drift(law, x, y, out)
    }
    fn slow_diffusion(&self, law: &Self::Law, x: &[f64], y: &[f64], out: &mut [f64]) {
        (**self).slow_diffusion(law, x, y, out)
    }
    fn fast_drift(&self, law: &Self::Law, y: &[f64], out: &mut [f64]) {
        (**self).fast_drift(law, y, out)
    }
    fn fast_diffusion(&self, law: &Self::Law, y: &[f64], out: &mut [f64]) {
        (**self).fast_diffusion(law, y, out)
    }
    fn slow_diffusion_depends_on_fast(&self) -> bool {
        (**self).slow_diffusion_depends_on_fast()
    }
}

pub type SlowCoefficient = dyn Fn(&[f64], &Ensemble, &[f64], &Ensemble, &mut [f64]) + Send + Sync;
pub type FastCoefficient = dyn Fn(&Ensemble, &[f64], &Ensemble, &mut [f64]) + Send + Sync;

/// A model assembled from closures that read `(x, mu, y, nu)` directly.
///
/// Every step clones both ensembles into the law, so closures that reduce
/// over the measures cost `O(N)` per particle. Meant for small experiments
/// and tests; the [`crate::zoo`] models precompute their measure functionals.
#[derive(Clone)]
pub struct FnModel {
    dims: Dims,
    assumptions: AssumptionParams,
    b: Arc<SlowCoefficient>,
    sigma: Arc<SlowCoefficient>,
    f: Arc<FastCoefficient>,
    g: Arc<FastCoefficient>,
    sigma_uses_y: bool,
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel").field("dims", &self.dims).finish()
    }
}

impl FnModel {
    /// All four coefficients identically zero.
    pub fn zero(dims: Dims) -> Self {
        Self {
            dims,
            assumptions: AssumptionParams::default(),
            b: Arc::new(|_, _, _, _, out| out.fill(0.0)),
            sigma: Arc::new(|_, _, _, _, out| out.fill(0.0)),
            f: Arc::new(|_, _, _, out| out.fill(0.0)),
            g: Arc::new(|_, _, _, out| out.fill(0.0)),
            sigma_uses_y: true,
        }
    }

    pub fn with_slow_drift(
        mut self,
        b: impl Fn(&[f64], &Ensemble, &[f64], &Ensemble, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.b = Arc::new(b);
        self
    }

    pub fn with_slow_diffusion(
        mut self,
        sigma: impl Fn(&[f64], &Ensemble, &[f64], &Ensemble, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma = Arc::new(sigma);
        self
    }

    pub fn with_fast_drift(
        mut self,
        f: impl Fn(&Ensemble, &[f64], &Ensemble, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.f = Arc::new(f);
        self
    }

    pub fn with_fast_diffusion(
        mut self,
        g: impl Fn(&Ensemble, &[f64], &Ensemble, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.g = Arc::new(g);
        self
    }

    pub fn with_assumptions(mut self, a: AssumptionParams) -> Self {
        self.assumptions = a;
        self
    }

    /// Declares that `sigma` ignores its fast-state argument.
    pub fn with_sigma_independent_of_fast(mut self) -> Self {
        self.sigma_uses_y = false;
        self
    }
}

/// Snapshot of both empirical laws, handed to the closures.
pub struct FnLaw {
    pub slow: Ensemble,
    pub fast: Ensemble,
}

impl MeanFieldModel for FnModel {
    type Law = FnLaw;

    fn dims(&self) -> Dims {
        self.dims
    }

    fn assumptions(&self) -> AssumptionParams {
        self.assumptions
    }

    fn law(&self, slow: &Ensemble, fast: &Ensemble) -> Result<FnLaw> {
        Ok(FnLaw {
            slow: slow.clone(),
            fast: fast.clone(),
        })
    }

    fn slow_drift(&self, law: &FnLaw, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.b)(x, &law.slow, y, &law.fast, out)
    }

    fn slow_diffusion(&self, law: &FnLaw, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.sigma)(x, &law.slow, y, &law.fast, out)
    }

    fn fast_drift(&self, law: &FnLaw, y: &[f64], out: &mut [f64]) {
        (self.f)(&law.slow, y, &law.fast, out)
    }

    fn fast_diffusion(&self, law: &FnLaw, y: &[f64], out: &mut [f64]) {
        (self.g)(&law.slow, y, &law.fast, out)
    }

    fn slow_diffusion_depends_on_fast(&self) -> bool {
        self.sigma_uses_y
    }
}

/// Checks that the ensembles match the model's state dimensions.
pub(crate) fn check_dims(dims: &Dims, slow: &Ensemble, fast: &Ensemble) -> Result<()> {
    if slow.dim() != dims.slow {
        return Err(Error::DimensionMismatch {
            expected: dims.slow,
            got: slow.dim(),
        });
    }
    if fast.dim() != dims.fast {
        return Err(Error::DimensionMismatch {
            expected: dims.fast,
            got: fast.dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assumption_checks() {
        assert!(AssumptionParams::default().validate().is_ok());
        let bad = AssumptionParams {
            k1: 1.0,
            k2: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let tilde = AssumptionParams {
            k0_tilde: 1.0,
            k0: 0.5,
            ..Default::default()
        };
        assert!(tilde.validate().is_err());
        assert_eq!(AssumptionParams::default().ldp_warnings().len(), 2);
        let ok = AssumptionParams {
            q: 4.0,
            k0: 1.0,
            k0_tilde: 0.5,
            ..Default::default()
        };
        assert!(ok.ldp_warnings().is_empty());
    }

    #[test]
    fn fn_model_sees_measures() {
        let m = FnModel::zero(Dims::scalar()).with_slow_drift(|_, mu, _, _, out| {
            out[0] = mu.mean()[0];
        });
        let mu = Ensemble::from_scalars(&[1.0, 3.0]).unwrap();
        let nu = Ensemble::from_scalars(&[0.0, 0.0]).unwrap();
        let law = m.law(&mu, &nu).unwrap();
        let mut out = [0.0];
        m.slow_drift(&law, &[0.0], &[0.0], &mut out);
        assert_eq!(out[0], 2.0);
    }
}
