use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::model::{AssumptionParams, Dims, MeanFieldModel};

/// Scalar linear benchmark:
///
/// ```text
/// b(x, mu, y, nu) = -a x + c y      sigma = s
/// f(mu, y, nu)    = -k y            g     = fast_noise
/// ```
///
/// With `fast_noise = sqrt(2)` the frozen invariant law is `N(0, 1/k)`, so the
/// averaged drift is exactly `-a x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearModel {
    pub a: f64,
    pub c: f64,
    pub k: f64,
    pub s: f64,
    pub fast_noise: f64,
}

/// Validated benchmark with `g = sqrt(2)`; needs `a, k > 0`.
pub fn linear_benchmark_model(a: f64, c: f64, k: f64, s: f64) -> Result<LinearModel> {
    if !(a > 0.0 && k > 0.0) {
        return Err(Error::config("linear benchmark needs a > 0 and k > 0"));
    }
    if !(c.is_finite() && s.is_finite()) {
        return Err(Error::config("linear benchmark coefficients must be finite"));
    }
    Ok(LinearModel {
        a,
        c,
        k,
        s,
        fast_noise: std::f64::consts::SQRT_2,
    })
}

impl LinearModel {
    /// No validation; `general(0, 0, 0, 0, 0)` is the zero model.
    pub fn general(a: f64, c: f64, k: f64, s: f64, fast_noise: f64) -> Self {
        Self {
            a,
            c,
            k,
            s,
            fast_noise,
        }
    }

    /// `x0 exp(-a t)`.
    pub fn averaged_path(&self, x0: f64, t: f64) -> f64 {
        x0 * (-self.a * t).exp()
    }

    /// Stationary variance of the fast equation at unit speed, `g^2 / (2k)`.
    pub fn invariant_variance(&self) -> f64 {
        self.fast_noise * self.fast_noise / (2.0 * self.k)
    }

    /// Integrand of the closed-form rate, `(phi' + a phi)^2 / (2 s^2)`.
    pub fn rate_integrand(&self, phi: f64, phi_dot: f64) -> f64 {
        let r = phi_dot + self.a * phi;
        r * r / (2.0 * self.s * self.s)
    }
}

impl MeanFieldModel for LinearModel {
    type Law = ();

    fn dims(&self) -> Dims {
        Dims::scalar()
    }

    fn assumptions(&self) -> AssumptionParams {
        AssumptionParams {
            kappa: 2.0,
            q: 2.0,
            k0: 0.0,
            k0_tilde: 0.0,
            k1: (2.0 * self.k).max(f64::MIN_POSITIVE),
            k2: 0.0,
            gamma_growth: 0.0,
            c1: self.s * self.s,
        }
    }

    fn law(&self, _: &Ensemble, _: &Ensemble) -> Result<()> {
        Ok(())
    }

    #[inline]
    fn slow_drift(&self, _: &(), x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = -self.a * x[0] + self.c * y[0];
    }

    #[inline]
    fn slow_diffusion(&self, _: &(), _: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = self.s;
    }

    #[inline]
    fn fast_drift(&self, _: &(), y: &[f64], out: &mut [f64]) {
        out[0] = -self.k * y[0];
    }

    #[inline]
    fn fast_diffusion(&self, _: &(), _: &[f64], out: &mut [f64]) {
        out[0] = self.fast_noise;
    }

    fn slow_diffusion_depends_on_fast(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let m = linear_benchmark_model(1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((m.averaged_path(1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((m.invariant_variance() - 1.0).abs() < 1e-15);
        assert!(linear_benchmark_model(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(m.assumptions().validate().is_ok());
    }
}
