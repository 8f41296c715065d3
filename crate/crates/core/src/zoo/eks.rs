use nalgebra::DMatrix;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::measures::{covariance, psd_sqrt};
use crate::model::{AssumptionParams, Dims, MeanFieldModel};

/// Multi-scale ensemble Kalman sampler on `R^n x R^n`:
///
/// ```text
/// b     = -Cov(nu) x + y          sigma = sqrt Cov(mu) + sqrt Cov(nu)
/// f     = -2y - |y|^2 y - Cov(mu) y   g = sqrt Cov(nu)
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EksModel {
    n: usize,
}

/// Covariances of both laws and their square roots, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EksLaw {
    pub cov_mu: Vec<f64>,
    pub cov_nu: Vec<f64>,
    pub sqrt_mu: Vec<f64>,
    pub sqrt_nu: Vec<f64>,
}

pub fn eks_model(n: usize) -> Result<EksModel> {
    if n == 0 {
        return Err(Error::config("EKS dimension must be positive"));
    }
    Ok(EksModel { n })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[inline]
fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

impl EksModel {
    pub fn dim(&self) -> usize {
        self.n
    }
}

impl MeanFieldModel for EksModel {
    type Law = EksLaw;

    fn dims(&self) -> Dims {
        Dims {
            slow: self.n,
            fast: self.n,
            slow_noise: self.n,
            fast_noise: self.n,
        }
    }

    fn assumptions(&self) -> AssumptionParams {
        AssumptionParams {
            kappa: 4.0,
            q: 4.0,
            k0: 2.0,
            k0_tilde: 1.0,
            k1: 4.0,
            k2: 2.0,
            gamma_growth: 0.0,
            c1: 0.0,
        }
    }

    fn law(&self, slow: &Ensemble, fast: &Ensemble) -> Result<EksLaw> {
        let cm = covariance(slow);
        let cn = covariance(fast);
        let sm = psd_sqrt(&cm)?;
        let sn = psd_sqrt(&cn)?;
        Ok(EksLaw {
            cov_mu: row_major(cm.matrix()),
            cov_nu: row_major(cn.matrix()),
            sqrt_mu: row_major(sm.matrix()),
            sqrt_nu: row_major(sn.matrix()),
        })
    }

    fn slow_drift(&self, law: &EksLaw, x: &[f64], y: &[f64], out: &mut [f64]) {
        mat_vec(&law.cov_nu, x, out);
        for (o, v) in out.iter_mut().zip(y) {
            *o = v - *o;
        }
    }

    fn slow_diffusion(&self, law: &EksLaw, _: &[f64], _: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(&law.sqrt_mu).zip(&law.sqrt_nu) {
            *o = a + b;
        }
    }

    fn fast_drift(&self, law: &EksLaw, y: &[f64], out: &mut [f64]) {
        mat_vec(&law.cov_mu, y, out);
        let r2: f64 = y.iter().map(|v| v * v).sum();
        for (o, v) in out.iter_mut().zip(y) {
            *o = -2.0 * v - r2 * v - *o;
        }
    }

    fn fast_diffusion(&self, law: &EksLaw, _: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&law.sqrt_nu);
    }

    fn slow_diffusion_depends_on_fast(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirac_laws() {
        let m = eks_model(2).unwrap();
        let mu = Ensemble::dirac(&[1.0, 2.0], 3).unwrap();
        let nu = Ensemble::dirac(&[0.5, 0.0], 3).unwrap();
        let law = m.law(&mu, &nu).unwrap();
        let y = [1.0, -1.0];
        let mut b = [0.0; 2];
        m.slow_drift(&law, &[3.0, 4.0], &y, &mut b);
        assert_eq!(b, y);
        let mut s = [1.0; 4];
        m.slow_diffusion(&law, &[3.0, 4.0], &y, &mut s);
        assert_eq!(s, [0.0; 4]);
        let mut f = [0.0; 2];
        m.fast_drift(&law, &y, &mut f);
        assert_eq!(f, [-4.0, 4.0]);
        let mut g = [1.0; 4];
        m.fast_diffusion(&law, &y, &mut g);
        assert_eq!(g, [0.0; 4]);
    }

    #[test]
    fn hand_evaluations() {
        let m = eks_model(1).unwrap();
        let pm = Ensemble::from_scalars(&[1.0, -1.0]).unwrap();
        let dirac = Ensemble::from_scalars(&[0.0, 0.0]).unwrap();
        let law = m.law(&dirac, &pm).unwrap();
        let mut b = [0.0];
        m.slow_drift(&law, &[3.0], &[1.0], &mut b);
        assert_eq!(b[0], -2.0);
        let law = m.law(&pm, &dirac).unwrap();
        let mut f = [0.0];
        m.fast_drift(&law, &[1.0], &mut f);
        assert_eq!(f[0], -4.0);
    }
}
