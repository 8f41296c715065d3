//! Functionals of empirical measures.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::{EmpiricalMeasure, Ensemble};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, generator, Purpose};

mod assignment;

pub use assignment::min_cost_assignment;

/// `(1/N) sum |x_i|^p`.
pub fn moment(mu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::config(format!("moment order must be >= 1, got {p}")));
    }
    let sum: f64 = mu
        .particles()
        .map(|x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if p == 2.0 {
                r2
            } else {
                r2.sqrt().powf(p)
            }
        })
        .sum();
    Ok(sum / mu.count() as f64)
}

pub(crate) fn second_moment(mu: &Ensemble) -> f64 {
    moment(mu, 2.0).expect("order 2 is valid")
}

/// Backend selection for [`wasserstein2_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Options {
    /// Largest ensemble solved by exact assignment when `dim > 1`.
    pub exact_limit: usize,
    /// Random directions of the sliced estimate.
    pub projections: usize,
    pub seed: u64,
}

impl Default for W2Options {
    fn default() -> Self {
        Self {
            exact_limit: 512,
            projections: 64,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub value: f64,
    /// Set when the sliced estimator was used.
    pub approximate: bool,
}

pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<W2Estimate> {
    wasserstein2_with(mu, nu, &W2Options::default())
}

/// Wasserstein-2 distance between two empirical measures.
///
/// * `dim = 1`: exact, by matching quantile functions (sorted pairing when
///   the counts agree).
/// * `dim > 1`, equal counts `<= exact_limit`: exact optimal assignment.
/// * otherwise: sliced estimate `sqrt(mean_k W2^2(<theta_k, mu>, <theta_k, nu>))`
///   over random unit directions, flagged approximate.
pub fn wasserstein2_with(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    opts: &W2Options,
) -> Result<W2Estimate> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    if mu.dim() == 1 {
        let a = sorted(mu.as_slice().to_vec());
        let b = sorted(nu.as_slice().to_vec());
        return Ok(W2Estimate {
            value: quantile_w2_sq(&a, &b).sqrt(),
            approximate: false,
        });
    }
    if mu.count() == nu.count() && mu.count() <= opts.exact_limit {
        return Ok(W2Estimate {
            value: assignment_w2(mu, nu).sqrt(),
            approximate: false,
        });
    }
    Ok(W2Estimate {
        value: sliced_w2_sq(mu.as_slice(), None, nu.as_slice(), None, mu.dim(), opts).sqrt(),
        approximate: true,
    })
}

/// Squared W2 by optimal assignment on the cost `|x_i - y_j|^2`.
pub(crate) fn assignment_w2(mu: &Ensemble, nu: &Ensemble) -> f64 {
    let n = mu.count();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let x = mu.particle(i);
        for j in 0..n {
            cost[i * n + j] = sq_dist(x, nu.particle(j));
        }
    }
    let perm = min_cost_assignment(&cost, n);
    let mut matched: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    // Summing in sorted order makes the result symmetric in its arguments.
    matched.sort_by(f64::total_cmp);
    matched.iter().sum::<f64>() / n as f64
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// `int_0^1 |F^-1(u) - G^-1(u)|^2 du` for sorted, equally weighted samples.
fn quantile_w2_sq(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    }
    let wa = vec![1.0 / a.len() as f64; a.len()];
    let wb = vec![1.0 / b.len() as f64; b.len()];
    weighted_quantile_w2_sq(a, &wa, b, &wb)
}

/// Same as [`quantile_w2_sq`] for sorted samples carrying weights that sum to one.
fn weighted_quantile_w2_sq(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let cumulative = |w: &[f64]| {
        let mut acc = 0.0;
        let mut c: Vec<f64> = w
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        *c.last_mut().expect("non-empty weights") = 1.0;
        c
    };
    let (ca, cb) = (cumulative(wa), cumulative(wb));
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next = ca[i].min(cb[j]);
        acc += (next - u) * (a[i] - b[j]) * (a[i] - b[j]);
        u = next;
        if ca[i] <= next {
            i += 1;
        }
        if cb[j] <= next {
            j += 1;
        }
    }
    acc
}

fn sorted_with_weights(mut pairs: Vec<(f64, f64)>) -> (Vec<f64>, Vec<f64>) {
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}

fn normalised(w: Option<&[f64]>, n: usize) -> Vec<f64> {
    match w {
        Some(w) => {
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        }
        None => vec![1.0 / n as f64; n],
    }
}

fn sliced_w2_sq(
    a: &[f64],
    wa: Option<&[f64]>,
    b: &[f64],
    wb: Option<&[f64]>,
    dim: usize,
    opts: &W2Options,
) -> f64 {
    let na = a.len() / dim;
    let nb = b.len() / dim;
    let wa = normalised(wa, na);
    let wb = normalised(wb, nb);
    let mut rng = generator(derive_seed(opts.seed, Purpose::Projection, &[dim as u64]));
    let k = opts.projections.max(1);
    let mut total = 0.0;
    let mut dir = vec![0.0; dim];
    for _ in 0..k {
        let mut norm = 0.0;
        while norm < 1e-12 {
            dir.iter_mut().for_each(|d| *d = rng.sample(StandardNormal));
            norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        }
        dir.iter_mut().for_each(|d| *d /= norm);
        let project = |pts: &[f64], w: &[f64]| {
            sorted_with_weights(
                pts.chunks_exact(dim)
                    .zip(w)
                    .map(|(p, &wi)| (p.iter().zip(&dir).map(|(u, v)| u * v).sum(), wi))
                    .collect(),
            )
        };
        let (pa, qa) = project(a, &wa);
        let (pb, qb) = project(b, &wb);
        total += weighted_quantile_w2_sq(&pa, &qa, &pb, &qb);
    }
    total / k as f64
}

/// W2 between weighted point clouds (weights need not be normalised).
/// Exact in one dimension, sliced otherwise.
pub fn weighted_wasserstein2(
    dim: usize,
    a: &[f64],
    wa: &[f64],
    b: &[f64],
    wb: &[f64],
    opts: &W2Options,
) -> Result<W2Estimate> {
    if dim == 0 || a.len() != wa.len() * dim || b.len() != wb.len() * dim || wa.is_empty() || wb.is_empty() {
        return Err(Error::config("weighted W2 inputs have inconsistent lengths"));
    }
    if dim == 1 {
        let (pa, qa) = sorted_with_weights(a.iter().copied().zip(normalised(Some(wa), wa.len())).collect());
        let (pb, qb) = sorted_with_weights(b.iter().copied().zip(normalised(Some(wb), wb.len())).collect());
        return Ok(W2Estimate {
            value: weighted_quantile_w2_sq(&pa, &qa, &pb, &qb).sqrt(),
            approximate: false,
        });
    }
    Ok(W2Estimate {
        value: sliced_w2_sq(a, Some(wa), b, Some(wb), dim, opts).sqrt(),
        approximate: true,
    })
}

/// Gibbs-weighted mean `sum y_i exp(-beta h(y_i)) / sum exp(-beta h(y_i))`.
///
/// The exponent is shifted by its minimum so the largest weight is exactly one.
pub fn weighted_mean_h(
    nu: &EmpiricalMeasure,
    h: impl Fn(&[f64]) -> f64,
    beta: f64,
) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::config("beta must be positive"));
    }
    let energies = nu
        .particles()
        .map(|y| beta * h(y))
        .collect::<Vec<_>>();
    gibbs_mean(nu, &energies)
}

/// The `ell`-weighted mean of `mu` evaluated at the `h`-consensus of `nu`.
pub fn weighted_mean_ell(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    ell: impl Fn(&[f64], &[f64]) -> f64,
    alpha: f64,
    beta: f64,
    h: impl Fn(&[f64]) -> f64,
) -> Result<Vec<f64>> {
    let y_star = weighted_mean_h(nu, h, beta)?;
    weighted_mean_ell_at(mu, &y_star, ell, alpha)
}

/// `sum x_i exp(-alpha ell(x_i, y*)) / sum exp(-alpha ell(x_i, y*))`.
pub fn weighted_mean_ell_at(
    mu: &EmpiricalMeasure,
    y_star: &[f64],
    ell: impl Fn(&[f64], &[f64]) -> f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::config("alpha must be positive"));
    }
    let energies = mu
        .particles()
        .map(|x| alpha * ell(x, y_star))
        .collect::<Vec<_>>();
    gibbs_mean(mu, &energies)
}

fn gibbs_mean(points: &Ensemble, energies: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = energies.iter().position(|e| !e.is_finite()) {
        return Err(Error::config(format!(
            "weight function is not finite at particle {i}"
        )));
    }
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut num = vec![0.0; points.dim()];
    let mut den = 0.0;
    for (p, e) in points.particles().zip(energies) {
        let w = (min - e).exp();
        den += w;
        for (acc, v) in num.iter_mut().zip(p) {
            *acc += w * v;
        }
    }
    // The minimising particle contributes weight exp(0) = 1.
    assert!(den >= 1.0, "shifted Gibbs weights lost their maximum");
    num.iter_mut().for_each(|v| *v /= den);
    Ok(num)
}

/// Radial cutoff: `u` inside the ball of radius `r0`, its radial projection outside.
pub fn cutoff_chi(u: &[f64], r0: f64) -> Vec<f64> {
    let mut out = u.to_vec();
    cutoff_in_place(&mut out, r0);
    out
}

#[inline]
pub(crate) fn cutoff_in_place(u: &mut [f64], r0: f64) {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > r0 {
        let s = r0 / norm;
        u.iter_mut().for_each(|v| *v *= s);
    }
}

/// A real symmetric positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

/// Relative tolerance on negative eigenvalues, scaled by `trace / dim`.
pub const PSD_EIGEN_TOLERANCE: f64 = 1e-10;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

impl PsdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::config("PSD matrix must be square and non-empty"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { index: 0 });
        }
        let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::config(format!("matrix is not symmetric (defect {asym:e})")));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let tol = eigen_tolerance(&sym);
        let min = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        if min < -tol {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                tolerance: tol,
            });
        }
        Ok(Self(sym))
    }

    /// Wraps a matrix known to be symmetric PSD by construction.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

fn eigen_tolerance(m: &DMatrix<f64>) -> f64 {
    PSD_EIGEN_TOLERANCE * (m.trace().abs() / m.nrows() as f64).max(f64::MIN_POSITIVE)
}

/// Population covariance `(1/N) sum (x_i - m)(x_i - m)^T`.
pub fn covariance(mu: &EmpiricalMeasure) -> PsdMatrix {
    let d = mu.dim();
    let mean = mu.mean();
    let mut c = DMatrix::<f64>::zeros(d, d);
    let mut dev = vec![0.0; d];
    for p in mu.particles() {
        for (k, v) in dev.iter_mut().enumerate() {
            *v = p[k] - mean[k];
        }
        for i in 0..d {
            for j in i..d {
                c[(i, j)] += dev[i] * dev[j];
            }
        }
    }
    let n = mu.count() as f64;
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] / n;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    PsdMatrix::from_trusted(c)
}

/// Symmetric square root through an eigendecomposition. Eigenvalues within
/// the PSD tolerance below zero are floored at zero.
pub fn psd_sqrt(m: &PsdMatrix) -> Result<PsdMatrix> {
    let a = m.matrix();
    if a.nrows() == 1 {
        let v = a[(0, 0)];
        let tol = eigen_tolerance(a);
        if v < -tol {
            return Err(Error::NotPsd {
                min_eigenvalue: v,
                tolerance: tol,
            });
        }
        return Ok(PsdMatrix(DMatrix::from_element(1, 1, v.max(0.0).sqrt())));
    }
    let tol = eigen_tolerance(a);
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            tolerance: tol,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    let s = (&s + s.transpose()) * 0.5;
    Ok(PsdMatrix(s))
}
