//! Particle ensembles and the time-scale triple `(epsilon, delta, separation)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, equally weighted collection of points in `R^dim`.
///
/// Particles are stored contiguously, row after row. An ensemble is never
/// empty and never contains non-finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnsemble", into = "RawEnsemble")]
pub struct Ensemble {
    dim: usize,
    data: Vec<f64>,
}

/// The empirical measure `(1/N) sum_i delta_{x_i}` is just the ensemble.
pub type EmpiricalMeasure = Ensemble;

#[derive(Serialize, Deserialize)]
struct RawEnsemble {
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<RawEnsemble> for Ensemble {
    type Error = Error;
    fn try_from(raw: RawEnsemble) -> Result<Self> {
        Ensemble::new(raw.dim, raw.data)
    }
}

impl From<Ensemble> for RawEnsemble {
    fn from(e: Ensemble) -> Self {
        RawEnsemble {
            dim: e.dim,
            data: e.data,
        }
    }
}

impl Ensemble {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("ensemble dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { index: pos / dim });
        }
        Ok(Self { dim, data })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyEnsemble)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * points.len());
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::new(dim, data)
    }

    /// Scalar samples as a one-dimensional ensemble.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    /// `count` copies of `point`; the empirical measure is a Dirac mass.
    pub fn dirac(point: &[f64], count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let mut data = Vec::with_capacity(point.len() * count);
        for _ in 0..count {
            data.extend_from_slice(point);
        }
        Self::new(point.len(), data)
    }

    pub fn zeros(dim: usize, count: usize) -> Result<Self> {
        Self::new(dim, vec![0.0; dim * count])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Mutable access for the integrators. Callers must leave the data
    /// finite or report the offending particle.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.particles() {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = self.count() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// First particle index holding a non-finite coordinate.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|pos| pos / self.dim)
    }

    /// The push-forward under `x -> x + shift`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: shift.len(),
            });
        }
        let mut data = self.data.clone();
        for p in data.chunks_exact_mut(self.dim) {
            for (v, s) in p.iter_mut().zip(shift) {
                *v += s;
            }
        }
        Self::new(self.dim, data)
    }

    /// Keeps every `stride`-th particle, starting from the first.
    pub fn thinned(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let data = self
            .particles()
            .step_by(stride)
            .flat_map(|p| p.iter().copied())
            .collect();
        Self {
            dim: self.dim,
            data,
        }
    }
}

/// Noise intensity `epsilon`, time-scale ratio `delta` and the occupation
/// window width `separation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeScales {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_separation() -> f64 {
    0.05
}

/// Largest `delta / (epsilon * separation)` accepted for a large-deviation run.
pub const LDP_SCALE_RATIO_MAX: f64 = 0.1;

impl TimeScales {
    pub fn new(epsilon: f64, delta: f64, separation: f64) -> Result<Self> {
        let ts = Self {
            epsilon,
            delta,
            separation,
        };
        ts.validate()?;
        Ok(ts)
    }

    /// `epsilon = 0` is accepted as the noiseless limit of the slow equation.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::config("separation must be positive"));
        }
        Ok(())
    }

    /// Scale regime required by large-deviation runs: `delta < epsilon` and
    /// `delta / (epsilon * separation)` small.
    pub fn validate_ldp(&self) -> Result<()> {
        self.validate()?;
        if !(self.delta < self.epsilon) {
            return Err(Error::config(format!(
                "large-deviation runs need delta < epsilon (delta = {}, epsilon = {})",
                self.delta, self.epsilon
            )));
        }
        let ratio = self.delta / (self.epsilon * self.separation);
        if ratio > LDP_SCALE_RATIO_MAX {
            return Err(Error::config(format!(
                "delta/(epsilon*separation) = {ratio} exceeds {LDP_SCALE_RATIO_MAX}"
            )));
        }
        Ok(())
    }
}
