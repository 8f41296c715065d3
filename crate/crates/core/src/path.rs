use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Snapshots on a uniform time grid starting at zero.
///
/// Deterministic paths store single-particle ensembles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub times: Vec<f64>,
    pub snapshots: Vec<Ensemble>,
}

/// The grid `0, dt, 2 dt, ..., steps * dt`, computed by multiplication so the
/// spacing does not drift.
pub fn uniform_times(dt: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 * dt).collect()
}

/// Number of `dt` steps in `horizon`, if it is an integer up to 1e-9 relative.
pub fn steps_in(horizon: f64, dt: f64) -> Result<usize> {
    let ratio = horizon / dt;
    let steps = ratio.round();
    if !(steps >= 1.0) || (ratio - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::config(format!(
            "horizon {horizon} is not a whole multiple of the step {dt}"
        )));
    }
    Ok(steps as usize)
}

impl PathGrid {
    pub fn new(times: Vec<f64>, snapshots: Vec<Ensemble>) -> Result<Self> {
        let p = Self { times, snapshots };
        p.validate()?;
        Ok(p)
    }

    /// A deterministic path from its points.
    pub fn from_points(times: Vec<f64>, points: &[Vec<f64>]) -> Result<Self> {
        let snapshots = points
            .iter()
            .map(|p| Ensemble::dirac(p, 1))
            .collect::<Result<Vec<_>>>()?;
        Self::new(times, snapshots)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.snapshots.len() {
            return Err(Error::config("path grid needs one snapshot per time"));
        }
        if self.times[0] != 0.0 {
            return Err(Error::config("path grid must start at t = 0"));
        }
        if self.times.len() > 1 {
            let h = self.times[1] - self.times[0];
            if !(h > 0.0) {
                return Err(Error::config("path grid times must increase"));
            }
            for (k, w) in self.times.windows(2).enumerate() {
                let step = w[1] - w[0];
                if !(step > 0.0) || (step - h).abs() > 1e-9 * h.max(self.times[k + 1].abs() * 1e-3) {
                    return Err(Error::config("path grid must be uniform"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step(&self) -> f64 {
        if self.times.len() > 1 {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        } else {
            0.0
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// First particle of each snapshot, for deterministic paths.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.snapshots.iter().map(|s| s.particle(0).to_vec()).collect()
    }

    pub fn last(&self) -> &Ensemble {
        self.snapshots.last().expect("non-empty path grid")
    }
}
