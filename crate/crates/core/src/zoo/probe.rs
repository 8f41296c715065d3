use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::measures::second_moment;
use crate::model::MeanFieldModel;
use crate::rng::{derive_seed, fill_normal, generator, Purpose};

/// Random states and small empirical measures for [`assumption_probe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSampler {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Fast states are drawn with `|y|` uniform on `[0, y_radius]`.
    #[serde(default = "default_radius")]
    pub y_radius: f64,
    #[serde(default = "default_radius")]
    pub x_radius: f64,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    /// Spread and centre range of the sampled measures.
    #[serde(default = "default_scale")]
    pub measure_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    2000
}
fn default_radius() -> f64 {
    10.0
}
fn default_ensemble() -> usize {
    16
}
fn default_scale() -> f64 {
    1.0
}

impl Default for ProbeSampler {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            y_radius: default_radius(),
            x_radius: default_radius(),
            ensemble_size: default_ensemble(),
            measure_scale: default_scale(),
            seed: 0,
        }
    }
}

/// Least-squares constants of `2<f,y> + |g|^2 + K0 |y|^q <= -K1 |y|^2 + K2 M2(nu) + C`,
/// with `C` raised until the bound holds on every sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedConstants {
    pub k1: f64,
    pub k2: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples: usize,
    /// Samples whose law evaluation failed or produced non-finite values.
    pub failed_samples: usize,
    pub fitted: FittedConstants,
    /// Maximum of the fast functional over `|y| <= y_radius / 2`.
    pub fast_core_max: f64,
    /// Maximum over the outer shell; above the core maximum means growth.
    pub fast_outer_max: f64,
    /// `max 2<f,y> + K0 |y|^q` with the declared `K0`.
    pub coercivity_max: f64,
    /// `max (2<b,x> - K0~ |y|^q) / (1 + |x|^2 + M2(mu) + M2(nu))`.
    pub slow_growth_ratio: f64,
    pub violations: Vec<String>,
}

fn ball_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    fill_normal(rng, &mut v);
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>();
    v.iter_mut().for_each(|a| *a *= r / norm);
    v
}

fn random_measure(rng: &mut ChaCha8Rng, dim: usize, count: usize, scale: f64) -> Ensemble {
    let centre = ball_point(rng, dim, scale);
    let mut data = vec![0.0; dim * count];
    fill_normal(rng, &mut data);
    for (k, v) in data.iter_mut().enumerate() {
        *v = centre[k % dim] + scale * *v;
    }
    Ensemble::new(dim, data).expect("finite sampled measure")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Empirical check of the dissipativity and growth conditions. Diagnostic
/// only: absence of violations on the samples is not a proof.
pub fn assumption_probe<M: MeanFieldModel>(model: &M, sampler: &ProbeSampler) -> ProbeReport {
    let d = model.dims();
    let a = model.assumptions();
    let mut rows: Vec<[f64; 3]> = Vec::with_capacity(sampler.n_samples);
    let mut values = Vec::with_capacity(sampler.n_samples);
    let mut radii = Vec::with_capacity(sampler.n_samples);
    let mut failed = 0;
    let mut coercivity_max = f64::NEG_INFINITY;
    let mut slow_growth_ratio = f64::NEG_INFINITY;
    let (mut b, mut s, mut f, mut g) = (
        vec![0.0; d.slow],
        vec![0.0; d.slow * d.slow_noise],
        vec![0.0; d.fast],
        vec![0.0; d.fast * d.fast_noise],
    );
    for i in 0..sampler.n_samples {
        let mut rng = generator(derive_seed(sampler.seed, Purpose::Probe, &[i as u64]));
        let mu = random_measure(&mut rng, d.slow, sampler.ensemble_size.max(1), sampler.measure_scale);
        let nu = random_measure(&mut rng, d.fast, sampler.ensemble_size.max(1), sampler.measure_scale);
        let x = ball_point(&mut rng, d.slow, sampler.x_radius);
        let y = ball_point(&mut rng, d.fast, sampler.y_radius);
        let law = match model.law(&mu, &nu) {
            Ok(l) => l,
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        model.slow_drift(&law, &x, &y, &mut b);
        model.slow_diffusion(&law, &x, &y, &mut s);
        model.fast_drift(&law, &y, &mut f);
        model.fast_diffusion(&law, &y, &mut g);
        let ry = dot(&y, &y).sqrt();
        let coercive = 2.0 * dot(&f, &y) + a.k0 * ry.powf(a.q);
        let value = coercive + dot(&g, &g);
        let m2_mu = second_moment(&mu);
        let m2_nu = second_moment(&nu);
        let slow = (2.0 * dot(&b, &x) - a.k0_tilde * ry.powf(a.q)) / (1.0 + dot(&x, &x) + m2_mu + m2_nu);
        if !(value.is_finite() && slow.is_finite()) {
            failed += 1;
            continue;
        }
        coercivity_max = coercivity_max.max(coercive);
        slow_growth_ratio = slow_growth_ratio.max(slow);
        rows.push([-ry * ry, m2_nu, 1.0]);
        values.push(value);
        radii.push(ry);
    }

    let mut violations = Vec::new();
    if failed > 0 {
        violations.push(format!("{failed} samples failed to evaluate"));
    }
    let fitted = fit(&rows, &values);
    let half = 0.5 * sampler.y_radius;
    let (mut core, mut outer) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (v, r) in values.iter().zip(&radii) {
        if *r <= half {
            core = core.max(*v);
        } else {
            outer = outer.max(*v);
        }
    }
    match fitted {
        Some(c) if c.k1 <= c.k2.max(0.0) => violations.push(format!(
            "fast dissipativity: fitted K1 = {} does not exceed max(K2, 0) = {}",
            c.k1,
            c.k2.max(0.0)
        )),
        None => violations.push("fast dissipativity: least-squares fit is degenerate".to_string()),
        _ => {}
    }
    if core.is_finite() && outer > core + 1e-9 * (1.0 + core.abs()) {
        violations.push(format!(
            "fast functional grows outside |y| <= {half}: outer max {outer} > core max {core}"
        ));
    }
    ProbeReport {
        samples: values.len(),
        failed_samples: failed,
        fitted: fitted.unwrap_or(FittedConstants {
            k1: f64::NAN,
            k2: f64::NAN,
            c: f64::NAN,
        }),
        fast_core_max: core,
        fast_outer_max: outer,
        coercivity_max,
        slow_growth_ratio,
        violations,
    }
}

fn fit(rows: &[[f64; 3]], values: &[f64]) -> Option<FittedConstants> {
    if rows.len() < 3 {
        return None;
    }
    let x = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(values);
    let svd = x.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-12 * svd.singular_values.max()).ok()?;
    let (k1, k2) = (coef[0], coef[1]);
    let c = rows
        .iter()
        .zip(values)
        .map(|(r, v)| v - k1 * r[0] - k2 * r[1])
        .fold(f64::NEG_INFINITY, f64::max);
    Some(FittedConstants { k1, k2, c })
}
