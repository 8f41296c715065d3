use mvscale::measures::{
    covariance, min_cost_assignment, moment, psd_sqrt, wasserstein2, weighted_mean_ell, weighted_mean_h,
    PsdMatrix,
};
use mvscale::Ensemble;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn ensemble(dim: usize, data: Vec<f64>) -> Ensemble {
    Ensemble::new(dim, data).unwrap()
}

/// Brute-force W2 over all permutations.
fn brute_w2(a: &[f64], b: &[f64]) -> f64 {
    fn rec(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                rec(a, b, used, i + 1, acc + (a[i] - b[j]).powi(2), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    (best / a.len() as f64).sqrt()
}

fn points(dim: usize, n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(move |n| prop::collection::vec(-5.0..5.0_f64, n * dim))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weighted_mean_bound(
        ys in prop::collection::vec(-4.0..4.0_f64, 1..40),
        amp in 0.0..3.0_f64,
        freq in 0.1..3.0_f64,
        floor in -2.0..2.0_f64,
        beta in 0.05..5.0_f64,
    ) {
        // inf h = floor over the real line.
        let h = move |y: &[f64]| floor + amp * (freq * y[0]).sin().powi(2);
        let nu = Ensemble::from_scalars(&ys).unwrap();
        let vals: Vec<f64> = ys.iter().map(|y| h(&[*y]) - floor).collect();
        let cl = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let cu = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m = weighted_mean_h(&nu, h, beta).unwrap();
        let lhs = m[0] * m[0];
        let rhs = (-2.0 * beta * (cl - cu)).exp() * moment(&nu, 2.0).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300, "{lhs} > {rhs}");
    }

    #[test]
    fn w2_is_a_metric(
        n in 1..16_usize,
        seed in prop::collection::vec(-3.0..3.0_f64, 3 * 2 * 16),
    ) {
        let take = |k: usize| ensemble(2, seed[k * 32..k * 32 + 2 * n].to_vec());
        let (a, b, c) = (take(0), take(1), take(2));
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        prop_assert!(!ab.approximate);
        prop_assert_eq!(ab.value, ba.value);
        let ac = wasserstein2(&a, &c).unwrap().value;
        let cb = wasserstein2(&c, &b).unwrap().value;
        prop_assert!(ab.value <= ac + cb + 1e-10);
        prop_assert_eq!(wasserstein2(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn sorted_w2_matches_assignment(
        n in 1..=64_usize,
        raw in prop::collection::vec(-10.0..10.0_f64, 128),
    ) {
        let (xa, xb) = (&raw[..n], &raw[64..64 + n]);
        let sorted = wasserstein2(
            &Ensemble::from_scalars(xa).unwrap(),
            &Ensemble::from_scalars(xb).unwrap(),
        ).unwrap().value;
        let cost: Vec<f64> = xa.iter().flat_map(|a| xb.iter().map(move |b| (a - b) * (a - b))).collect();
        let perm = min_cost_assignment(&cost, n);
        let assigned = (perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64).sqrt();
        prop_assert!((sorted - assigned).abs() <= 1e-10 * (1.0 + sorted), "{sorted} vs {assigned}");
    }

    #[test]
    fn small_w2_matches_brute_force(
        n in 1..=6_usize,
        raw in prop::collection::vec(-3.0..3.0_f64, 24),
    ) {
        let a = ensemble(2, raw[..2 * n].to_vec());
        let b = ensemble(2, raw[12..12 + 2 * n].to_vec());
        let w = wasserstein2(&a, &b).unwrap().value;
        // Coordinates flattened: brute force on the 2D cost directly.
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permutations(&mut perm, 0, &mut |p| {
            let c: f64 = (0..n)
                .map(|i| {
                    let (x, y) = (a.particle(i), b.particle(p[i]));
                    (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)
                })
                .sum();
            best = best.min(c);
        });
        prop_assert!((w - (best / n as f64).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn covariance_translation_invariant(
        ints in (0..6_u32).prop_flat_map(|k| prop::collection::vec(-64i32..64, 2 << k)),
        shift in -16i32..16,
    ) {
        // Dyadic data and power-of-two counts keep every operation exact.
        let data: Vec<f64> = ints.iter().map(|&v| v as f64 / 8.0).collect();
        let mu = ensemble(2, data);
        let c = [shift as f64, -(shift as f64) / 4.0];
        prop_assert_eq!(covariance(&mu), covariance(&mu.translated(&c).unwrap()));
    }

    #[test]
    fn covariance_translation_invariant_generic(
        data in points(3, 1..=30),
        shift in prop::collection::vec(-100.0..100.0_f64, 3),
    ) {
        let mu = ensemble(3, data);
        let a = covariance(&mu);
        let b = covariance(&mu.translated(&shift).unwrap());
        let scale = 1.0 + a.matrix().amax() + shift.iter().map(|v| v * v).sum::<f64>();
        prop_assert!((a.matrix() - b.matrix()).amax() <= 1e-12 * scale);
    }

    #[test]
    fn exp_shift_invariance(
        data in points(2, 1..=30),
        ys in prop::collection::vec(-3.0..3.0_f64, 1..30),
        shift in -20.0..20.0_f64,
        alpha in 0.1..50.0_f64,
        beta in 0.1..50.0_f64,
    ) {
        let mu = ensemble(2, data);
        let nu = Ensemble::from_scalars(&ys).unwrap();
        let h = |y: &[f64]| (y[0] - 0.5).powi(2);
        let a = weighted_mean_h(&nu, h, beta).unwrap();
        let b = weighted_mean_h(&nu, |y| h(y) + shift, beta).unwrap();
        prop_assert!((a[0] - b[0]).abs() <= 1e-12 * (1.0 + a[0].abs()));
        let ell = |x: &[f64], y: &[f64]| (x[0] - y[0]).powi(2) + x[1] * x[1];
        let a = weighted_mean_ell(&mu, &nu, ell, alpha, beta, h).unwrap();
        let b = weighted_mean_ell(&mu, &nu, |x, y| ell(x, y) + shift, alpha, beta, |y| h(y) + shift).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn psd_sqrt_reconstructs(entries in prop::collection::vec(-2.0..2.0_f64, 9)) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let m = &a * a.transpose();
        let s = psd_sqrt(&PsdMatrix::new(m.clone()).unwrap()).unwrap();
        let err = (s.matrix() * s.matrix() - &m).norm();
        prop_assert!(err <= 1e-8 * m.norm().max(1e-300) + 1e-14, "error {err}");
        prop_assert!(s.eigenvalues()[0] >= -1e-12);
    }
}

fn permutations(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, f);
        p.swap(k, i);
    }
}

#[test]
fn brute_force_oracle_agrees_in_one_dimension() {
    let a = [0.0, 2.0];
    let b = [1.0, 1.0];
    let w = wasserstein2(&Ensemble::from_scalars(&a).unwrap(), &Ensemble::from_scalars(&b).unwrap()).unwrap();
    assert_eq!(w.value, brute_w2(&a, &b));
    assert_eq!(w.value, 1.0);
}

#[test]
fn large_ensembles_fall_back_to_sliced() {
    let data: Vec<f64> = (0..2 * 600).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = ensemble(2, data.clone());
    let b = a.translated(&[0.5, 0.0]).unwrap();
    let w = wasserstein2(&a, &b).unwrap();
    assert!(w.approximate);
    assert!(w.value > 0.0 && w.value <= 0.5 + 1e-12);
}
