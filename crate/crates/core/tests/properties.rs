mod common;

use bregflow::bias::{bias_objective, bregman_divergence};
use bregflow::linalg::{max_abs_diff, sigma_min_nonzero, Matrix};
use bregflow::model::{loss_grad, loss_value, LossKind};
use bregflow::ReparamFamily;
use common::{gaussian, rng, uniform_vec, FAMILIES};
use proptest::prelude::*;
use rand::Rng;

/// A closed interval strictly inside the domain, for sampling.
fn sample_range(f: ReparamFamily) -> (f64, f64) {
    match f {
        ReparamFamily::Tanh => (-0.99, 0.99),
        _ => (-5.0, 5.0),
    }
}

fn family_strategy() -> impl Strategy<Value = ReparamFamily> {
    prop_oneof![
        Just(ReparamFamily::Identity),
        (1.01f64..1.99).prop_map(|p| ReparamFamily::Power { p }),
        Just(ReparamFamily::Sinh),
        Just(ReparamFamily::Tanh),
    ]
}

#[test]
fn round_trips_on_seeded_samples() {
    for (k, f) in FAMILIES.into_iter().enumerate() {
        let mut r = rng(k as u64);
        let (lo, hi) = sample_range(f);
        for _ in 0..100 {
            let zt: f64 = r.random_range(lo..hi);
            let w = f.inverse(zt).unwrap();
            let back = f.apply(w);
            assert!((back - zt).abs() <= 1e-10, "{f:?} apply(inverse({zt})) = {back}");
            let w2: f64 = r.random_range(-3.0..3.0);
            let again = f.inverse(f.apply(w2)).unwrap();
            assert!((again - w2).abs() <= 1e-10, "{f:?} inverse(apply({w2})) = {again}");
            let v = f.h(zt).unwrap();
            let zz = f.h_inverse(v).unwrap();
            assert!((zz - zt).abs() <= 1e-10, "{f:?} h_inverse(h({zt})) = {zz}");
        }
    }
}

#[test]
fn h_prime_matches_central_differences() {
    let step = 1e-6;
    for (k, f) in FAMILIES.into_iter().enumerate() {
        let mut r = rng(100 + k as u64);
        let (lo, hi) = sample_range(f);
        let mut checked = 0;
        while checked < 100 {
            let zt: f64 = r.random_range(lo..hi);
            if matches!(f, ReparamFamily::Power { .. }) && zt.abs() < 1e-2 {
                continue;
            }
            let fd = (f.h(zt + step).unwrap() - f.h(zt - step).unwrap()) / (2.0 * step);
            let hp = f.h_prime(zt).unwrap();
            assert!((fd - hp).abs() <= 1e-5 * hp.abs(), "{f:?} at {zt}: fd {fd}, h' {hp}");
            checked += 1;
        }
    }
}

#[test]
fn metric_identity_at_interior_points() {
    for (k, f) in FAMILIES.into_iter().enumerate() {
        let mut r = rng(200 + k as u64);
        let (lo, hi) = sample_range(f);
        for _ in 0..100 {
            let zt: f64 = r.random_range(lo..hi);
            if zt == 0.0 && matches!(f, ReparamFamily::Power { .. }) {
                continue;
            }
            let d = f.derivative(f.inverse(zt).unwrap());
            let prod = f.h_prime(zt).unwrap() * d * d;
            assert!((prod - 1.0).abs() <= 1e-10, "{f:?} at {zt}: {prod}");
            let inv = f.inv_h_prime(zt);
            assert!((inv * f.h_prime(zt).unwrap() - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn h_increasing_and_potential_convex_on_grids() {
    for f in FAMILIES {
        let (lo, hi) = sample_range(f);
        let grid: Vec<f64> = (0..=400).map(|i| lo + (hi - lo) * i as f64 / 400.0).collect();
        let h: Vec<f64> = grid.iter().map(|&z| f.h(z).unwrap()).collect();
        assert!(h.windows(2).all(|w| w[0] < w[1]), "{f:?}: h not strictly increasing");
        let pot: Vec<f64> = grid.iter().map(|&z| f.H(z).unwrap().to_f64()).collect();
        for w in pot.windows(3) {
            let second = w[0] - 2.0 * w[1] + w[2];
            assert!(second >= -1e-12 * w[1].abs().max(1.0), "{f:?}: second difference {second}");
        }
    }
}

/// Integrates `h′` over `[−δ, δ]` on a geometric mesh accumulating at the
/// singularity, composite Simpson on each cell.
fn quad_h_prime(f: ReparamFamily, delta: f64) -> f64 {
    let ratio: f64 = 0.8;
    let mut total = 0.0;
    let mut b = delta;
    for _ in 0..400 {
        let a = b * ratio;
        let cell = |lo: f64, hi: f64| {
            let n = 8;
            let h = (hi - lo) / n as f64;
            let mut s = f.h_prime(lo).unwrap() + f.h_prime(hi).unwrap();
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f.h_prime(lo + i as f64 * h).unwrap();
            }
            s * h / 3.0
        };
        total += cell(a, b);
        b = a;
    }
    // h′ is even; the neglected core [−b, b] has mass O(b^{p−1}).
    2.0 * total
}

#[test]
fn power_h_prime_is_integrable_at_zero() {
    for p in [1.2, 1.5, 1.8] {
        let f = ReparamFamily::Power { p };
        let mut previous = f64::INFINITY;
        for delta in [1.0, 1e-1, 1e-2, 1e-4, 1e-6, 1e-8] {
            let q = quad_h_prime(f, delta);
            let exact = f.h(delta).unwrap() - f.h(-delta).unwrap();
            assert!((q - exact).abs() <= 1e-6 * exact, "p={p} δ={delta}: {q} vs {exact}");
            assert!(q < previous);
            previous = q;
        }
        assert!(previous < 0.1 * quad_h_prime(f, 1.0));
    }
}

#[test]
fn bregman_divergence_nonnegative_and_separates() {
    for (k, f) in FAMILIES.into_iter().enumerate() {
        let mut r = rng(300 + k as u64);
        let (lo, hi) = sample_range(f);
        for _ in 0..200 {
            let n = r.random_range(1..5);
            let p = uniform_vec(&mut r, n, lo, hi);
            let q = uniform_vec(&mut r, n, lo, hi);
            let d = bregman_divergence(f, &p, &q).unwrap().to_f64();
            assert!(d >= 0.0, "{f:?}: D({p:?}, {q:?}) = {d}");
            if max_abs_diff(&p, &q) > 1e-3 {
                assert!(d > 0.0, "{f:?}: D({p:?}, {q:?}) = 0 for distinct points");
            }
            assert_eq!(bregman_divergence(f, &q, &q).unwrap().to_f64(), 0.0);
        }
    }
}

#[test]
fn bias_objective_and_divergence_share_argmin() {
    for (k, f) in FAMILIES.into_iter().enumerate() {
        let mut r = rng(400 + k as u64);
        let (lo, hi) = sample_range(f);
        for _ in 0..50 {
            let n = r.random_range(1..5);
            let w0 = uniform_vec(&mut r, n, 0.5 * lo, 0.5 * hi);
            let cands: Vec<Vec<f64>> = (0..12).map(|_| uniform_vec(&mut r, n, lo, hi)).collect();
            let argmin = |vals: Vec<f64>| {
                vals.iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap()
            };
            let by_obj = argmin(cands.iter().map(|c| bias_objective(f, c, &w0).unwrap().value).collect());
            let by_div = argmin(
                cands
                    .iter()
                    .map(|c| bregman_divergence(f, c, &w0).unwrap().to_f64())
                    .collect(),
            );
            assert_eq!(by_obj, by_div, "{f:?}");
        }
    }
}

#[test]
fn loss_zero_iff_equal() {
    let mut r = rng(500);
    for loss in [LossKind::SquaredL2, LossKind::Power { q: 1.1 }, LossKind::Power { q: 3.0 }] {
        for _ in 0..100 {
            let n = r.random_range(1..5);
            let y = uniform_vec(&mut r, n, -3.0, 3.0);
            assert_eq!(loss_value(loss, &y, &y).unwrap(), 0.0);
            let mut z = y.clone();
            let i = r.random_range(0..n);
            z[i] += r.random_range(1e-6..1.0);
            assert!(loss_value(loss, &z, &y).unwrap() > 0.0);
        }
    }
}

#[test]
fn squared_loss_pl_inequality() {
    let mut r = rng(501);
    for _ in 0..100 {
        let n = r.random_range(1..6);
        let z = uniform_vec(&mut r, n, -3.0, 3.0);
        let y = uniform_vec(&mut r, n, -3.0, 3.0);
        let g = loss_grad(LossKind::SquaredL2, &z, &y).unwrap();
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let l = loss_value(LossKind::SquaredL2, &z, &y).unwrap();
        assert!(g2 >= 2.0 * 2.0 * l * (1.0 - 1e-14), "{g2} vs {}", 4.0 * l);
        assert!((g2 - 4.0 * l).abs() <= 1e-12 * g2.max(1.0));
    }
}

/// Eigenvalues of a symmetric 3×3 from its characteristic polynomial
/// `λ³ − c2 λ² + c1 λ − c0`, trigonometric form of the cubic roots.
fn char_poly_eigenvalues(m: [[f64; 3]; 3]) -> [f64; 3] {
    let c2 = m[0][0] + m[1][1] + m[2][2];
    let c1 = m[0][0] * m[1][1] + m[1][1] * m[2][2] + m[0][0] * m[2][2]
        - m[0][1] * m[1][0]
        - m[1][2] * m[2][1]
        - m[0][2] * m[2][0];
    let c0 = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    // Depressed cubic t³ + P t + Q with λ = t + c2/3.
    let s = c2 / 3.0;
    let pp = c1 - c2 * c2 / 3.0;
    let qq = -2.0 * s * s * s + c1 * s - c0;
    if pp.abs() < 1e-300 {
        return [s; 3];
    }
    let r = 2.0 * (-pp / 3.0).sqrt();
    let arg = (3.0 * qq / (pp * r)).clamp(-1.0, 1.0);
    let phi = arg.acos() / 3.0;
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = s + r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
    }
    out
}

fn gram3(a: &Matrix) -> [[f64; 3]; 3] {
    let mut g = [[0.0; 3]; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        for (j, gij) in gi.iter_mut().enumerate() {
            *gij = (0..a.cols()).map(|k| a.get(i, k) * a.get(j, k)).sum();
        }
    }
    g
}

#[test]
fn sigma_min_matches_characteristic_polynomial() {
    for seed in 0..20u64 {
        let mut r = rng(600 + seed);
        let mut a = gaussian(&mut r, 3, 5);
        if seed % 4 == 3 {
            // Rank two: third row is the sum of the first two.
            let mut rows = a.to_rows();
            rows[2] = rows[0].iter().zip(&rows[1]).map(|(x, y)| x + y).collect();
            a = Matrix::from_rows(&rows).unwrap();
        }
        let eig = char_poly_eigenvalues(gram3(&a));
        let scale = eig.iter().cloned().fold(0.0, f64::max);
        let smallest_nonzero = eig
            .iter()
            .cloned()
            .filter(|&l| l > 1e-9 * scale)
            .fold(f64::INFINITY, f64::min);
        let info = sigma_min_nonzero(&a).unwrap();
        let s2 = info.sigma_min_nonzero * info.sigma_min_nonzero;
        assert!(
            (s2 - smallest_nonzero).abs() <= 1e-10 * smallest_nonzero.max(1e-3 * scale),
            "seed {seed}: {s2} vs {smallest_nonzero}"
        );
        assert_eq!(info.rank, if seed % 4 == 3 { 2 } else { 3 });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prop_apply_inverse(f in family_strategy(), u in -0.98f64..0.98) {
        let (lo, hi) = sample_range(f);
        let zt = lo + (u + 0.98) / 1.96 * (hi - lo);
        let w = f.inverse(zt).unwrap();
        prop_assert!((f.apply(w) - zt).abs() <= 1e-10);
        prop_assert!(f.derivative(w) >= 0.0);
    }

    #[test]
    fn prop_h_round_trip(f in family_strategy(), u in -0.98f64..0.98) {
        let (lo, hi) = sample_range(f);
        let zt = lo + (u + 0.98) / 1.96 * (hi - lo);
        let back = f.h_inverse(f.h(zt).unwrap()).unwrap();
        prop_assert!((back - zt).abs() <= 1e-10, "{:?} {} -> {}", f, zt, back);
    }

    #[test]
    fn prop_apply_monotone(f in family_strategy(), a in -4.0f64..4.0, b in -4.0f64..4.0) {
        prop_assume!(a < b);
        prop_assert!(f.apply(a) < f.apply(b));
    }

    #[test]
    fn prop_divergence_nonnegative(
        f in family_strategy(),
        p in prop::collection::vec(-0.98f64..0.98, 1..5),
        seed in any::<u64>(),
    ) {
        let (lo, hi) = sample_range(f);
        let map = |u: f64| lo + (u + 0.98) / 1.96 * (hi - lo);
        let mut r = rng(seed);
        let q: Vec<f64> = p.iter().map(|_| map(r.random_range(-0.98..0.98))).collect();
        let p: Vec<f64> = p.into_iter().map(map).collect();
        let d = bregman_divergence(f, &p, &q).unwrap().to_f64();
        prop_assert!(d >= 0.0);
    }
}
