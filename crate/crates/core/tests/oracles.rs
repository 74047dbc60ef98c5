mod common;

use bregflow::bias::{bregman_divergence, g_sinh};
use bregflow::linalg::{max_abs_diff, norm_inf, sub, svd, Matrix};
use bregflow::oracle::{
    bregman_projection, brute_force_line, lp_min, min_norm_least_squares, OracleError, OracleSolution,
    SolveOptions, KKT_TOL,
};
use bregflow::ReparamFamily;
use common::{gaussian, line, rng, uniform_vec, FAMILIES};
use rand::Rng;

fn opts() -> SolveOptions {
    SolveOptions::default()
}

/// Feasible seeded instance: `υ = A z_true` with `z_true` inside the domain,
/// and an interior `w̃0`.
fn instance(f: ReparamFamily, seed: u64) -> (Matrix, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let m = r.random_range(1..3);
    let n = r.random_range(m + 1..5);
    let a = gaussian(&mut r, m, n);
    let (zb, wb) = if f == ReparamFamily::Tanh { (0.4, 0.5) } else { (2.0, 1.0) };
    let z_true = uniform_vec(&mut r, n, -zb, zb);
    let mut w0 = uniform_vec(&mut r, n, -wb, wb);
    if matches!(f, ReparamFamily::Power { .. }) {
        w0.iter_mut().for_each(|w| *w = w.abs().max(1e-3));
    }
    (a.clone(), a.mul_vec(&z_true), w0)
}

fn assert_certified(sol: &OracleSolution, what: &str) {
    assert!(sol.kkt_residual_primal <= KKT_TOL, "{what}: primal {:e}", sol.kkt_residual_primal);
    assert!(
        sol.kkt_residual_stationarity <= KKT_TOL,
        "{what}: stationarity {:e}",
        sol.kkt_residual_stationarity
    );
    assert!(
        sol.residual_history.windows(2).all(|w| w[1] <= w[0]),
        "{what}: residuals {:?}",
        sol.residual_history
    );
}

#[test]
fn projections_are_kkt_certified() {
    for f in FAMILIES {
        for seed in 0..20 {
            let (a, u, w0) = instance(f, 10 * seed + 7);
            let sol = bregman_projection(f, &a, &u, &w0, &opts()).unwrap_or_else(|e| panic!("{f:?} seed {seed}: {e}"));
            assert_certified(&sol, &format!("{f:?} seed {seed}"));
            // Independent primal check of feasibility.
            assert!(norm_inf(&sub(&a.mul_vec(&sol.z_star), &u)) <= 1e-8);
        }
    }
}

#[test]
fn lp_min_is_kkt_certified() {
    for p in [1.1, 1.2, 1.5, 1.8, 2.0] {
        for seed in 0..20 {
            let (a, u, _) = instance(ReparamFamily::Identity, 500 + seed);
            let sol = lp_min(&a, &u, p, &opts()).unwrap_or_else(|e| panic!("p={p} seed {seed}: {e}"));
            assert_certified(&sol, &format!("p={p} seed {seed}"));
        }
    }
}

#[test]
fn projection_matches_brute_force_on_lines() {
    let mut r = rng(77);
    for f in FAMILIES {
        for _ in 0..6 {
            let a = line(r.random_range(-1.5..1.5), r.random_range(0.3..1.5));
            let zb = if f == ReparamFamily::Tanh { 0.6 } else { 2.0 };
            let z_true = uniform_vec(&mut r, 2, -zb, zb);
            let u = a.mul_vec(&z_true);
            let w0 = match f {
                ReparamFamily::Power { .. } => vec![0.05, 0.05],
                _ => uniform_vec(&mut r, 2, -0.3, 0.3),
            };
            let sol = bregman_projection(f, &a, &u, &w0, &opts()).unwrap();
            let bf = brute_force_line(&a, &u, |z| {
                bregman_divergence(f, z, &w0).map_or(f64::INFINITY, |v| v.to_f64())
            })
            .unwrap();
            let d = max_abs_diff(&sol.z_star, &bf);
            assert!(d <= 1e-6, "{f:?} a={:?} u={u:?}: oracle {:?} grid {bf:?}", a.row(0), sol.z_star);
        }
    }
}

#[test]
fn lp_min_matches_brute_force_on_lines() {
    let mut r = rng(78);
    for p in [1.2, 1.5, 1.8] {
        for _ in 0..6 {
            let a = line(r.random_range(-1.5..1.5), r.random_range(0.3..1.5));
            let u = [r.random_range(-3.0..3.0)];
            let sol = lp_min(&a, &u, p, &opts()).unwrap();
            let bf = brute_force_line(&a, &u, |z| z.iter().map(|x| x.abs().powf(p)).sum()).unwrap();
            assert!(max_abs_diff(&sol.z_star, &bf) <= 1e-6, "p={p}: {:?} vs {bf:?}", sol.z_star);
        }
    }
}

/// Minimizers on the two reference lines, generated by this crate's dual
/// Newton solver and confirmed by the grid search in the same test.
#[test]
fn pinned_reference_minimizers() {
    let fig1a = line(-0.7, 1.0);
    let fig1b = line(-0.7, -1.0);
    let cases = [
        (&fig1a, 1.2, [-3.0075631973902328e-1, 1.7894705761826830e0]),
        (&fig1b, 1.8, [-8.8424862499857215e-1, -1.3810259625010117e0]),
    ];
    for (a, p, pinned) in cases {
        let sol = lp_min(a, &[2.0], p, &opts()).unwrap();
        assert!(max_abs_diff(&sol.z_star, &pinned) <= 1e-9, "p={p}: {:?}", sol.z_star);
        let bf = brute_force_line(a, &[2.0], |z| z.iter().map(|x| x.abs().powf(p)).sum()).unwrap();
        assert!(max_abs_diff(&bf, &pinned) <= 1e-6);
    }
    let sol = bregman_projection(ReparamFamily::Sinh, &fig1a, &[2.0], &[0.0, 0.0], &opts()).unwrap();
    let bf = brute_force_line(&fig1a, &[2.0], g_sinh).unwrap();
    assert!(max_abs_diff(&sol.z_star, &bf) <= 1e-6);
}

#[test]
fn perturbations_increase_the_objective() {
    for f in FAMILIES {
        let (a, u, w0) = instance(f, 901);
        let sol = bregman_projection(f, &a, &u, &w0, &opts()).unwrap();
        let dec = svd(&a);
        let at_star = bregman_divergence(f, &sol.z_star, &w0).unwrap().to_f64();
        let mut r = rng(902);
        for _ in 0..20 {
            let delta = uniform_vec(&mut r, a.cols(), -1e-2, 1e-2);
            let along_null = sub(&delta, &dec.project_row_space(&delta));
            let z: Vec<f64> = sol.z_star.iter().zip(&along_null).map(|(x, d)| x + d).collect();
            assert!(norm_inf(&sub(&a.mul_vec(&z), &u)) <= 1e-8);
            let v = bregman_divergence(f, &z, &w0).unwrap().to_f64();
            assert!(v > at_star, "{f:?}: perturbed {v} <= optimum {at_star}");
        }
    }
}

#[test]
fn identity_projection_from_zero_is_min_norm() {
    for seed in 0..10 {
        let (a, u, _) = instance(ReparamFamily::Identity, 300 + seed);
        let sol = bregman_projection(ReparamFamily::Identity, &a, &u, &vec![0.0; a.cols()], &opts()).unwrap();
        assert!(max_abs_diff(&sol.z_star, &min_norm_least_squares(&a, &u)) <= 1e-10);
        let lp2 = lp_min(&a, &u, 2.0, &opts()).unwrap();
        assert!(max_abs_diff(&lp2.z_star, &min_norm_least_squares(&a, &u)) <= 1e-9);
    }
}

#[test]
fn symmetric_line_gives_symmetric_solution() {
    let a = line(1.0, 1.0);
    for f in FAMILIES {
        let u = if f == ReparamFamily::Tanh { 1.0 } else { 2.0 };
        let alpha = 0.2;
        let sol = bregman_projection(f, &a, &[u], &[alpha, alpha], &opts()).unwrap();
        assert!((sol.z_star[0] - sol.z_star[1]).abs() <= 1e-14, "{f:?} {:?}", sol.z_star);
        assert!(max_abs_diff(&sol.z_star, &[u / 2.0, u / 2.0]) <= 1e-9, "{f:?} {:?}", sol.z_star);
    }
}

#[test]
fn min_norm_normal_equations() {
    let mut r = rng(41);
    for _ in 0..10 {
        let a = gaussian(&mut r, 2, 4);
        let u = uniform_vec(&mut r, 2, -2.0, 2.0);
        let z = min_norm_least_squares(&a, &u);
        let at = a.transpose();
        let lhs = at.mul_vec(&a.mul_vec(&z));
        assert!(max_abs_diff(&lhs, &at.mul_vec(&u)) <= 1e-10);
        assert!(max_abs_diff(&z, &svd(&a).project_row_space(&z)) <= 1e-12);
    }
    assert_eq!(min_norm_least_squares(&line(1.0, 0.0), &[1.0]), vec![1.0, 0.0]);
    let z = min_norm_least_squares(&Matrix::identity(3), &[1.0, -2.0, 0.5]);
    assert!(max_abs_diff(&z, &[1.0, -2.0, 0.5]) <= 1e-15);
}

#[test]
fn infeasibility_is_reported() {
    let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let err = bregman_projection(ReparamFamily::Sinh, &a, &[1.0, 2.0], &[0.0, 0.0], &opts()).unwrap_err();
    assert!(matches!(err, OracleError::Infeasible { .. }), "{err:?}");
    let err = lp_min(&a, &[1.0, 2.0], 1.5, &opts()).unwrap_err();
    assert!(matches!(err, OracleError::Infeasible { .. }), "{err:?}");

    let err = bregman_projection(ReparamFamily::Tanh, &line(0.8, -0.5), &[1.3], &[0.0, 0.0], &opts()).unwrap_err();
    assert_eq!(err, OracleError::BoxInfeasible { row: 0 });
}

#[test]
fn rank_deficient_rows_are_regularized() {
    let a = Matrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![2.0, 4.0, -2.0]]).unwrap();
    let u = [1.0, 2.0];
    for f in [ReparamFamily::Identity, ReparamFamily::Sinh, ReparamFamily::Power { p: 1.5 }] {
        let sol = bregman_projection(f, &a, &u, &[0.1, 0.1, 0.1], &opts()).unwrap();
        assert_certified(&sol, &format!("{f:?}"));
    }
}
