//! Seeded instance generators shared by the integration targets.
#![allow(dead_code)]

use bregflow::flow::FlowConfig;
use bregflow::model::{LinkKind, LossKind};
use bregflow::{Matrix, ProblemInstance, ReparamFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FAMILIES: [ReparamFamily; 5] = [
    ReparamFamily::Identity,
    ReparamFamily::Power { p: 1.2 },
    ReparamFamily::Power { p: 1.8 },
    ReparamFamily::Sinh,
    ReparamFamily::Tanh,
];

/// `(rows, cols)` of the five suite instances.
pub const SUITE_DIMS: [(usize, usize); 5] = [(1, 2), (1, 3), (2, 3), (2, 4), (1, 4)];

pub const SUITE_ALPHA: f64 = 0.05;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Suite instance `k` for a family: seeded Gaussian `A`, `y = A z_true`
/// with `z_true` inside the domain, `w̃0 = 0.05·1`, squared loss.
pub fn suite_instance(f: ReparamFamily, k: usize) -> ProblemInstance {
    let (m, n) = SUITE_DIMS[k];
    let mut r = rng(1000 + k as u64);
    let a = gaussian(&mut r, m, n);
    let bound = if f == ReparamFamily::Tanh { 0.3 } else { 1.5 };
    let z_true = uniform_vec(&mut r, n, -bound, bound);
    let y = a.mul_vec(&z_true);
    ProblemInstance::with_alpha(a, y, LinkKind::Identity, LossKind::SquaredL2, f, SUITE_ALPHA).unwrap()
}

/// Accurate integrator for continuous-flow claims.
pub fn adaptive_cfg() -> FlowConfig {
    FlowConfig::adaptive(1e-10, 1e-12, 1e5).with_loss_tol(1e-16)
}

pub fn line(a0: f64, a1: f64) -> Matrix {
    Matrix::from_rows(&[vec![a0, a1]]).unwrap()
}

pub const LOSSES: [LossKind; 3] = [LossKind::SquaredL2, LossKind::Power { q: 1.1 }, LossKind::Power { q: 1.5 }];
pub const LINKS: [LinkKind; 2] = [LinkKind::Identity, LinkKind::Cubic];

/// Worst relative error `‖fd − ∇‖∞ / ‖∇‖∞` of `full_grad` against central
/// differences with step `1e−6`, over `points` seeded points per
/// (family, loss, link). Power points within `1e−3` of a zero coordinate
/// are skipped.
pub fn worst_gradient_error(points: usize) -> f64 {
    use bregflow::model::{full_grad, full_loss};
    let mut worst = 0.0f64;
    for (fi, f) in FAMILIES.into_iter().enumerate() {
        for (li, loss) in LOSSES.into_iter().enumerate() {
            for (ki, link) in LINKS.into_iter().enumerate() {
                let mut r = rng(7000 + 100 * fi as u64 + 10 * li as u64 + ki as u64);
                let a = gaussian(&mut r, 2, 3);
                let y = uniform_vec(&mut r, 2, -1.0, 1.0);
                let mut done = 0;
                while done < points {
                    let w = uniform_vec(&mut r, 3, -1.5, 1.5);
                    if matches!(f, ReparamFamily::Power { .. }) && w.iter().any(|v| v.abs() < 1e-3) {
                        continue;
                    }
                    let inst = ProblemInstance::new(a.clone(), y.clone(), link, loss, f, w.clone()).unwrap();
                    let g = full_grad(&inst, &w).unwrap();
                    let h = 1e-6;
                    let mut err = 0.0f64;
                    for i in 0..w.len() {
                        let mut wp = w.clone();
                        let mut wm = w.clone();
                        wp[i] += h;
                        wm[i] -= h;
                        let fd = (full_loss(&inst, &wp).unwrap() - full_loss(&inst, &wm).unwrap()) / (2.0 * h);
                        err = err.max((fd - g[i]).abs());
                    }
                    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
                    worst = worst.max(err / scale);
                    done += 1;
                }
            }
        }
    }
    worst
}
