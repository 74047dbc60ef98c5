//! Constrained solvers that predict where the flow ends up.
//!
//! Both the Bregman projection `argmin { D_F(z̃, w̃0) : A z̃ = υ }` and the
//! ℓ_p minimization `argmin { ‖z̃‖_p^p : A z̃ = υ }` reduce to a root of the
//! dual equation `A ψ⁻¹(c + Aᵀν) = υ`, where `ψ` is the gradient of a
//! separable strictly convex potential and `c` a fixed offset. The root is
//! found by damped Newton with Jacobian `A diag(1/ψ′) Aᵀ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm_inf, solve, svd, LinalgError, Matrix, Svd};
use crate::reparam::{ReparamError, ReparamFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("A z = upsilon has no solution (least-squares residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("no solution inside (-1, 1)^N: |upsilon[{row}]| >= ||a_{row}||_1")]
    BoxInfeasible { row: usize },
    #[error(
        "dual Newton did not converge after {iterations} iterations \
         (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("initial point {index} is not inside the domain")]
    InitOutsideDomain { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("p must satisfy 1 < p <= 2 (got {0})")]
    InvalidExponent(f64),
    #[error("objective is not coercive on the search line (grid minimum at the boundary)")]
    NonCoercive,
    #[error("brute-force line search needs a rank-one 1x2 matrix")]
    NotALine,
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Reparam(#[from] ReparamError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub backtrack: f64,
    pub jacobian_regularization: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            backtrack: 0.5,
            jacobian_regularization: 1e-12,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.tol > 0.0) {
            return Err(OracleError::InvalidOptions("tol must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(OracleError::InvalidOptions("max_iter must be at least 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(OracleError::InvalidOptions("backtrack must lie in (0, 1)".into()));
        }
        if !(self.jacobian_regularization >= 0.0) {
            return Err(OracleError::InvalidOptions(
                "jacobian_regularization must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub z_star: Vec<f64>,
    pub dual: Vec<f64>,
    /// `‖A z⋆ − υ‖∞`
    pub kkt_residual_primal: f64,
    /// `‖(I − P_row(A)) (ψ(z⋆) − c)‖∞`
    pub kkt_residual_stationarity: f64,
    pub iterations: usize,
    /// `‖F(ν_k)‖₂` at every accepted iterate, starting with `ν_0`.
    pub residual_history: Vec<f64>,
}

/// Tolerance certifying a solution (both KKT residuals).
pub const KKT_TOL: f64 = 1e-8;

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Separable mirror map `ψ` with inverse and inverse derivative.
trait DualMap {
    fn forward(&self, z: f64) -> Result<f64, OracleError>;
    fn inverse(&self, v: f64) -> Option<f64>;
    /// `1 / ψ′(z)`
    fn inv_slope(&self, z: f64) -> f64;
}

struct BregmanMap(ReparamFamily);

impl DualMap for BregmanMap {
    fn forward(&self, z: f64) -> Result<f64, OracleError> {
        Ok(self.0.h(z)?)
    }

    fn inverse(&self, v: f64) -> Option<f64> {
        self.0.h_inverse(v).ok()
    }

    fn inv_slope(&self, z: f64) -> f64 {
        self.0.inv_h_prime(z)
    }
}

/// `ψ(z) = sign(z)|z|^{p−1}`, the gradient of `|z|^p / p`.
struct PowerMap(f64);

impl DualMap for PowerMap {
    fn forward(&self, z: f64) -> Result<f64, OracleError> {
        Ok(z.signum() * z.abs().powf(self.0 - 1.0))
    }

    fn inverse(&self, v: f64) -> Option<f64> {
        let z = v.signum() * v.abs().powf(1.0 / (self.0 - 1.0));
        z.is_finite().then_some(z)
    }

    fn inv_slope(&self, z: f64) -> f64 {
        z.abs().powf(2.0 - self.0) / (self.0 - 1.0)
    }
}

struct DualProblem<'a, M: DualMap> {
    map: M,
    a: &'a Matrix,
    dec: Svd,
    upsilon: &'a [f64],
    offset: Vec<f64>,
}

impl<M: DualMap> DualProblem<'_, M> {
    fn primal(&self, nu: &[f64]) -> Option<Vec<f64>> {
        let atn = self.a.tmul_vec(nu);
        self.offset
            .iter()
            .zip(&atn)
            .map(|(c, g)| self.map.inverse(c + g))
            .collect()
    }

    fn residual(&self, z: &[f64]) -> Vec<f64> {
        self.a
            .mul_vec(z)
            .iter()
            .zip(self.upsilon)
            .map(|(a, b)| a - b)
            .collect()
    }

    fn solve(&self, nu0: Vec<f64>, opts: &SolveOptions) -> Result<OracleSolution, OracleError> {
        let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut nu = nu0;
        let mut z = self
            .primal(&nu)
            .ok_or(OracleError::NoConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            })?;
        let mut r = self.residual(&z);
        let mut rn = norm2(&r);
        let mut history = vec![rn];
        let mut iterations = 0;

        while norm_inf(&r) > opts.tol {
            if iterations >= opts.max_iter {
                return Err(OracleError::NoConvergence {
                    iterations,
                    residual: norm_inf(&r),
                });
            }
            iterations += 1;
            let d: Vec<f64> = z.iter().map(|&zi| self.map.inv_slope(zi)).collect();
            let mut jac = self.a.weighted_gram(&d);
            if crate::linalg::min_eigenvalue_psd(&jac) < opts.jacobian_regularization {
                jac.add_diagonal(opts.jacobian_regularization);
            }
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            let step = solve(&jac, &rhs).map_err(|_| OracleError::NoConvergence {
                iterations,
                residual: norm_inf(&r),
            })?;

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let cand: Vec<f64> = nu.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                if let Some(zc) = self.primal(&cand) {
                    let rc = self.residual(&zc);
                    let rcn = norm2(&rc);
                    if rcn <= (1.0 - ARMIJO_C * t) * rn {
                        accepted = Some((cand, zc, rc, rcn));
                        break;
                    }
                }
                t *= opts.backtrack;
            }
            match accepted {
                Some((n1, z1, r1, rn1)) => {
                    nu = n1;
                    z = z1;
                    r = r1;
                    rn = rn1;
                    history.push(rn);
                }
                None => {
                    return Err(OracleError::NoConvergence {
                        iterations,
                        residual: norm_inf(&r),
                    })
                }
            }
        }

        let grad: Vec<f64> = z
            .iter()
            .zip(&self.offset)
            .map(|(&zi, &c)| Ok(self.map.forward(zi)? - c))
            .collect::<Result<_, OracleError>>()?;
        let proj = self.dec.project_row_space(&grad);
        let stationarity = norm_inf(&crate::linalg::sub(&grad, &proj));
        Ok(OracleSolution {
            kkt_residual_primal: norm_inf(&r),
            kkt_residual_stationarity: stationarity,
            z_star: z,
            dual: nu,
            iterations,
            residual_history: history,
        })
    }
}

fn check_feasible(a: &Matrix, dec: &Svd, upsilon: &[f64]) -> Result<(), OracleError> {
    if upsilon.len() != a.rows() {
        return Err(OracleError::DimensionMismatch {
            expected: a.rows(),
            got: upsilon.len(),
        });
    }
    let x = dec.pinv_apply(upsilon);
    let residual = norm_inf(&crate::linalg::sub(&a.mul_vec(&x), upsilon));
    if residual > 1e-10 * norm_inf(upsilon).max(1.0) {
        return Err(OracleError::Infeasible { residual });
    }
    Ok(())
}

/// `argmin { D_F(z̃, w̃0) : A z̃ = υ }` over the open domain.
pub fn bregman_projection(
    f: ReparamFamily,
    a: &Matrix,
    upsilon: &[f64],
    w0_tilde: &[f64],
    opts: &SolveOptions,
) -> Result<OracleSolution, OracleError> {
    opts.validate()?;
    if w0_tilde.len() != a.cols() {
        return Err(OracleError::DimensionMismatch {
            expected: a.cols(),
            got: w0_tilde.len(),
        });
    }
    if let Some(index) = w0_tilde.iter().position(|&w| !f.domain().contains(w)) {
        return Err(OracleError::InitOutsideDomain { index });
    }
    let dec = svd(a);
    check_feasible(a, &dec, upsilon)?;
    if let ReparamFamily::Tanh = f {
        for (row, &u) in upsilon.iter().enumerate() {
            let l1: f64 = a.row(row).iter().map(|x| x.abs()).sum();
            if u.abs() >= l1 {
                return Err(OracleError::BoxInfeasible { row });
            }
        }
    }
    let offset = w0_tilde
        .iter()
        .map(|&w| f.h(w))
        .collect::<Result<Vec<_>, _>>()?;
    let prob = DualProblem {
        map: BregmanMap(f),
        a,
        dec,
        upsilon,
        offset,
    };
    prob.solve(vec![0.0; a.rows()], opts)
}

/// `argmin { ‖z̃‖_p^p : A z̃ = υ }` for `1 < p ≤ 2`.
pub fn lp_min(
    a: &Matrix,
    upsilon: &[f64],
    p: f64,
    opts: &SolveOptions,
) -> Result<OracleSolution, OracleError> {
    opts.validate()?;
    if !(p > 1.0 && p <= 2.0) {
        return Err(OracleError::InvalidExponent(p));
    }
    let dec = svd(a);
    check_feasible(a, &dec, upsilon)?;
    let map = PowerMap(p);
    // The Jacobian vanishes at z = 0, so start from the dual point that
    // best explains ψ at the minimum-norm solution.
    let x0 = dec.pinv_apply(upsilon);
    let psi0 = x0
        .iter()
        .map(|&x| map.forward(x))
        .collect::<Result<Vec<_>, _>>()?;
    let nu0 = dec.pinv_transpose_apply(&psi0);
    let prob = DualProblem {
        map,
        a,
        dec,
        upsilon,
        offset: vec![0.0; a.cols()],
    };
    prob.solve(nu0, opts)
}

/// Moore–Penrose solution `A† υ`.
pub fn min_norm_least_squares(a: &Matrix, upsilon: &[f64]) -> Vec<f64> {
    svd(a).pinv_apply(upsilon)
}

const LINE_HALF_WIDTH: f64 = 100.0;
const LINE_GRID: usize = 10_000;
const GOLDEN_TOL: f64 = 1e-10;

/// Grid-plus-golden-section minimization of `objective` over the line
/// `{z : a·z = υ}` for a single row `a ∈ R²`.
///
/// The line is `z(s) = a†υ + s·n` with `n` the unit null direction and
/// `s ∈ [−100, 100]`. Non-finite objective values count as `+∞`.
pub fn brute_force_line<F>(a: &Matrix, upsilon: &[f64], objective: F) -> Result<Vec<f64>, OracleError>
where
    F: Fn(&[f64]) -> f64,
{
    if a.rows() != 1 || a.cols() != 2 || a.is_zero() || upsilon.len() != 1 {
        return Err(OracleError::NotALine);
    }
    let row = a.row(0);
    let nn = (row[0] * row[0] + row[1] * row[1]).sqrt();
    let dir = [-row[1] / nn, row[0] / nn];
    let base = [row[0] * upsilon[0] / (nn * nn), row[1] * upsilon[0] / (nn * nn)];
    let point = |s: f64| [base[0] + s * dir[0], base[1] + s * dir[1]];
    let eval = |s: f64| {
        let v = objective(&point(s));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let ds = 2.0 * LINE_HALF_WIDTH / (LINE_GRID - 1) as f64;
    let grid = |i: usize| -LINE_HALF_WIDTH + i as f64 * ds;
    let (best, best_val) = (0..LINE_GRID)
        .map(|i| (i, eval(grid(i))))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if !best_val.is_finite() || best == 0 || best == LINE_GRID - 1 {
        return Err(OracleError::NonCoercive);
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (grid(best - 1), grid(best + 1));
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = eval(x2);
        }
    }
    Ok(point(0.5 * (lo + hi)).to_vec())
}
