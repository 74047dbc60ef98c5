//! Losses, links and the composite objective `L(ρ_link(A ρ(w)), y)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::ProblemInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("loss exponent q must exceed 1 (got {0})")]
    InvalidExponent(f64),
    #[error("cubic link inversion did not converge for value {0}")]
    LinkNoConvergence(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    SquaredL2,
    /// `Σ |z_i − y_i|^q`, `q > 1`.
    Power { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Identity,
    /// `v + v³`
    Cubic,
}

fn check_len(z: &[f64], y: &[f64]) -> Result<(), ModelError> {
    if z.len() != y.len() {
        return Err(ModelError::LengthMismatch {
            expected: y.len(),
            got: z.len(),
        });
    }
    Ok(())
}

impl LossKind {
    pub fn power(q: f64) -> Result<Self, ModelError> {
        if q.is_finite() && q > 1.0 {
            Ok(LossKind::Power { q })
        } else {
            Err(ModelError::InvalidExponent(q))
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            LossKind::Power { q } => Self::power(q).map(|_| ()),
            LossKind::SquaredL2 => Ok(()),
        }
    }

    pub fn value(&self, z: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        check_len(z, y)?;
        Ok(match *self {
            LossKind::SquaredL2 => z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
            LossKind::Power { q } => z.iter().zip(y).map(|(a, b)| (a - b).abs().powf(q)).sum(),
        })
    }

    pub fn grad(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_len(z, y)?;
        Ok(match *self {
            LossKind::SquaredL2 => z.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect(),
            LossKind::Power { q } => z
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let r = a - b;
                    if r == 0.0 {
                        0.0
                    } else {
                        q * r.signum() * r.abs().powf(q - 1.0)
                    }
                })
                .collect(),
        })
    }

    /// Global PL constant `μ` with `‖∇L‖² ≥ 2μ(L − min L)`, where known.
    pub fn pl_constant(&self) -> Option<f64> {
        match *self {
            LossKind::SquaredL2 => Some(2.0),
            LossKind::Power { q } if q == 2.0 => Some(2.0),
            LossKind::Power { .. } => None,
        }
    }
}

pub fn loss_value(l: LossKind, z: &[f64], y: &[f64]) -> Result<f64, ModelError> {
    l.value(z, y)
}

pub fn loss_grad(l: LossKind, z: &[f64], y: &[f64]) -> Result<Vec<f64>, ModelError> {
    l.grad(z, y)
}

pub fn pl_constant(l: LossKind) -> Option<f64> {
    l.pl_constant()
}

const CUBIC_MAX_ITER: usize = 100;

impl LinkKind {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            LinkKind::Identity => v,
            LinkKind::Cubic => v + v * v * v,
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        match self {
            LinkKind::Identity => 1.0,
            LinkKind::Cubic => 1.0 + 3.0 * v * v,
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64, ModelError> {
        match self {
            LinkKind::Identity => Ok(y),
            LinkKind::Cubic => cubic_inverse(y),
        }
    }
}

/// Solves `v + v³ = y` by Newton from `cbrt(y)` (or `y` when small),
/// bracketed between 0 and `y` or `cbrt(y)`.
fn cubic_inverse(y: f64) -> Result<f64, ModelError> {
    if y == 0.0 {
        return Ok(0.0);
    }
    if !y.is_finite() {
        return Err(ModelError::LinkNoConvergence(y));
    }
    let s = y.signum();
    let t = y.abs();
    // The root lies in (0, min(t, cbrt t)].
    let mut lo = 0.0;
    let mut hi = t.min(t.cbrt());
    let mut v = hi;
    let tol = 1e-12 * t.max(1.0);
    for _ in 0..CUBIC_MAX_ITER {
        let r = v + v * v * v - t;
        if r.abs() <= tol {
            return Ok(s * v);
        }
        if r > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let next = v - r / (1.0 + 3.0 * v * v);
        v = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(ModelError::LinkNoConvergence(y))
}

pub fn link_apply(k: LinkKind, v: f64) -> f64 {
    k.apply(v)
}

pub fn link_derivative(k: LinkKind, v: f64) -> f64 {
    k.derivative(v)
}

pub fn link_inverse(k: LinkKind, v: f64) -> Result<f64, ModelError> {
    k.inverse(v)
}

fn check_param(inst: &ProblemInstance, w: &[f64]) -> Result<(), ModelError> {
    let n = inst.a().cols();
    if w.len() != n {
        return Err(ModelError::LengthMismatch {
            expected: n,
            got: w.len(),
        });
    }
    Ok(())
}

/// Linear predictor `v = A ρ(w)`.
pub fn predictor(inst: &ProblemInstance, w: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_param(inst, w)?;
    let wt: Vec<f64> = w.iter().map(|&x| inst.reparam().apply(x)).collect();
    Ok(inst.a().mul_vec(&wt))
}

/// Objective value from an already computed reparametrized point `w̃`.
pub fn loss_at_tilde(inst: &ProblemInstance, wt: &[f64]) -> Result<f64, ModelError> {
    check_param(inst, wt)?;
    let v = inst.a().mul_vec(wt);
    let z: Vec<f64> = v.iter().map(|&x| inst.link().apply(x)).collect();
    inst.loss().value(&z, inst.y())
}

pub fn full_loss(inst: &ProblemInstance, w: &[f64]) -> Result<f64, ModelError> {
    let v = predictor(inst, w)?;
    let z: Vec<f64> = v.iter().map(|&x| inst.link().apply(x)).collect();
    inst.loss().value(&z, inst.y())
}

/// `∇L(w) = [Aᵀ (∇L(ρ_link(v), y) ⊙ ρ_link′(v))] ⊙ ρ′(w)` with `v = A ρ(w)`.
pub fn full_grad(inst: &ProblemInstance, w: &[f64]) -> Result<Vec<f64>, ModelError> {
    let v = predictor(inst, w)?;
    let link = inst.link();
    let z: Vec<f64> = v.iter().map(|&x| link.apply(x)).collect();
    let mut g = inst.loss().grad(&z, inst.y())?;
    for (gi, &vi) in g.iter_mut().zip(&v) {
        *gi *= link.derivative(vi);
    }
    let mut out = inst.a().tmul_vec(&g);
    for (o, &wi) in out.iter_mut().zip(w) {
        *o *= inst.reparam().derivative(wi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::reparam::ReparamFamily;

    #[test]
    fn loss_examples() {
        let sq = LossKind::SquaredL2;
        assert_eq!(sq.value(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(LossKind::power(1.1).unwrap().value(&[3.0], &[2.0]).unwrap(), 1.0);
        assert_eq!(sq.value(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(sq.value(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn grad_examples() {
        let sq = LossKind::SquaredL2;
        assert_eq!(sq.grad(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        let g = LossKind::power(1.1).unwrap().grad(&[3.0], &[2.0]).unwrap();
        assert!((g[0] - 1.1).abs() < 1e-15);
        assert_eq!(sq.grad(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(LossKind::power(1.5).unwrap().grad(&[2.0], &[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn pl_examples() {
        assert_eq!(LossKind::SquaredL2.pl_constant(), Some(2.0));
        assert_eq!(LossKind::power(1.1).unwrap().pl_constant(), None);
        assert_eq!(LossKind::power(2.0).unwrap().pl_constant(), Some(2.0));
        assert!(LossKind::power(1.0).is_err());
    }

    #[test]
    fn link_examples() {
        assert_eq!(LinkKind::Identity.apply(7.0), 7.0);
        assert_eq!(LinkKind::Cubic.apply(1.0), 2.0);
        assert!((LinkKind::Cubic.inverse(2.0).unwrap() - 1.0).abs() < 1e-12);
        for &y in &[-1e6, -3.0, -1e-8, 0.0, 0.1, 10.0, 1e9] {
            let v = LinkKind::Cubic.inverse(y).unwrap();
            assert!((LinkKind::Cubic.apply(v) - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    fn fig1a() -> ProblemInstance {
        let p = ReparamFamily::power(1.2).unwrap();
        ProblemInstance::new(
            Matrix::from_rows(&[vec![-0.7, 1.0]]).unwrap(),
            vec![2.0],
            LinkKind::Identity,
            LossKind::power(1.1).unwrap(),
            p,
            vec![1e-4, 1e-4],
        )
        .unwrap()
    }

    #[test]
    fn full_loss_examples() {
        let inst = ProblemInstance::new(
            Matrix::identity(2),
            vec![0.0, 0.0],
            LinkKind::Identity,
            LossKind::SquaredL2,
            ReparamFamily::Identity,
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(full_loss(&inst, &[1.0, 2.0]).unwrap(), 5.0);
        assert!(full_loss(&inst, &[1.0]).is_err());

        let inst = fig1a();
        let rho = inst.reparam().apply(1e-4);
        let expect = (2.0 - 0.3 * rho).powf(1.1);
        let got = full_loss(&inst, &[1e-4, 1e-4]).unwrap();
        assert!((got - expect).abs() < 1e-14);
        assert!((got - 2f64.powf(1.1)).abs() < 1e-4);
    }

    #[test]
    fn full_grad_examples() {
        let inst = fig1a();
        let w = [1e-4, 1e-4];
        let g = full_grad(&inst, &w).unwrap();
        let r = 0.3 * inst.reparam().apply(1e-4) - 2.0;
        let outer = 1.1 * r.signum() * r.abs().powf(0.1);
        let d = inst.reparam().derivative(1e-4);
        assert!((g[0] - outer * -0.7 * d).abs() < 1e-14);
        assert!((g[1] - outer * 1.0 * d).abs() < 1e-14);

        // Saddle: power family at the origin.
        assert_eq!(full_grad(&inst, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);

        // Classical least squares.
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let y = vec![1.0, -2.0];
        let inst = ProblemInstance::new(
            a.clone(),
            y.clone(),
            LinkKind::Identity,
            LossKind::SquaredL2,
            ReparamFamily::Identity,
            vec![0.0, 0.0],
        )
        .unwrap();
        let w = [0.3, -0.4];
        let res: Vec<f64> = a.mul_vec(&w).iter().zip(&y).map(|(p, q)| 2.0 * (p - q)).collect();
        let expect = a.tmul_vec(&res);
        assert_eq!(full_grad(&inst, &w).unwrap(), expect);
    }
}
