//! Problem instances: data, link, loss, reparametrization and initialization.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::{LinkKind, LossKind, ModelError};
use crate::reparam::{ReparamError, ReparamFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("y has length {got} but A has {expected} rows")]
    ResponseLength { expected: usize, got: usize },
    #[error("w0 has length {got} but A has {expected} columns")]
    InitLength { expected: usize, got: usize },
    #[error("non-finite entry {index} in {what}")]
    NonFinite { what: &'static str, index: usize },
    #[error("y[{index}] = {value} is not in the image of the link")]
    LinkImage { index: usize, value: f64 },
    #[error("w0[{index}] is a critical point of the reparametrization (saddle start)")]
    SaddleStart { index: usize },
    #[error(transparent)]
    Reparam(#[from] ReparamError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    a: Matrix,
    y: Vec<f64>,
    link: LinkKind,
    loss: LossKind,
    reparam: ReparamFamily,
    w0: Vec<f64>,
    upsilon: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(
        a: Matrix,
        y: Vec<f64>,
        link: LinkKind,
        loss: LossKind,
        reparam: ReparamFamily,
        w0: Vec<f64>,
    ) -> Result<Self, InstanceError> {
        reparam.validate()?;
        loss.validate()?;
        if y.len() != a.rows() {
            return Err(InstanceError::ResponseLength {
                expected: a.rows(),
                got: y.len(),
            });
        }
        if w0.len() != a.cols() {
            return Err(InstanceError::InitLength {
                expected: a.cols(),
                got: w0.len(),
            });
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(InstanceError::NonFinite { what: "y", index });
        }
        if let Some(index) = w0.iter().position(|v| !v.is_finite()) {
            return Err(InstanceError::NonFinite { what: "w0", index });
        }
        let mut upsilon = Vec::with_capacity(y.len());
        for (index, &value) in y.iter().enumerate() {
            let u = link
                .inverse(value)
                .map_err(|_| InstanceError::LinkImage { index, value })?;
            if (link.apply(u) - value).abs() > 1e-10 * value.abs().max(1.0) {
                return Err(InstanceError::LinkImage { index, value });
            }
            upsilon.push(u);
        }
        if reparam.has_critical_points() {
            if let Some(index) = w0.iter().position(|&w| reparam.derivative(w) == 0.0) {
                return Err(InstanceError::SaddleStart { index });
            }
        }
        Ok(Self {
            a,
            y,
            link,
            loss,
            reparam,
            w0,
            upsilon,
        })
    }

    /// Instance initialized at `w̃0 = α·1`, i.e. `w0 = ρ⁻¹(α)·1`.
    pub fn with_alpha(
        a: Matrix,
        y: Vec<f64>,
        link: LinkKind,
        loss: LossKind,
        reparam: ReparamFamily,
        alpha: f64,
    ) -> Result<Self, InstanceError> {
        let w = reparam.inverse(alpha)?;
        let n = a.cols();
        Self::new(a, y, link, loss, reparam, vec![w; n])
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn link(&self) -> LinkKind {
        self.link
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn reparam(&self) -> ReparamFamily {
        self.reparam
    }

    pub fn w0(&self) -> &[f64] {
        &self.w0
    }

    /// `w̃0 = ρ(w0)`
    pub fn w0_tilde(&self) -> Vec<f64> {
        self.w0.iter().map(|&w| self.reparam.apply(w)).collect()
    }

    /// `υ = ρ_link⁻¹(y)`, the right-hand side of the zero-loss set `A z̃ = υ`.
    pub fn upsilon(&self) -> &[f64] {
        &self.upsilon
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a.rows(), self.a.cols())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a12() -> Matrix {
        Matrix::from_rows(&[vec![-0.7, 1.0]]).unwrap()
    }

    #[test]
    fn rejects_saddle_start() {
        let err = ProblemInstance::new(
            a12(),
            vec![2.0],
            LinkKind::Identity,
            LossKind::SquaredL2,
            ReparamFamily::power(1.2).unwrap(),
            vec![0.1, 0.0],
        )
        .unwrap_err();
        assert_eq!(err, InstanceError::SaddleStart { index: 1 });
        // Zero coordinates are fine for families without critical points.
        ProblemInstance::new(
            a12(),
            vec![2.0],
            LinkKind::Identity,
            LossKind::SquaredL2,
            ReparamFamily::Sinh,
            vec![0.0, 0.0],
        )
        .unwrap();
    }

    #[test]
    fn dimension_checks() {
        let mk = |y: Vec<f64>, w0: Vec<f64>| {
            ProblemInstance::new(
                a12(),
                y,
                LinkKind::Identity,
                LossKind::SquaredL2,
                ReparamFamily::Identity,
                w0,
            )
        };
        assert!(matches!(
            mk(vec![1.0, 2.0], vec![0.0, 0.0]),
            Err(InstanceError::ResponseLength { .. })
        ));
        assert!(matches!(
            mk(vec![1.0], vec![0.0]),
            Err(InstanceError::InitLength { .. })
        ));
        assert!(matches!(
            mk(vec![f64::NAN], vec![0.0, 0.0]),
            Err(InstanceError::NonFinite { .. })
        ));
    }

    #[test]
    fn upsilon_through_cubic_link() {
        let inst = ProblemInstance::new(
            a12(),
            vec![2.0],
            LinkKind::Cubic,
            LossKind::SquaredL2,
            ReparamFamily::Identity,
            vec![0.0, 0.0],
        )
        .unwrap();
        assert!((inst.upsilon()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_initialization() {
        let inst = ProblemInstance::with_alpha(
            a12(),
            vec![2.0],
            LinkKind::Identity,
            LossKind::SquaredL2,
            ReparamFamily::power(1.5).unwrap(),
            0.01,
        )
        .unwrap();
        for v in inst.w0_tilde() {
            assert!((v - 0.01).abs() < 1e-15);
        }
    }
}
