//! Reparametrization maps `ρ` and the pieces of the separable Bregman
//! potential they induce.
//!
//! For a strictly increasing `ρ` with inverse `ρ⁻¹`, the mirror map derivative
//! is `h′(z̃) = ((ρ⁻¹)′(z̃))²`, `h` is its antiderivative and `H` the
//! antiderivative of `h`. All four families implemented here have closed
//! forms; both antiderivatives are normalized so that `h(0) = H(0) = 0`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReparamError {
    #[error("power exponent p must satisfy 1 < p < 2 (got {0})")]
    InvalidExponent(f64),
    #[error("{value} lies outside the domain {domain} of the {family} family")]
    Domain {
        family: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("h' of the power family is singular at 0")]
    Singularity,
    #[error("{value} lies outside the range of h for the {family} family")]
    Range { family: &'static str, value: f64 },
    #[error("h inverse did not converge for value {0}")]
    NoConvergence(f64),
}

/// Reparametrization family. Every family is an odd, strictly increasing
/// bijection from the reals onto its domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReparamFamily {
    Identity,
    /// `sign(z)|z|^{2/p}`, `1 < p < 2`.
    Power { p: f64 },
    Sinh,
    /// Domain `(-1, 1)`.
    Tanh,
}

/// Potential value that may be `+∞` at the closure of a bounded domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialValue {
    Finite(f64),
    PosInfinity,
}

impl PotentialValue {
    pub fn to_f64(self) -> f64 {
        match self {
            PotentialValue::Finite(v) => v,
            PotentialValue::PosInfinity => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, PotentialValue::Finite(_))
    }
}

/// Open interval `(lo, hi)`, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    pub fn contains_closure(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

const TANH_INV_MAX_NEWTON: usize = 60;
const TANH_INV_MAX_TOTAL: usize = 400;

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl ReparamFamily {
    pub fn power(p: f64) -> Result<Self, ReparamError> {
        if p.is_finite() && p > 1.0 && p < 2.0 {
            Ok(ReparamFamily::Power { p })
        } else {
            Err(ReparamError::InvalidExponent(p))
        }
    }

    /// Re-validates the family parameters (e.g. after deserialization).
    pub fn validate(&self) -> Result<(), ReparamError> {
        match *self {
            ReparamFamily::Power { p } => Self::power(p).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReparamFamily::Identity => "identity",
            ReparamFamily::Power { .. } => "power",
            ReparamFamily::Sinh => "sinh",
            ReparamFamily::Tanh => "tanh",
        }
    }

    pub fn domain(&self) -> Interval {
        match self {
            ReparamFamily::Tanh => Interval { lo: -1.0, hi: 1.0 },
            _ => Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
        }
    }

    fn domain_label(&self) -> &'static str {
        match self {
            ReparamFamily::Tanh => "(-1, 1)",
            _ => "(-inf, inf)",
        }
    }

    fn domain_error(&self, value: f64) -> ReparamError {
        ReparamError::Domain {
            family: self.name(),
            value,
            domain: self.domain_label(),
        }
    }

    fn check_interior(&self, zt: f64) -> Result<(), ReparamError> {
        if self.domain().contains(zt) {
            Ok(())
        } else {
            Err(self.domain_error(zt))
        }
    }

    /// Whether `ρ′` has zeros on the real line (only the power family).
    pub fn has_critical_points(&self) -> bool {
        matches!(self, ReparamFamily::Power { .. })
    }

    /// `ρ(z)`
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            ReparamFamily::Identity => z,
            ReparamFamily::Power { p } => sign(z) * z.abs().powf(2.0 / p),
            ReparamFamily::Sinh => z.sinh(),
            ReparamFamily::Tanh => z.tanh(),
        }
    }

    /// `ρ′(z)`
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            ReparamFamily::Identity => 1.0,
            ReparamFamily::Power { p } => (2.0 / p) * z.abs().powf((2.0 - p) / p),
            ReparamFamily::Sinh => z.cosh(),
            ReparamFamily::Tanh => {
                let c = z.cosh();
                1.0 / (c * c)
            }
        }
    }

    /// `ρ⁻¹(z̃)`
    pub fn inverse(&self, zt: f64) -> Result<f64, ReparamError> {
        self.check_interior(zt)?;
        Ok(match *self {
            ReparamFamily::Identity => zt,
            ReparamFamily::Power { p } => sign(zt) * zt.abs().powf(p / 2.0),
            ReparamFamily::Sinh => zt.asinh(),
            ReparamFamily::Tanh => zt.atanh(),
        })
    }

    /// `h′(z̃) = ((ρ⁻¹)′(z̃))²`
    pub fn h_prime(&self, zt: f64) -> Result<f64, ReparamError> {
        self.check_interior(zt)?;
        match *self {
            ReparamFamily::Identity => Ok(1.0),
            ReparamFamily::Power { p } => {
                if zt == 0.0 {
                    Err(ReparamError::Singularity)
                } else {
                    Ok(p * p / 4.0 * zt.abs().powf(p - 2.0))
                }
            }
            ReparamFamily::Sinh => Ok(1.0 / (1.0 + zt * zt)),
            ReparamFamily::Tanh => {
                let d = (1.0 - zt) * (1.0 + zt);
                Ok(1.0 / (d * d))
            }
        }
    }

    /// `1 / h′(z̃) = ρ′(ρ⁻¹(z̃))²`, finite everywhere on the domain
    /// (zero at the power family's critical point).
    pub fn inv_h_prime(&self, zt: f64) -> f64 {
        match *self {
            ReparamFamily::Identity => 1.0,
            ReparamFamily::Power { p } => 4.0 / (p * p) * zt.abs().powf(2.0 - p),
            ReparamFamily::Sinh => 1.0 + zt * zt,
            ReparamFamily::Tanh => {
                let d = (1.0 - zt) * (1.0 + zt);
                d * d
            }
        }
    }

    /// `h(z̃)`, the mirror map.
    pub fn h(&self, zt: f64) -> Result<f64, ReparamError> {
        self.check_interior(zt)?;
        Ok(match *self {
            ReparamFamily::Identity => zt,
            ReparamFamily::Power { p } => {
                p * p / (4.0 * (p - 1.0)) * sign(zt) * zt.abs().powf(p - 1.0)
            }
            ReparamFamily::Sinh => zt.atan(),
            ReparamFamily::Tanh => 0.5 * (zt.atanh() + zt / ((1.0 - zt) * (1.0 + zt))),
        })
    }

    /// `H(z̃)`, the potential. Defined on the closure of the domain; the tanh
    /// family attains `+∞` at `±1`.
    #[allow(non_snake_case)]
    pub fn H(&self, zt: f64) -> Result<PotentialValue, ReparamError> {
        if !self.domain().contains_closure(zt) || zt.is_nan() {
            return Err(self.domain_error(zt));
        }
        Ok(match *self {
            ReparamFamily::Identity => PotentialValue::Finite(0.5 * zt * zt),
            ReparamFamily::Power { p } => {
                PotentialValue::Finite(p / (4.0 * (p - 1.0)) * zt.abs().powf(p))
            }
            ReparamFamily::Sinh => PotentialValue::Finite(zt * zt.atan() - 0.5 * (zt * zt).ln_1p()),
            ReparamFamily::Tanh => {
                if zt.abs() == 1.0 {
                    PotentialValue::PosInfinity
                } else {
                    PotentialValue::Finite(0.5 * zt * zt.atanh())
                }
            }
        })
    }

    /// Range of `h` as an open interval.
    pub fn h_range(&self) -> Interval {
        match self {
            ReparamFamily::Sinh => Interval {
                lo: -FRAC_PI_2,
                hi: FRAC_PI_2,
            },
            _ => Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
        }
    }

    /// `h⁻¹(v)`
    pub fn h_inverse(&self, v: f64) -> Result<f64, ReparamError> {
        if !self.h_range().contains(v) {
            return Err(ReparamError::Range {
                family: self.name(),
                value: v,
            });
        }
        match *self {
            ReparamFamily::Identity => Ok(v),
            ReparamFamily::Power { p } => {
                Ok(sign(v) * (4.0 * (p - 1.0) * v.abs() / (p * p)).powf(1.0 / (p - 1.0)))
            }
            ReparamFamily::Sinh => Ok(v.tan()),
            ReparamFamily::Tanh => tanh_h_inverse(v),
        }
    }
}

/// Inverts `h(z̃) = ½(artanh z̃ + z̃/(1 − z̃²))` on `(-1, 1)`.
///
/// Works in the coordinate `u = artanh z̃`, where `h = ½u + ¼sinh(2u)` is
/// smooth and strictly increasing on the whole line, with derivative
/// `cosh²u`. Newton steps that leave the current bracket (or stall after
/// the Newton budget) fall back to bisection.
fn tanh_h_inverse(v: f64) -> Result<f64, ReparamError> {
    if v == 0.0 {
        return Ok(0.0);
    }
    let target = v.abs();
    let g = |u: f64| 0.5 * u + 0.25 * (2.0 * u).sinh() - target;
    // h(u) ≥ u/2 + u/2 for u ≥ 0, and h(u) ≥ e^{2u}/8 for large u.
    let mut lo = 0.0;
    let mut hi = target.min((8.0 * target).ln().max(1.0) * 0.5 + 1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut u = 0.5 * (lo + hi);
    let tol = 1e-12 * target.max(1.0);
    for it in 0..TANH_INV_MAX_TOTAL {
        let r = g(u);
        if r.abs() <= tol {
            return Ok(sign(v) * u.tanh());
        }
        if r < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let c = u.cosh();
        let newton = u - r / (c * c);
        u = if it < TANH_INV_MAX_NEWTON && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            return Ok(sign(v) * u.tanh());
        }
    }
    Err(ReparamError::NoConvergence(v))
}

/// Antiderivative of `z̃ · h′(z̃)` for the families with unbounded domain,
/// normalized to vanish at 0. Boundedness of Bregman balls follows when it
/// diverges at both infinite ends of the domain.
pub fn xh_prime_antiderivative(f: &ReparamFamily, zt: f64) -> Option<f64> {
    match *f {
        ReparamFamily::Identity => Some(0.5 * zt * zt),
        ReparamFamily::Power { p } => Some(p / 4.0 * zt.abs().powf(p)),
        ReparamFamily::Sinh => Some(0.5 * (zt * zt).ln_1p()),
        ReparamFamily::Tanh => None,
    }
}

/// Symbolic membership of `z̃ ↦ z̃·h′(z̃)` in the class of locally integrable
/// functions whose integrals to the infinite domain endpoints diverge.
///
/// The closed forms in [`xh_prime_antiderivative`] are `|z̃|²/2`,
/// `(p/4)|z̃|^p` with `p > 0`, and `½log(1 + z̃²)`: each is even and tends to
/// `+∞` as `|z̃| → ∞`. The bounded tanh domain has no infinite endpoint, so
/// the question does not apply.
pub fn xh_prime_in_divergent_class(f: &ReparamFamily) -> Option<bool> {
    match *f {
        ReparamFamily::Identity | ReparamFamily::Sinh => Some(true),
        ReparamFamily::Power { p } => Some(p > 0.0),
        ReparamFamily::Tanh => None,
    }
}
