//! Bregman divergences of the separable potential `F(z̃) = Σ H(z̃_i)`, the
//! bias objective, the closed-form sinh/tanh regularizers, the ℓ_p bound, and
//! trajectory-level inequality checks.

use serde::Serialize;
use thiserror::Error;

use crate::flow::{min_hprime_inv, Trajectory};
use crate::linalg::{norm_inf, sub};
use crate::model::ModelError;
use crate::problem::ProblemInstance;
use crate::reparam::{
    xh_prime_antiderivative, xh_prime_in_divergent_class, PotentialValue, ReparamError,
    ReparamFamily,
};

/// Multiplicative slack on the rate inequalities.
pub const RATE_SLACK: f64 = 1e-6;
/// Allowed `‖A z_ref − υ‖∞` for a reference point.
pub const REFERENCE_FEASIBILITY_TOL: f64 = 1e-8;
pub const ESCAPE_THRESHOLD: f64 = 1e6;

const ESCAPE_MAX_DOUBLINGS: usize = 1 << 22;
const ESCAPE_TAIL: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiasError {
    #[error(transparent)]
    Reparam(#[from] ReparamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("coordinate {index} = {value} is outside [-1, 1]")]
    OutsideBox { index: usize, value: f64 },
    #[error("p must satisfy 1 < p < 2 (got {0})")]
    InvalidExponent(f64),
    #[error("reference point is not feasible: |A z_ref - upsilon|_inf = {0}")]
    InfeasibleReference(f64),
    #[error("check not applicable: {0}")]
    Inapplicable(String),
    #[error("coordinate {index} of the reference point is zero")]
    ZeroCoordinate { index: usize },
    #[error("invalid divergence level {0}")]
    InvalidLevel(f64),
}

fn check_len(a: &[f64], b: &[f64]) -> Result<(), BiasError> {
    if a.len() != b.len() {
        return Err(BiasError::LengthMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    Ok(())
}

/// One coordinate of `D_H(p, q) = H(p) − H(q) − h(q)(p − q)`.
///
/// Each coordinate term is nonnegative by convexity; cancellation can make
/// the floating-point value negative at the roundoff level, which is clamped.
fn divergence_term(f: ReparamFamily, p: f64, q: f64) -> Result<PotentialValue, BiasError> {
    if let ReparamFamily::Identity = f {
        return Ok(PotentialValue::Finite(0.5 * (p - q) * (p - q)));
    }
    let hq = f.h(q)?;
    let hp = f.H(p)?;
    let hq_pot = f.H(q)?.to_f64();
    Ok(match hp {
        PotentialValue::PosInfinity => PotentialValue::PosInfinity,
        PotentialValue::Finite(v) => PotentialValue::Finite((v - hq_pot - hq * (p - q)).max(0.0)),
    })
}

/// `D_F(p, q)` for `q` in the open domain and `p` in its closure.
pub fn bregman_divergence(
    f: ReparamFamily,
    p: &[f64],
    q: &[f64],
) -> Result<PotentialValue, BiasError> {
    check_len(p, q)?;
    let mut acc = 0.0;
    let mut infinite = false;
    for (&pi, &qi) in p.iter().zip(q) {
        match divergence_term(f, pi, qi)? {
            PotentialValue::Finite(v) => acc += v,
            PotentialValue::PosInfinity => infinite = true,
        }
    }
    Ok(if infinite {
        PotentialValue::PosInfinity
    } else {
        PotentialValue::Finite(acc)
    })
}

/// `Σ H(z̃_i) − Σ z̃_i h(w̃0_i)` together with its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasObjectiveValue {
    /// `+∞` when `Σ H(z̃_i)` is.
    pub value: f64,
    pub potential: f64,
    pub linear: f64,
}

pub fn bias_objective(
    f: ReparamFamily,
    z_tilde: &[f64],
    w0_tilde: &[f64],
) -> Result<BiasObjectiveValue, BiasError> {
    check_len(z_tilde, w0_tilde)?;
    let mut potential = 0.0;
    let mut linear = 0.0;
    for (&z, &w) in z_tilde.iter().zip(w0_tilde) {
        potential += f.H(z)?.to_f64();
        linear += z * f.h(w)?;
    }
    Ok(BiasObjectiveValue {
        value: potential - linear,
        potential,
        linear,
    })
}

/// `⟨z, arctan z⟩ − Σ ½ log(1 + z_i²)`
pub fn g_sinh(z_tilde: &[f64]) -> f64 {
    z_tilde
        .iter()
        .map(|&z| z * z.atan() - 0.5 * (z * z).ln_1p())
        .sum()
}

/// `⟨z, artanh z⟩` on `[-1, 1]^N`, `+∞` if any `|z_i| = 1`.
pub fn g_tanh(z_tilde: &[f64]) -> Result<f64, BiasError> {
    let mut acc = 0.0;
    for (index, &z) in z_tilde.iter().enumerate() {
        if !(z.abs() <= 1.0) {
            return Err(BiasError::OutsideBox { index, value: z });
        }
        if z.abs() == 1.0 {
            return Ok(f64::INFINITY);
        }
        acc += z * z.atanh();
    }
    Ok(acc)
}

/// Huber function with knee `delta > 0`.
pub fn huber(z: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    if z.abs() <= delta {
        0.5 * z * z
    } else {
        delta * (z.abs() - 0.5 * delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpBound {
    pub valid: bool,
    pub rhs: f64,
    /// Largest admissible `α`.
    pub alpha_max: f64,
}

/// Bound on `‖w̃_∞‖_p` for the flow started at `w̃0 = α·1`, given the
/// minimal ℓ_p norm `μ` on the zero-loss set.
pub fn lp_bound(p: f64, n: usize, alpha: f64, mu: f64) -> Result<LpBound, BiasError> {
    if !(p > 1.0 && p < 2.0) {
        return Err(BiasError::InvalidExponent(p));
    }
    let nf = n as f64;
    let rhs = (1.0 + 4.0 * nf.powf(1.0 - 1.0 / p) * (alpha / mu).powf(p - 1.0)) * mu;
    let alpha_max = mu / (2f64.powf(1.0 / (p - 1.0)) * nf.powf(1.0 / p));
    Ok(LpBound {
        valid: alpha <= alpha_max,
        rhs,
        alpha_max,
    })
}

/// Per-sample comparison `lhs ≤ rhs`; `margin = rhs − lhs` includes slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckDetail {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheckResult {
    pub holds: bool,
    /// Zero when no comparison was made.
    pub worst_margin: f64,
    pub details: Vec<CheckDetail>,
}

impl RateCheckResult {
    fn from_details(details: Vec<CheckDetail>) -> Self {
        let worst_margin = if details.is_empty() {
            0.0
        } else {
            details.iter().map(|d| d.margin).fold(f64::INFINITY, f64::min)
        };
        Self {
            holds: worst_margin >= 0.0,
            worst_margin,
            details,
        }
    }

    pub fn violations(&self) -> usize {
        self.details.iter().filter(|d| d.margin < 0.0).count()
    }
}

fn check_reference(inst: &ProblemInstance, z_ref: &[f64]) -> Result<(), BiasError> {
    check_len(z_ref, inst.w0())?;
    let r = norm_inf(&sub(&inst.a().mul_vec(z_ref), inst.upsilon()));
    if !(r <= REFERENCE_FEASIBILITY_TOL) {
        return Err(BiasError::InfeasibleReference(r));
    }
    Ok(())
}

fn divergence_series(traj: &Trajectory, z_ref: &[f64]) -> Result<Vec<f64>, BiasError> {
    traj.samples
        .iter()
        .map(|s| Ok(bregman_divergence(traj.family, z_ref, &s.w_tilde)?.to_f64()))
        .collect()
}

/// `D_F(z_ref, w̃(t))` is non-increasing across consecutive samples, up to
/// the trajectory's integrator slack.
pub fn check_decay(
    traj: &Trajectory,
    inst: &ProblemInstance,
    z_ref: &[f64],
) -> Result<RateCheckResult, BiasError> {
    check_reference(inst, z_ref)?;
    let d = divergence_series(traj, z_ref)?;
    let details = traj
        .samples
        .windows(2)
        .zip(d.windows(2))
        .map(|(s, dd)| {
            let rhs = dd[0] * (1.0 + traj.slack.rel) + traj.slack.abs;
            CheckDetail {
                t: s[1].t,
                lhs: dd[1],
                rhs,
                margin: rhs - dd[1],
            }
        })
        .collect();
    Ok(RateCheckResult::from_details(details))
}

/// `t · L(w̃(t)) ≤ D_F(z_ref, w̃0)` at every sample with `t > 0`, with the
/// rate slack applied on top of the integrator slack.
pub fn check_sublinear_rate(
    traj: &Trajectory,
    inst: &ProblemInstance,
    z_ref: &[f64],
) -> Result<RateCheckResult, BiasError> {
    check_reference(inst, z_ref)?;
    let d0 = bregman_divergence(traj.family, z_ref, &traj.first().w_tilde)?.to_f64();
    let rhs = d0 * (1.0 + RATE_SLACK) * (1.0 + traj.slack.rel) + traj.slack.abs;
    let details = traj
        .samples
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| {
            let lhs = s.t * s.loss;
            CheckDetail {
                t: s.t,
                lhs,
                rhs,
                margin: rhs - lhs,
            }
        })
        .collect();
    Ok(RateCheckResult::from_details(details))
}

/// `L(w̃(t)) ≤ L(w̃0) · exp(−2 r μ σ² t)` with `r` the smallest sampled `1/h′`,
/// with the rate slack applied on top of the integrator slack.
pub fn check_linear_rate(
    traj: &Trajectory,
    mu: f64,
    sigma_min: f64,
) -> Result<RateCheckResult, BiasError> {
    let r = min_hprime_inv(traj);
    if !(r > 0.0) {
        return Err(BiasError::Inapplicable(
            "1/h' vanishes along the trajectory (r = 0)".into(),
        ));
    }
    if !(mu > 0.0 && sigma_min > 0.0) {
        return Err(BiasError::Inapplicable("mu and sigma_min must be positive".into()));
    }
    let l0 = traj.first().loss;
    let c = 2.0 * r * mu * sigma_min * sigma_min;
    let details = traj
        .samples
        .iter()
        .map(|s| {
            let rhs = l0 * (-c * s.t).exp() * (1.0 + RATE_SLACK) * (1.0 + traj.slack.rel) + traj.slack.abs;
            CheckDetail {
                t: s.t,
                lhs: s.loss,
                rhs,
                margin: rhs - s.loss,
            }
        })
        .collect();
    Ok(RateCheckResult::from_details(details))
}

/// Linear-rate check with `μ` taken from the instance's loss.
pub fn check_linear_rate_for(
    traj: &Trajectory,
    inst: &ProblemInstance,
    sigma_min: f64,
) -> Result<RateCheckResult, BiasError> {
    match inst.loss().pl_constant() {
        Some(mu) => check_linear_rate(traj, mu, sigma_min),
        None => Err(BiasError::Inapplicable("loss has no PL constant".into())),
    }
}

/// Per-coordinate interval `[γ₋, γ₊]` that confines a tanh trajectory whose
/// Bregman distance to the feasible point `z̃0` starts at `d0`.
///
/// The expressions are stated for positive coordinates; a negative
/// coordinate uses the mirror image, `γ₋(a) = −γ₊(−a)` and
/// `γ₊(a) = −γ₋(−a)`, which follows from the oddness of `h`.
pub fn tanh_box_bounds(z0_tilde: &[f64], d0: f64) -> Result<(Vec<f64>, Vec<f64>), BiasError> {
    if !(d0 >= 0.0 && d0.is_finite()) {
        return Err(BiasError::InvalidLevel(d0));
    }
    let mut lo = Vec::with_capacity(z0_tilde.len());
    let mut hi = Vec::with_capacity(z0_tilde.len());
    for (index, &a) in z0_tilde.iter().enumerate() {
        if a == 0.0 {
            return Err(BiasError::ZeroCoordinate { index });
        }
        if !(a.abs() < 1.0) {
            return Err(BiasError::OutsideBox { index, value: a });
        }
        let b = a.abs();
        let den = (1.0 - b) * (1.0 + b);
        let g_minus = (b.atanh() - (2.0 * d0 + (b + b * b) / den) / b).tanh();
        let g_plus = (b.atanh() + (2.0 * d0 + (b - b * b) / den) / b).tanh();
        if a > 0.0 {
            lo.push(g_minus);
            hi.push(g_plus);
        } else {
            lo.push(-g_plus);
            hi.push(-g_minus);
        }
    }
    Ok((lo, hi))
}

/// Samples lie inside `[lo, hi]` coordinatewise; the margin is the smallest
/// distance to a face.
pub fn check_box(traj: &Trajectory, lo: &[f64], hi: &[f64]) -> Result<RateCheckResult, BiasError> {
    check_len(lo, traj.first().w_tilde.as_slice())?;
    check_len(hi, lo)?;
    let details = traj
        .samples
        .iter()
        .map(|s| {
            let margin = s
                .w_tilde
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&w, (&l, &u))| (w - l).min(u - w))
                .fold(f64::INFINITY, f64::min);
            CheckDetail {
                t: s.t,
                lhs: norm_inf(&s.w_tilde),
                rhs: f64::NAN,
                margin,
            }
        })
        .collect();
    Ok(RateCheckResult::from_details(details))
}

/// Numerical witness that Bregman balls `{q : D_F(x, q) ≤ c}` are bounded:
/// along each ray `q = x + s·d` with `s = 1, 2, 4, …`, `D_F(x, q)` must end
/// up increasing and exceed [`ESCAPE_THRESHOLD`]. The per-family symbolic
/// membership of `z̃ ↦ z̃ h′(z̃)` in the divergent class must also hold.
///
/// Writing `D_F(x, q) = Σ H(x_i) + G(q_i) − h(q_i) x_i` with `G` the
/// antiderivative of `z̃ h′(z̃)`, the ray is followed in the variable
/// `ln s` once `q` would overflow, so slowly (logarithmically) growing
/// divergences are still followed to the end of the domain.
pub fn bregman_ball_escape_test(
    f: ReparamFamily,
    x: &[f64],
    directions: &[Vec<f64>],
) -> Result<bool, BiasError> {
    if f.domain().is_bounded() {
        return Err(BiasError::Inapplicable(
            "bounded domain has bounded Bregman balls trivially".into(),
        ));
    }
    let symbolic = xh_prime_in_divergent_class(&f).unwrap_or(false);
    let base: Vec<f64> = x
        .iter()
        .map(|&xi| Ok(f.H(xi)?.to_f64()))
        .collect::<Result<_, BiasError>>()?;
    for d in directions {
        check_len(d, x)?;
        if d.iter().all(|&v| v == 0.0) {
            continue;
        }
        if !escapes_along(f, x, &base, d)? {
            return Ok(false);
        }
    }
    Ok(symbolic)
}

fn escapes_along(f: ReparamFamily, x: &[f64], base: &[f64], d: &[f64]) -> Result<bool, BiasError> {
    let mut prev = f64::NEG_INFINITY;
    let mut rising = 0usize;
    for k in 0..ESCAPE_MAX_DOUBLINGS {
        let ln_s = k as f64 * std::f64::consts::LN_2;
        let mut value = 0.0;
        for i in 0..x.len() {
            if d[i] == 0.0 {
                continue;
            }
            value += base[i] + far_term(f, x[i], d[i], ln_s)?;
        }
        if value > prev {
            rising += 1;
        } else {
            rising = 0;
        }
        prev = value;
        if value > ESCAPE_THRESHOLD && rising >= ESCAPE_TAIL.min(k + 1) {
            return Ok(true);
        }
        if value.is_nan() {
            return Ok(false);
        }
    }
    Ok(false)
}

/// `G(q) − h(q) x` at `q = x + e^{ln_s} d`.
fn far_term(f: ReparamFamily, x: f64, d: f64, ln_s: f64) -> Result<f64, BiasError> {
    // Direct evaluation while q and G(q) are comfortably representable.
    if ln_s < 600.0 {
        let q = x + ln_s.exp() * d;
        if let Some(g) = xh_prime_antiderivative(&f, q) {
            if g.is_finite() && q.is_finite() {
                return Ok(g - f.h(q)? * x);
            }
        }
    }
    // Asymptotic regime: q = sign(d) e^{L}, L = ln s + ln|d|.
    let l = ln_s + d.abs().ln();
    Ok(match f {
        ReparamFamily::Identity => f64::INFINITY,
        ReparamFamily::Power { p } => {
            // (p/4)|q|^p dominates the O(|q|^{p-1}) linear term.
            let lg = (p / 4.0).ln() + p * l;
            if lg > 700.0 {
                f64::INFINITY
            } else {
                lg.exp()
            }
        }
        ReparamFamily::Sinh => {
            // ½ ln(1 + q²) = L + ½ ln(1 + e^{−2L}); arctan(q) → ±π/2.
            l + 0.5 * (-2.0 * l).exp().ln_1p() - d.signum() * std::f64::consts::FRAC_PI_2 * x
        }
        ReparamFamily::Tanh => unreachable!("bounded domain rejected earlier"),
    })
}
