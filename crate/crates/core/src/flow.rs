//! Integration of the gradient flow `w′ = −∇L(w)` in parameter space.
//!
//! Explicit Euler is gradient descent with a constant learning rate. RK4 is
//! provided at fixed step, and Dormand–Prince 5(4) with elementary
//! step control serves as the reference integrator for continuous-time
//! claims.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{bregman_divergence, BiasError};
use crate::linalg::norm_inf;
use crate::model::{full_grad, loss_at_tilde, ModelError};
use crate::problem::ProblemInstance;
use crate::reparam::ReparamFamily;

/// `|ρ′(w_i)|` below this counts as touching a critical point.
pub const CRITICAL_THRESHOLD: f64 = 1e-12;
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e8;
pub const DEFAULT_LOG_RATIO: f64 = 1.05;
pub const DEFAULT_LOSS_TOL: f64 = 1e-10;
/// Per-sample loss-monotonicity slack for the fixed-step methods.
pub const FIXED_STEP_ABS_SLACK: f64 = 1e-9;

const ADAPTIVE_MAX_STEPS: usize = 50_000_000;
const ADAPTIVE_MIN_STEP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("saddle start: rho'(w0[{index}]) = 0")]
    SaddleStart { index: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64, last_valid: Box<Sample> },
    #[error("adaptive step size underflow at t = {t}")]
    StepUnderflow { t: f64, last_valid: Box<Sample> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bias(#[from] BiasError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Euler { step: f64 },
    Rk4 { step: f64 },
    AdaptiveRk45 { rtol: f64, atol: f64, initial_step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogSchedule {
    EveryStep,
    Geometric { ratio: f64 },
}

impl Default for LogSchedule {
    fn default() -> Self {
        LogSchedule::Geometric {
            ratio: DEFAULT_LOG_RATIO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub method: Method,
    pub t_max: f64,
    pub loss_tol: f64,
    pub divergence_bound: f64,
    pub log_schedule: LogSchedule,
}

impl FlowConfig {
    pub fn new(method: Method, t_max: f64) -> Self {
        Self {
            method,
            t_max,
            loss_tol: DEFAULT_LOSS_TOL,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            log_schedule: LogSchedule::default(),
        }
    }

    pub fn euler(step: f64, t_max: f64) -> Self {
        Self::new(Method::Euler { step }, t_max)
    }

    pub fn adaptive(rtol: f64, atol: f64, t_max: f64) -> Self {
        Self::new(
            Method::AdaptiveRk45 {
                rtol,
                atol,
                initial_step: 1e-3,
            },
            t_max,
        )
    }

    pub fn with_loss_tol(mut self, loss_tol: f64) -> Self {
        self.loss_tol = loss_tol;
        self
    }

    pub fn with_log_schedule(mut self, log_schedule: LogSchedule) -> Self {
        self.log_schedule = log_schedule;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidConfig(m.to_string()));
        match self.method {
            Method::Euler { step } | Method::Rk4 { step } => {
                if !(step > 0.0 && step.is_finite()) {
                    return bad("step must be positive");
                }
            }
            Method::AdaptiveRk45 {
                rtol,
                atol,
                initial_step,
            } => {
                if !(rtol > 0.0 && rtol < 1.0) || !(atol > 0.0 && atol < 1.0) {
                    return bad("rtol and atol must lie in (0, 1)");
                }
                if !(initial_step > 0.0 && initial_step.is_finite()) {
                    return bad("initial step must be positive");
                }
            }
        }
        if !(self.t_max > 0.0) || self.t_max.is_nan() {
            return bad("t_max must be positive");
        }
        if !(self.loss_tol >= 0.0) {
            return bad("loss_tol must be nonnegative");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence bound must be positive");
        }
        if let LogSchedule::Geometric { ratio } = self.log_schedule {
            if !(ratio > 1.0 && ratio.is_finite()) {
                return bad("geometric log ratio must exceed 1");
            }
        }
        Ok(())
    }

    /// Loss-monotonicity slack `(relative, absolute)` between samples.
    pub fn slack(&self) -> Slack {
        match self.method {
            Method::AdaptiveRk45 { rtol, atol, .. } => Slack { rel: rtol, abs: atol },
            _ => Slack {
                rel: 0.0,
                abs: FIXED_STEP_ABS_SLACK,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Slack {
    pub rel: f64,
    pub abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub loss: f64,
    pub min_abs_rho_prime: f64,
    /// `D_F(z_ref, w̃)` when a reference point was supplied.
    pub bregman_to_ref: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    LossTol,
    TMax,
    Diverged,
    BoundaryHit,
}

/// A step during which coordinate `index` touched or crossed a critical
/// point of `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityEvent {
    pub t: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub family: ReparamFamily,
    pub samples: Vec<Sample>,
    pub terminal: Terminal,
    pub events: Vec<RegularityEvent>,
    pub steps: usize,
    pub slack: Slack,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }
}

pub fn regularity_report(traj: &Trajectory) -> Vec<RegularityEvent> {
    traj.events.clone()
}

/// `inf_t min_i 1/h′(w̃_i(t))`, evaluated as `ρ′(w_i)²` over the samples.
pub fn min_hprime_inv(traj: &Trajectory) -> f64 {
    traj.samples
        .iter()
        .map(|s| s.min_abs_rho_prime * s.min_abs_rho_prime)
        .fold(f64::INFINITY, f64::min)
}

struct Integrator<'a> {
    inst: &'a ProblemInstance,
    family: ReparamFamily,
    z_ref: Option<&'a [f64]>,
}

impl Integrator<'_> {
    fn rhs(&self, w: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut g = full_grad(self.inst, w)?;
        for gi in g.iter_mut() {
            *gi = -*gi;
        }
        Ok(g)
    }

    fn sample(&self, t: f64, w: &[f64]) -> Result<Sample, FlowError> {
        let w_tilde: Vec<f64> = w.iter().map(|&x| self.family.apply(x)).collect();
        let loss = loss_at_tilde(self.inst, &w_tilde)?;
        let min_abs_rho_prime = w
            .iter()
            .map(|&x| self.family.derivative(x).abs())
            .fold(f64::INFINITY, f64::min);
        let bregman_to_ref = match self.z_ref {
            Some(_) if !w_tilde.iter().all(|&v| self.family.domain().contains(v)) => Some(f64::INFINITY),
            Some(z) => Some(bregman_divergence(self.family, z, &w_tilde)?.to_f64()),
            None => None,
        };
        Ok(Sample {
            t,
            w: w.to_vec(),
            w_tilde,
            loss,
            min_abs_rho_prime,
            bregman_to_ref,
        })
    }
}

/// Integrates the flow from `inst.w0()`.
/// `k·step`, clamped to `t_max` and snapped to it within a few ulps so that
/// the grid ends exactly at `t_max`.
fn fixed_grid_time(k: usize, step: f64, t_max: f64) -> f64 {
    let t = k as f64 * step;
    if t >= t_max * (1.0 - 4.0 * f64::EPSILON) {
        t_max
    } else {
        t
    }
}

pub fn integrate(inst: &ProblemInstance, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
    integrate_with_reference(inst, cfg, None)
}

/// As [`integrate`], additionally recording `D_F(z_ref, w̃(t))` per sample.
pub fn integrate_with_reference(
    inst: &ProblemInstance,
    cfg: &FlowConfig,
    z_ref: Option<&[f64]>,
) -> Result<Trajectory, FlowError> {
    cfg.validate()?;
    let family = inst.reparam();
    if family.has_critical_points() {
        if let Some(index) = inst.w0().iter().position(|&w| family.derivative(w) == 0.0) {
            return Err(FlowError::SaddleStart { index });
        }
    }
    let it = Integrator { inst, family, z_ref };

    let mut t = 0.0;
    let mut w = inst.w0().to_vec();
    let first = it.sample(t, &w)?;
    let mut samples = vec![first];
    let mut events = Vec::new();
    let mut steps = 0usize;

    if samples[0].loss <= cfg.loss_tol {
        return Ok(Trajectory {
            family,
            samples,
            terminal: Terminal::LossTol,
            events,
            steps,
            slack: cfg.slack(),
        });
    }

    let mut next_log = match cfg.method {
        Method::Euler { step } | Method::Rk4 { step } => step,
        Method::AdaptiveRk45 { initial_step, .. } => initial_step,
    };
    let mut h = next_log;
    let mut k1 = it.rhs(&w)?;
    let terminal;

    loop {
        if t >= cfg.t_max {
            terminal = Terminal::TMax;
            break;
        }
        let (w_new, dt) = match cfg.method {
            Method::Euler { step } => {
                let dt = fixed_grid_time(steps + 1, step, cfg.t_max) - t;
                let wn: Vec<f64> = w.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
                (wn, dt)
            }
            Method::Rk4 { step } => {
                let dt = fixed_grid_time(steps + 1, step, cfg.t_max) - t;
                (rk4_step(&it, &w, &k1, dt)?, dt)
            }
            Method::AdaptiveRk45 { rtol, atol, .. } => {
                let mut accepted = None;
                while accepted.is_none() {
                    h = h.min(cfg.t_max - t);
                    if h < ADAPTIVE_MIN_STEP * t.max(1.0) || steps >= ADAPTIVE_MAX_STEPS {
                        return Err(FlowError::StepUnderflow {
                            t,
                            last_valid: Box::new(it.sample(t, &w)?),
                        });
                    }
                    let (wn, err) = dopri_step(&it, &w, &k1, h, rtol, atol)?;
                    let factor = if err == 0.0 {
                        5.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    if err <= 1.0 && wn.iter().all(|v| v.is_finite()) {
                        accepted = Some((wn, h));
                        h *= factor;
                    } else if wn.iter().all(|v| v.is_finite()) {
                        h *= factor.min(1.0);
                    } else {
                        h *= 0.2;
                    }
                }
                accepted.expect("loop exits with an accepted step")
            }
        };
        steps += 1;
        let t_new = match cfg.method {
            Method::Euler { step } | Method::Rk4 { step } => fixed_grid_time(steps, step, cfg.t_max),
            Method::AdaptiveRk45 { .. } => t + dt,
        };

        if w_new.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite {
                t: t_new,
                last_valid: Box::new(it.sample(t, &w)?),
            });
        }

        if family.has_critical_points() {
            for (i, (&a, &b)) in w.iter().zip(&w_new).enumerate() {
                let near = |x: f64| family.derivative(x).abs() < CRITICAL_THRESHOLD;
                if near(b) && !near(a) {
                    events.push(RegularityEvent { t: t_new, index: i });
                } else if (a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0) {
                    let te = t + dt * a / (a - b);
                    events.push(RegularityEvent { t: te, index: i });
                }
            }
        }

        t = t_new;
        w = w_new;

        let wt: Vec<f64> = w.iter().map(|&x| family.apply(x)).collect();
        let loss = loss_at_tilde(inst, &wt)?;
        if !loss.is_finite() {
            return Err(FlowError::NonFinite {
                t,
                last_valid: Box::new(samples.last().cloned().expect("nonempty")),
            });
        }

        let stop = if loss <= cfg.loss_tol {
            Some(Terminal::LossTol)
        } else if norm_inf(&w) > cfg.divergence_bound {
            Some(Terminal::Diverged)
        } else if family.domain().is_bounded() && wt.iter().any(|v| v.abs() >= 1.0) {
            Some(Terminal::BoundaryHit)
        } else if t >= cfg.t_max {
            Some(Terminal::TMax)
        } else {
            None
        };

        let log_now = match cfg.log_schedule {
            LogSchedule::EveryStep => true,
            LogSchedule::Geometric { ratio } => {
                if t >= next_log {
                    next_log = (t * ratio).max(next_log);
                    true
                } else {
                    false
                }
            }
        };
        if log_now || stop.is_some() {
            samples.push(it.sample(t, &w)?);
        }
        if let Some(s) = stop {
            terminal = s;
            break;
        }
        k1 = it.rhs(&w)?;
    }

    Ok(Trajectory {
        family,
        samples,
        terminal,
        events,
        steps,
        slack: cfg.slack(),
    })
}

fn rk4_step(it: &Integrator<'_>, w: &[f64], k1: &[f64], h: f64) -> Result<Vec<f64>, FlowError> {
    let stage = |k: &[f64], c: f64| -> Vec<f64> { w.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k2 = it.rhs(&stage(k1, 0.5 * h))?;
    let k3 = it.rhs(&stage(&k2, 0.5 * h))?;
    let k4 = it.rhs(&stage(&k3, h))?;
    Ok((0..w.len())
        .map(|i| w[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

// Dormand–Prince 5(4) tableau. The right-hand side is autonomous, so the
// nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One Dormand–Prince step; returns the 5th-order solution and the scaled
/// RMS error estimate.
///
/// For families whose mirror map `h ∘ ρ` is steep somewhere (a critical
/// point of `ρ`, or a bounded domain), each coordinate's error is also
/// measured in mirror coordinates and the larger ratio is kept. Near a zero
/// of `ρ'` a small error in `w` is a large error in `h(w̃)`, and `h(w̃)` is
/// what fixes the limit.
fn dopri_step(
    it: &Integrator<'_>,
    w: &[f64],
    k1: &[f64],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(Vec<f64>, f64), FlowError> {
    let n = w.len();
    let comb = |terms: &[(&[f64], f64)]| -> Vec<f64> {
        (0..n)
            .map(|i| w[i] + h * terms.iter().map(|(k, c)| c * k[i]).sum::<f64>())
            .collect()
    };
    let k2 = it.rhs(&comb(&[(k1, A21)]))?;
    let k3 = it.rhs(&comb(&[(k1, A31), (&k2, A32)]))?;
    let k4 = it.rhs(&comb(&[(k1, A41), (&k2, A42), (&k3, A43)]))?;
    let k5 = it.rhs(&comb(&[(k1, A51), (&k2, A52), (&k3, A53), (&k4, A54)]))?;
    let k6 = it.rhs(&comb(&[(k1, A61), (&k2, A62), (&k3, A63), (&k4, A64), (&k5, A65)]))?;
    let w5 = comb(&[(k1, B1), (&k3, B3), (&k4, B4), (&k5, B5), (&k6, B6)]);
    if w5.iter().any(|v| !v.is_finite()) {
        return Ok((w5, f64::INFINITY));
    }
    let k7 = it.rhs(&w5)?;
    let mirror = |x: f64| it.family.h(it.family.apply(x)).unwrap_or(f64::NAN);
    let mut acc = 0.0;
    for i in 0..n {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = atol + rtol * w[i].abs().max(w5[i].abs());
        let mut ratio = (e / sc).abs();
        if it.family.has_critical_points() || it.family.domain().is_bounded() {
            let (m0, m5, m4) = (mirror(w[i]), mirror(w5[i]), mirror(w5[i] - e));
            let em = (m5 - m4) / (atol + rtol * m0.abs().max(m5.abs()));
            ratio = if em.is_nan() { f64::INFINITY } else { ratio.max(em.abs()) };
        }
        acc += ratio * ratio;
    }
    Ok((w5, (acc / n as f64).sqrt()))
}
