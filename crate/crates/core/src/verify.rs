//! Experiment procedures combining the flow, the oracles and the checks.

use serde::Serialize;
use thiserror::Error;

use crate::bias::{
    bregman_divergence, check_box, check_decay, check_linear_rate_for, check_sublinear_rate,
    g_sinh, huber, lp_bound, tanh_box_bounds, BiasError, RateCheckResult,
};
use crate::flow::{integrate_with_reference, FlowConfig, FlowError, RegularityEvent, Terminal, Trajectory};
use crate::linalg::{max_abs_diff, norm_p, sigma_min_nonzero, LinalgError, Matrix};
use crate::model::{LinkKind, LossKind};
use crate::oracle::{bregman_projection, lp_min, OracleError, OracleSolution, SolveOptions};
use crate::problem::{InstanceError, ProblemInstance};
use crate::reparam::ReparamFamily;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("no admissible alpha: every value exceeds the validity threshold {alpha_max:e}")]
    NoAdmissibleAlpha { alpha_max: f64 },
}

/// Compact form of a [`RateCheckResult`] for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckSummary {
    pub holds: bool,
    pub worst_margin: f64,
    pub comparisons: usize,
    pub violations: usize,
}

impl From<&RateCheckResult> for CheckSummary {
    fn from(r: &RateCheckResult) -> Self {
        Self {
            holds: r.holds,
            worst_margin: r.worst_margin,
            comparisons: r.details.len(),
            violations: r.violations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub z_star: Vec<f64>,
    pub kkt_residual_primal: f64,
    pub kkt_residual_stationarity: f64,
    pub iterations: usize,
}

impl From<&OracleSolution> for OracleSummary {
    fn from(s: &OracleSolution) -> Self {
        Self {
            z_star: s.z_star.clone(),
            kkt_residual_primal: s.kkt_residual_primal,
            kkt_residual_stationarity: s.kkt_residual_stationarity,
            iterations: s.iterations,
        }
    }
}

/// One α of an ℓ_p bound sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpEntry {
    pub alpha: f64,
    pub valid: bool,
    pub rhs: f64,
    pub flow_norm: Option<f64>,
    pub margin: Option<f64>,
    pub holds: Option<bool>,
    /// `‖w̃_final − argmin ‖·‖_p‖∞`
    pub distance_to_lp_min: Option<f64>,
    pub terminal: Option<Terminal>,
    pub final_loss: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSection {
    pub p: f64,
    pub mu: f64,
    pub lp_min: OracleSummary,
    pub alpha_max: f64,
    pub entries: Vec<LpEntry>,
    /// `rhs(α)` decreases as `α` decreases over the admissible entries.
    pub rhs_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub family: String,
    pub p: Option<f64>,
    pub loss: String,
    pub link: String,
    pub rows: usize,
    pub cols: usize,
    pub w0_tilde: Vec<f64>,
    pub terminal: Terminal,
    pub reached_loss_tol: bool,
    pub steps: usize,
    pub final_time: f64,
    pub final_loss: f64,
    pub final_w_tilde: Vec<f64>,
    pub oracle: Option<OracleSummary>,
    pub agreement_inf: Option<f64>,
    pub decay: Option<CheckSummary>,
    pub sublinear: Option<CheckSummary>,
    pub linear: Option<CheckSummary>,
    pub tanh_box: Option<CheckSummary>,
    pub lp: Option<LpSection>,
    pub regularity_events: Vec<RegularityEvent>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    /// Whether every inequality recorded in the report holds.
    pub fn all_checks_pass(&self) -> bool {
        let checks = [&self.decay, &self.sublinear, &self.linear, &self.tanh_box];
        let rates = checks.iter().all(|c| c.is_none_or(|c| c.holds));
        let lp = self.lp.as_ref().is_none_or(|s| {
            s.rhs_monotone && s.entries.iter().all(|e| e.holds.unwrap_or(true))
        });
        rates && lp
    }
}

fn family_label(f: ReparamFamily) -> (String, Option<f64>) {
    match f {
        ReparamFamily::Power { p } => ("power".into(), Some(p)),
        other => (other.name().into(), None),
    }
}

fn loss_label(l: LossKind) -> String {
    match l {
        LossKind::SquaredL2 => "squared_l2".into(),
        LossKind::Power { q } => format!("power(q={q})"),
    }
}

fn link_label(l: LinkKind) -> String {
    match l {
        LinkKind::Identity => "identity".into(),
        LinkKind::Cubic => "cubic".into(),
    }
}

fn base_report(experiment: &str, inst: &ProblemInstance, traj: &Trajectory) -> ExperimentReport {
    let (family, p) = family_label(inst.reparam());
    let last = traj.last();
    ExperimentReport {
        experiment: experiment.into(),
        family,
        p,
        loss: loss_label(inst.loss()),
        link: link_label(inst.link()),
        rows: inst.a().rows(),
        cols: inst.a().cols(),
        w0_tilde: inst.w0_tilde(),
        terminal: traj.terminal,
        reached_loss_tol: traj.terminal == Terminal::LossTol,
        steps: traj.steps,
        final_time: last.t,
        final_loss: last.loss,
        final_w_tilde: last.w_tilde.clone(),
        oracle: None,
        agreement_inf: None,
        decay: None,
        sublinear: None,
        linear: None,
        tanh_box: None,
        lp: None,
        regularity_events: traj.events.clone(),
        notes: Vec::new(),
    }
}

/// Full set of checks against a reference point `z_ref` on the zero-loss set.
pub struct Checks {
    pub decay: Option<RateCheckResult>,
    pub sublinear: Option<RateCheckResult>,
    pub linear: Option<RateCheckResult>,
    pub tanh_box: Option<RateCheckResult>,
    pub notes: Vec<String>,
}

pub fn run_checks(
    inst: &ProblemInstance,
    traj: &Trajectory,
    z_ref: &[f64],
) -> Result<Checks, VerifyError> {
    let mut notes = Vec::new();
    let mut out = Checks {
        decay: None,
        sublinear: None,
        linear: None,
        tanh_box: None,
        notes: Vec::new(),
    };
    if inst.link() != LinkKind::Identity {
        notes.push("rate checks apply to the identity link only; skipped".into());
        out.notes = notes;
        return Ok(out);
    }
    out.decay = Some(check_decay(traj, inst, z_ref)?);
    out.sublinear = Some(check_sublinear_rate(traj, inst, z_ref)?);
    let sigma = sigma_min_nonzero(inst.a())?.sigma_min_nonzero;
    match check_linear_rate_for(traj, inst, sigma) {
        Ok(r) => out.linear = Some(r),
        Err(BiasError::Inapplicable(why)) => notes.push(format!("linear rate: {why}")),
        Err(e) => return Err(e.into()),
    }
    if inst.reparam() == ReparamFamily::Tanh {
        if z_ref.iter().any(|&z| z == 0.0) {
            notes.push("tanh box: reference point has a zero coordinate; skipped".into());
        } else {
            let d0 = bregman_divergence(ReparamFamily::Tanh, z_ref, &inst.w0_tilde())?.to_f64();
            let (lo, hi) = tanh_box_bounds(z_ref, d0)?;
            if lo.iter().chain(&hi).any(|v| v.abs() >= 1.0) {
                notes.push("tanh box: a bound rounds to +-1 in double precision".into());
            }
            out.tanh_box = Some(check_box(traj, &lo, &hi)?);
        }
    }
    if !traj.events.is_empty() {
        notes.push(format!(
            "{} regularity events: the flow touched a critical point of rho and may not be unique",
            traj.events.len()
        ));
    }
    out.notes = notes;
    Ok(out)
}

/// Integrates the flow, projects `w̃0` onto `{A z̃ = υ}` in the Bregman
/// geometry, and records their distance along with every inequality check.
pub fn run_bias_agreement(
    inst: &ProblemInstance,
    cfg: &FlowConfig,
    opts: &SolveOptions,
) -> Result<(ExperimentReport, Trajectory), VerifyError> {
    let f = inst.reparam();
    let sol = bregman_projection(f, inst.a(), inst.upsilon(), &inst.w0_tilde(), opts)?;
    let traj = integrate_with_reference(inst, cfg, Some(&sol.z_star))?;
    let checks = run_checks(inst, &traj, &sol.z_star)?;

    let mut report = base_report("bias_agreement", inst, &traj);
    report.agreement_inf = Some(max_abs_diff(&traj.last().w_tilde, &sol.z_star));
    report.oracle = Some((&sol).into());
    report.decay = checks.decay.as_ref().map(Into::into);
    report.sublinear = checks.sublinear.as_ref().map(Into::into);
    report.linear = checks.linear.as_ref().map(Into::into);
    report.tanh_box = checks.tanh_box.as_ref().map(Into::into);
    report.notes = checks.notes;
    if !report.reached_loss_tol {
        report
            .notes
            .push("incomplete: the flow stopped before reaching loss_tol".into());
    }
    Ok((report, traj))
}

/// Runs the flow from `w̃0 = α·1` for each admissible `α` and compares
/// `‖w̃_final‖_p` against the bound. Returns the report and the trajectory
/// of the last admissible `α`.
pub fn run_lp_bound_check(
    p: f64,
    a: &Matrix,
    y: &[f64],
    alpha_list: &[f64],
    loss: LossKind,
    cfg: &FlowConfig,
    opts: &SolveOptions,
) -> Result<(ExperimentReport, Trajectory), VerifyError> {
    let family = ReparamFamily::power(p).map_err(crate::problem::InstanceError::from)?;
    let lp_sol = lp_min(a, y, p, opts)?;
    let mu = norm_p(&lp_sol.z_star, p);
    let n = a.cols();
    let alpha_max = lp_bound(p, n, 0.0, mu)?.alpha_max;

    let mut entries = Vec::new();
    let mut notes = Vec::new();
    let mut last: Option<(ProblemInstance, Trajectory)> = None;
    for &alpha in alpha_list {
        let b = lp_bound(p, n, alpha, mu)?;
        if !b.valid {
            notes.push(format!("alpha = {alpha:e} exceeds the threshold {alpha_max:e}; skipped"));
            entries.push(LpEntry {
                alpha,
                valid: false,
                rhs: b.rhs,
                flow_norm: None,
                margin: None,
                holds: None,
                distance_to_lp_min: None,
                terminal: None,
                final_loss: None,
                steps: None,
            });
            continue;
        }
        let inst = ProblemInstance::with_alpha(a.clone(), y.to_vec(), LinkKind::Identity, loss, family, alpha)?;
        let traj = integrate_with_reference(&inst, cfg, Some(&lp_sol.z_star))?;
        let fin = traj.last();
        let flow_norm = norm_p(&fin.w_tilde, p);
        entries.push(LpEntry {
            alpha,
            valid: true,
            rhs: b.rhs,
            flow_norm: Some(flow_norm),
            margin: Some(b.rhs - flow_norm),
            holds: Some(flow_norm <= b.rhs),
            distance_to_lp_min: Some(max_abs_diff(&fin.w_tilde, &lp_sol.z_star)),
            terminal: Some(traj.terminal),
            final_loss: Some(fin.loss),
            steps: Some(traj.steps),
        });
        if traj.terminal != Terminal::LossTol {
            notes.push(format!("alpha = {alpha:e}: the flow stopped before reaching loss_tol"));
        }
        last = Some((inst, traj));
    }
    let (inst, traj) = last.ok_or(VerifyError::NoAdmissibleAlpha { alpha_max })?;

    let mut admissible: Vec<(f64, f64)> = entries.iter().filter(|e| e.valid).map(|e| (e.alpha, e.rhs)).collect();
    admissible.sort_by(|x, y| x.0.total_cmp(&y.0));
    let rhs_monotone = admissible.windows(2).all(|w| w[0].0 == w[1].0 || w[0].1 < w[1].1);

    let mut report = base_report("lp_bound", &inst, &traj);
    report.lp = Some(LpSection {
        p,
        mu,
        lp_min: (&lp_sol).into(),
        alpha_max,
        entries,
        rhs_monotone,
    });
    report.notes = notes;
    Ok((report, traj))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HuberRow {
    pub t: f64,
    pub g_sinh: f64,
    pub huber: f64,
}

/// `601` equispaced points on `[−6, 6]`.
pub fn default_huber_grid() -> Vec<f64> {
    (0..601).map(|i| -6.0 + 0.02 * i as f64).collect()
}

pub fn run_huber_comparison(grid: &[f64]) -> Vec<HuberRow> {
    grid.iter()
        .map(|&t| HuberRow {
            t,
            g_sinh: g_sinh(&[t]),
            huber: huber(t, std::f64::consts::FRAC_PI_2),
        })
        .collect()
}
