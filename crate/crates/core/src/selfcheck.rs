//! Quick invariant suite behind `bregflow selfcheck`. Every item runs in well
//! under a second; the exhaustive versions live in the test targets.

use crate::bias::g_sinh;
use crate::flow::{FlowConfig, Method};
use crate::linalg::{max_abs_diff, Matrix};
use crate::model::{full_grad, full_loss, LinkKind, LossKind};
use crate::oracle::{bregman_projection, brute_force_line, lp_min, min_norm_least_squares, SolveOptions, KKT_TOL};
use crate::problem::ProblemInstance;
use crate::reparam::ReparamFamily;
use crate::verify::{run_bias_agreement, run_lp_bound_check};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn item(name: &'static str, outcome: Result<(bool, String), String>) -> SelfCheck {
    match outcome {
        Ok((passed, detail)) => SelfCheck { name, passed, detail },
        Err(detail) => SelfCheck {
            name,
            passed: false,
            detail,
        },
    }
}

const FAMILIES: [ReparamFamily; 5] = [
    ReparamFamily::Identity,
    ReparamFamily::Power { p: 1.2 },
    ReparamFamily::Power { p: 1.8 },
    ReparamFamily::Sinh,
    ReparamFamily::Tanh,
];

const SAMPLE_W: [f64; 7] = [-2.3, -0.9, -0.2, 0.05, 0.4, 1.1, 2.7];

fn reparam_identities() -> Result<(bool, String), String> {
    let mut worst_round = 0.0f64;
    let mut worst_metric = 0.0f64;
    for f in FAMILIES {
        for w in SAMPLE_W {
            let zt = f.apply(w);
            let back = f.inverse(zt).map_err(|e| e.to_string())?;
            worst_round = worst_round.max((back - w).abs() / w.abs().max(1.0));
            let prod = f.h_prime(zt).map_err(|e| e.to_string())? * f.derivative(w).powi(2);
            worst_metric = worst_metric.max((prod - 1.0).abs());
        }
    }
    Ok((
        worst_round < 1e-10 && worst_metric < 1e-10,
        format!("round trip {worst_round:.1e}, h'·rho'^2 - 1 {worst_metric:.1e}"),
    ))
}

fn gradient_fd() -> Result<(bool, String), String> {
    let a = Matrix::from_rows(&[vec![0.6, -1.1, 0.3], vec![-0.2, 0.5, 0.9]]).map_err(|e| e.to_string())?;
    let y = [0.4, -0.3];
    let w = [0.7, -0.45, 0.35];
    let mut worst = 0.0f64;
    for f in FAMILIES {
        for link in [LinkKind::Identity, LinkKind::Cubic] {
            for loss in [LossKind::SquaredL2, LossKind::Power { q: 1.5 }] {
                let inst = ProblemInstance::new(a.clone(), y.to_vec(), link, loss, f, w.to_vec())
                    .map_err(|e| e.to_string())?;
                let g = full_grad(&inst, &w).map_err(|e| e.to_string())?;
                let h = 1e-6;
                for i in 0..w.len() {
                    let mut wp = w;
                    let mut wm = w;
                    wp[i] += h;
                    wm[i] -= h;
                    let fd = (full_loss(&inst, &wp).map_err(|e| e.to_string())?
                        - full_loss(&inst, &wm).map_err(|e| e.to_string())?)
                        / (2.0 * h);
                    worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1e-3));
                }
            }
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.1e}")))
}

fn oracle_cross_validation() -> Result<(bool, String), String> {
    let a = Matrix::from_rows(&[vec![-0.7, 1.0]]).map_err(|e| e.to_string())?;
    let opts = SolveOptions::default();
    let mut worst = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for (f, w0) in [
        (ReparamFamily::Sinh, [0.0, 0.0]),
        (ReparamFamily::Power { p: 1.2 }, [0.05, 0.05]),
        (ReparamFamily::Identity, [0.3, -0.1]),
    ] {
        let sol = bregman_projection(f, &a, &[2.0], &w0, &opts).map_err(|e| e.to_string())?;
        let bf = brute_force_line(&a, &[2.0], |z| {
            crate::bias::bregman_divergence(f, z, &w0).map_or(f64::INFINITY, |v| v.to_f64())
        })
        .map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&sol.z_star, &bf));
        worst_kkt = worst_kkt.max(sol.kkt_residual_primal.max(sol.kkt_residual_stationarity));
    }
    for p in [1.2, 1.8] {
        let sol = lp_min(&a, &[2.0], p, &opts).map_err(|e| e.to_string())?;
        let bf = brute_force_line(&a, &[2.0], |z| z.iter().map(|x| x.abs().powf(p)).sum()).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&sol.z_star, &bf));
        worst_kkt = worst_kkt.max(sol.kkt_residual_primal.max(sol.kkt_residual_stationarity));
    }
    Ok((
        worst <= 1e-6 && worst_kkt <= KKT_TOL,
        format!("oracle vs grid {worst:.1e}, kkt {worst_kkt:.1e}"),
    ))
}

fn bias_agreement() -> Result<(bool, String), String> {
    let a = Matrix::from_rows(&[vec![-0.7, 1.0, 0.4], vec![0.2, 0.3, -0.8]]).map_err(|e| e.to_string())?;
    let cfg = FlowConfig::adaptive(1e-10, 1e-12, 1e4).with_loss_tol(1e-16);
    let mut worst = 0.0f64;
    let mut all_checks = true;
    for (f, y) in [
        (ReparamFamily::Sinh, vec![1.0, -0.5]),
        (ReparamFamily::Tanh, vec![0.2, -0.1]),
        (ReparamFamily::Identity, vec![1.0, -0.5]),
    ] {
        let inst = ProblemInstance::new(a.clone(), y, LinkKind::Identity, LossKind::SquaredL2, f, vec![0.0; 3])
            .map_err(|e| e.to_string())?;
        let (rep, _) = run_bias_agreement(&inst, &cfg, &SolveOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(rep.agreement_inf.unwrap_or(f64::INFINITY));
        all_checks &= rep.all_checks_pass() && rep.reached_loss_tol;
    }
    Ok((
        worst <= 1e-6 && all_checks,
        format!("agreement {worst:.1e}, rate/decay/box checks {}", if all_checks { "hold" } else { "violated" }),
    ))
}

fn min_norm() -> Result<(bool, String), String> {
    let a = Matrix::from_rows(&[vec![1.0, 2.0, -0.5], vec![0.3, -1.0, 0.8]]).map_err(|e| e.to_string())?;
    let y = vec![0.7, -0.2];
    let inst = ProblemInstance::new(
        a.clone(),
        y.clone(),
        LinkKind::Identity,
        LossKind::SquaredL2,
        ReparamFamily::Identity,
        vec![0.0; 3],
    )
    .map_err(|e| e.to_string())?;
    let cfg = FlowConfig::new(Method::Euler { step: 1e-2 }, 1e4).with_loss_tol(1e-20);
    let traj = crate::flow::integrate(&inst, &cfg).map_err(|e| e.to_string())?;
    let d = max_abs_diff(&traj.last().w_tilde, &min_norm_least_squares(&a, &y));
    Ok((d <= 1e-6, format!("|w(T) - A^+ y| = {d:.1e}")))
}

fn g_sinh_values() -> Result<(bool, String), String> {
    let at_one = (g_sinh(&[1.0]) - (std::f64::consts::FRAC_PI_4 - 0.5 * std::f64::consts::LN_2)).abs();
    let ratio = g_sinh(&[1e-3]) / 1e-6;
    let ok = g_sinh(&[0.0]) == 0.0 && at_one <= 1e-12 && (ratio - 0.5).abs() <= 0.005;
    Ok((ok, format!("g(1) error {at_one:.1e}, g(t)/t^2 at 1e-3 = {ratio:.6}")))
}

fn lp_bound_fig1b() -> Result<(bool, String), String> {
    let a = Matrix::from_rows(&[vec![-0.7, -1.0]]).map_err(|e| e.to_string())?;
    let cfg = FlowConfig::new(Method::Euler { step: 1e-4 }, 1e4);
    let (rep, _) = run_lp_bound_check(1.8, &a, &[2.0], &[1e-4], LossKind::SquaredL2, &cfg, &SolveOptions::default())
        .map_err(|e| e.to_string())?;
    let e = &rep.lp.as_ref().expect("lp section").entries[0];
    let d = e.distance_to_lp_min.unwrap_or(f64::INFINITY);
    Ok((
        rep.all_checks_pass() && rep.reached_loss_tol && d <= 5e-3,
        format!("bound margin {:.3e}, distance to lp_min {d:.1e}", e.margin.unwrap_or(f64::NAN)),
    ))
}

pub fn selfcheck() -> Vec<SelfCheck> {
    vec![
        item("reparam identities", reparam_identities()),
        item("gradient vs finite differences", gradient_fd()),
        item("oracles vs brute force", oracle_cross_validation()),
        item("bias agreement and rate checks", bias_agreement()),
        item("l2 minimum norm limit", min_norm()),
        item("g_sinh values", g_sinh_values()),
        item("lp bound, p = 1.8", lp_bound_fig1b()),
    ]
}
