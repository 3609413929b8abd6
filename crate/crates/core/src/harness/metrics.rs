use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::max_eigenvalue;
use crate::mpc::{stage_cost, OcpSpec};
use crate::safedmd::cbar;
use crate::sets::BoxSet;

use super::trace::ClosedLoopTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Smallest candidate radius the trace eventually stays within.
    pub radius: Option<f64>,
    /// First index from which `‖x(k)‖ ≤ radius` holds for the rest of the trace (the final
    /// state counts as index `rows.len()`).
    pub entry_step: Option<usize>,
    pub entry_time: Option<f64>,
    /// Steps before entry where the norm grew compared to the previous step.
    pub envelope_violations: usize,
    pub n_state_violations: usize,
    pub n_input_violations: usize,
    pub constraints_held: bool,
    pub all_feasible: bool,
    pub final_norm: f64,
}

/// First index from which every norm is at most `r`.
pub fn entry_index(norms: &[f64], r: f64) -> Option<usize> {
    let mut entry = norms.len();
    for (i, v) in norms.iter().enumerate().rev() {
        if *v <= r {
            entry = i;
        } else {
            break;
        }
    }
    (entry < norms.len()).then_some(entry)
}

/// Empirical practical-stability summary of a trace against candidate radii.
pub fn practical_stability_metrics(
    trace: &ClosedLoopTrace,
    r_candidates: &[f64],
    x_box: &BoxSet,
    u_box: &BoxSet,
    dt: f64,
) -> StabilityReport {
    let norms = trace.norms();
    let mut cands: Vec<f64> = r_candidates.iter().copied().filter(|r| r.is_finite() && *r >= 0.0).collect();
    cands.sort_by(f64::total_cmp);
    let hit = cands.iter().find_map(|&r| entry_index(&norms, r).map(|e| (r, e)));
    let entry = hit.map(|(_, e)| e);
    let limit = entry.unwrap_or(norms.len());
    let envelope_violations = (1..limit).filter(|&i| norms[i] > norms[i - 1]).count();
    let mut n_state_violations = trace.rows.iter().filter(|r| !x_box.contains(&r.x)).count();
    if trace.succeeded() && !x_box.contains(&trace.final_state) {
        n_state_violations += 1;
    }
    let n_input_violations = trace.rows.iter().filter(|r| r.feasible && !u_box.contains(&r.u)).count();
    StabilityReport {
        radius: hit.map(|(r, _)| r),
        entry_step: entry,
        entry_time: entry.map(|e| e as f64 * dt),
        envelope_violations,
        n_state_violations,
        n_input_violations,
        constraints_held: n_state_violations == 0 && n_input_violations == 0,
        all_feasible: trace.succeeded() && trace.rows.iter().all(|r| r.feasible),
        final_norm: trace.final_norm(),
    }
}

/// `radius`, then decades from 10 down to `1e-12`.
pub fn default_radius_candidates(radius: f64) -> Vec<f64> {
    let mut c: Vec<f64> = (-12..=1).map(|e| 10f64.powi(e)).collect();
    c.push(radius);
    c
}

/// `Σ ℓ(x(k), u(k))` over the applied rows.
pub fn accumulated_stage_cost(trace: &ClosedLoopTrace, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    trace
        .rows
        .iter()
        .filter(|row| row.feasible)
        .map(|row| stage_cost(q, r, &row.x, &row.u))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// `C` in `V_N(x⁺) − V_N(x) ≤ −½‖x‖²_Q + C·ε`.
    pub constant: f64,
    /// `C·ε`.
    pub slack: f64,
    pub practical_radius: f64,
    pub n_checked: usize,
    pub n_violations: usize,
    /// Largest `lhs − rhs` over the checked steps (negative when all hold).
    pub worst_excess: f64,
    /// Largest value decrease relative to `½‖x‖²_Q` ignoring the slack, for reference.
    pub worst_decrease_ratio: f64,
}

/// `C = c̃ (‖P⁻¹‖ L_Φ (1 + c̄(N)) + ‖Q‖ Σ_{κ=1}^{N−1} c̄(κ))` with `c̃` bounding
/// `‖a + b‖` for states and lifts in `X`.
pub fn value_decrease_constant(spec: &OcpSpec, dict: &Dictionary) -> Result<f64> {
    let c_tilde = 2.0 * spec.x_box.max_norm().max(dict.max_hat_norm(&spec.x_box, 101)?);
    let n = spec.horizon;
    let p_inv_norm = max_eigenvalue(spec.ingredients.p_inv());
    let q_norm = max_eigenvalue(&spec.q);
    let tail: f64 = (1..n).map(|k| cbar(&spec.bounds, k)).sum();
    Ok(c_tilde * (p_inv_norm * spec.l_phi * (1.0 + cbar(&spec.bounds, n)) + q_norm * tail))
}

/// Checks the value-function decrease along consecutive MPC steps whose state norm
/// exceeds `practical_radius`.
pub fn lyapunov_audit(trace: &ClosedLoopTrace, spec: &OcpSpec, dict: &Dictionary, practical_radius: f64) -> Result<AuditReport> {
    let constant = value_decrease_constant(spec, dict)?;
    let slack = constant * spec.bounds.eps;
    if !slack.is_finite() {
        return Err(Error::InvalidParameter("decrease slack is not finite".into()));
    }
    let mut report = AuditReport {
        constant,
        slack,
        practical_radius,
        n_checked: 0,
        n_violations: 0,
        worst_excess: f64::NEG_INFINITY,
        worst_decrease_ratio: f64::NEG_INFINITY,
    };
    for pair in trace.rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (Some(va), Some(vb)) = (a.value, b.value) else { continue };
        if a.xnorm <= practical_radius {
            continue;
        }
        let half_q = 0.5 * (a.x.transpose() * &spec.q * &a.x)[(0, 0)];
        let excess = (vb - va) - (-half_q + slack);
        report.n_checked += 1;
        if excess > 0.0 {
            report.n_violations += 1;
        }
        report.worst_excess = report.worst_excess.max(excess);
        report.worst_decrease_ratio = report.worst_decrease_ratio.max((vb - va) / half_q);
    }
    Ok(report)
}
