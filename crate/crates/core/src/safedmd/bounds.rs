use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::SampledDynamics;
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::sets::BoxSet;

use super::model::SurrogateModel;
use super::rng_for;

/// Empirical constants of the one-step and uniform surrogate error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    pub c_x: f64,
    pub c_u: f64,
    pub eps: f64,
    pub l_k: f64,
    pub confidence_note: String,
}

/// Outcome of re-checking a bound on fresh samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub n_samples: usize,
    pub n_violations: usize,
    /// Largest observed `error / bound`.
    pub worst_ratio: f64,
}

impl BoundCheck {
    pub fn violation_rate(&self) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            self.n_violations as f64 / self.n_samples as f64
        }
    }
}

pub const EPS_INFLATION: f64 = 1.05;
pub const PROPORTIONAL_INFLATION: f64 = 1.05;
pub const L_K_INFLATION: f64 = 1.1;
/// Constants are floored here so that they stay strictly positive on exact surrogates.
pub const CONSTANT_FLOOR: f64 = 1e-15;

const STREAM_VALIDATION: u64 = 100;
const STREAM_PROPORTIONAL_CHECK: u64 = 101;
const STREAM_ROLLOUT_CHECK: u64 = 102;

/// `Σ_{i<κ} L_K^i`.
pub fn cbar(bounds: &ErrorBounds, kappa: usize) -> f64 {
    geometric_sum(bounds.l_k, kappa)
}

pub(crate) fn geometric_sum(l: f64, kappa: usize) -> f64 {
    if kappa == 0 {
        return 0.0;
    }
    if (l - 1.0).abs() < 1e-12 {
        kappa as f64
    } else {
        (l.powi(kappa as i32) - 1.0) / (l - 1.0)
    }
}

struct Residual {
    r: f64,
    lift_dist: f64,
    u_norm: f64,
}

fn one_step_residual(
    model: &SurrogateModel,
    sd: &SampledDynamics,
    dict: &Dictionary,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<Residual> {
    let z = dict.lift_full(x)?;
    let next = dict.lift_full(&sd.flow(x, u)?)?;
    let r = (next - model.k_of_u(u)? * &z).norm();
    if !r.is_finite() {
        return Err(Error::ValidationFailed(format!("non-finite residual at x = {x}, u = {u}")));
    }
    Ok(Residual {
        r,
        lift_dist: z.rows(1, z.len() - 1).norm(),
        u_norm: u.norm(),
    })
}

fn unit_inputs(m: usize) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(m)];
    for i in 0..m {
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        out.push(e);
    }
    out
}

/// Smallest `(c_x, c_u) ≥ 0` dominating every residual, in the sense of the smallest
/// mean bound over the samples.
fn dominating_pair(res: &[Residual]) -> (f64, f64) {
    let mean_a = res.iter().map(|s| s.lift_dist).sum::<f64>() / res.len() as f64;
    let mean_b = res.iter().map(|s| s.u_norm).sum::<f64>() / res.len() as f64;
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for s in res {
        if s.lift_dist > 0.0 {
            let ratio = s.r / s.lift_dist;
            hi = hi.max(ratio);
            if s.u_norm == 0.0 {
                lo = lo.max(ratio);
            }
        }
    }
    hi = hi.max(lo);
    let c_u_of = |c_x: f64| {
        res.iter()
            .filter(|s| s.u_norm > 0.0)
            .map(|s| (s.r - c_x * s.lift_dist) / s.u_norm)
            .fold(0.0f64, f64::max)
    };
    let objective = |c_x: f64| c_x * mean_a + c_u_of(c_x) * mean_b;
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - golden * (b - a);
    let mut x2 = a + golden * (b - a);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    for _ in 0..200 {
        if b - a <= 1e-14 * hi.max(1e-300) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - golden * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + golden * (b - a);
            f2 = objective(x2);
        }
    }
    let c_x = 0.5 * (a + b);
    (c_x, c_u_of(c_x))
}

/// Estimates `c_x`, `c_u`, `ε` and `L_K` on uniform validation draws from `X × U` together with
/// boundary points of `X` paired with the vertices of `U`, zero and the unit inputs.
pub fn estimate_error_constants(
    model: &SurrogateModel,
    sd: &SampledDynamics,
    dict: &Dictionary,
    x_box: &BoxSet,
    u_box: &BoxSet,
    n_val: usize,
    seed: u64,
) -> Result<ErrorBounds> {
    if n_val < 1000 {
        return Err(Error::InvalidParameter(format!("at least 1000 validation draws required, got {n_val}")));
    }
    if u_box.dim() != model.input_dim() || x_box.dim() != sd.state_dim() {
        return Err(Error::DimensionError("constraint boxes do not match the model".into()));
    }
    let mut rng = rng_for(seed, STREAM_VALIDATION);
    let mut res = Vec::with_capacity(n_val + 64);
    for _ in 0..n_val {
        let x = x_box.sample(&mut rng);
        let u = u_box.sample(&mut rng);
        res.push(one_step_residual(model, sd, dict, &x, &u)?);
    }
    let mut corner_inputs = u_box.vertices();
    corner_inputs.extend(unit_inputs(model.input_dim()).into_iter().filter(|u| u_box.contains(u)));
    let boundary = x_box.boundary_points();
    for x in &boundary {
        for u in &corner_inputs {
            res.push(one_step_residual(model, sd, dict, x, u)?);
        }
    }
    let max_r = res.iter().map(|s| s.r).fold(0.0f64, f64::max);
    let (c_x, c_u) = dominating_pair(&res);

    let mut l_k = 0.0f64;
    let mut inputs = u_box.vertices();
    if model.input_dim() <= 2 {
        inputs.extend(u_box.grid(11));
    }
    for u in &inputs {
        l_k = l_k.max(spectral_norm(&model.k_of_u(u)?));
    }

    let n_total = res.len();
    Ok(ErrorBounds {
        c_x: (c_x * PROPORTIONAL_INFLATION).max(CONSTANT_FLOOR),
        c_u: (c_u * PROPORTIONAL_INFLATION).max(CONSTANT_FLOOR),
        eps: (max_r * EPS_INFLATION).max(CONSTANT_FLOOR),
        l_k: l_k * L_K_INFLATION,
        confidence_note: format!(
            "empirical estimate from {n_total} one-step residuals ({n_val} uniform draws, {} boundary pairs, seed {seed}); \
             max residual {max_r:e}; no probabilistic tolerance applied",
            n_total - n_val
        ),
    })
}

/// Re-checks `r(x,u) ≤ c_x‖Φ̂(x)‖ + c_u‖u‖` on `n` fresh uniform draws.
pub fn validate_proportional_bound(
    model: &SurrogateModel,
    sd: &SampledDynamics,
    dict: &Dictionary,
    bounds: &ErrorBounds,
    x_box: &BoxSet,
    u_box: &BoxSet,
    n: usize,
    seed: u64,
) -> Result<BoundCheck> {
    let mut rng = rng_for(seed, STREAM_PROPORTIONAL_CHECK);
    let mut check = BoundCheck {
        n_samples: n,
        n_violations: 0,
        worst_ratio: 0.0,
    };
    for _ in 0..n {
        let x = x_box.sample(&mut rng);
        let u = u_box.sample(&mut rng);
        let s = one_step_residual(model, sd, dict, &x, &u)?;
        let bound = bounds.c_x * s.lift_dist + bounds.c_u * s.u_norm;
        if s.r > bound {
            check.n_violations += 1;
        }
        if bound > 0.0 {
            check.worst_ratio = check.worst_ratio.max(s.r / bound);
        }
    }
    Ok(check)
}

/// Rolls the surrogate and the plant side by side from fresh initial states under random
/// inputs in `U`. A rollout violates when its lifted error exceeds `cbar(κ)·ε` at any
/// `κ ≤ max_kappa`.
pub fn validate_rollout_bound(
    model: &SurrogateModel,
    sd: &SampledDynamics,
    dict: &Dictionary,
    bounds: &ErrorBounds,
    x_box: &BoxSet,
    u_box: &BoxSet,
    n_rollouts: usize,
    max_kappa: usize,
    seed: u64,
) -> Result<BoundCheck> {
    if max_kappa == 0 {
        return Err(Error::InvalidParameter("rollout length must be at least 1".into()));
    }
    let mut rng = rng_for(seed, STREAM_ROLLOUT_CHECK);
    let mut check = BoundCheck {
        n_samples: n_rollouts,
        n_violations: 0,
        worst_ratio: 0.0,
    };
    for _ in 0..n_rollouts {
        let len = rng.random_range(1..=max_kappa);
        let mut x = x_box.sample(&mut rng);
        let mut z = dict.lift_full(&x)?;
        let mut violated = false;
        for kappa in 1..=len {
            let u = u_box.sample(&mut rng);
            z = model.k_of_u(&u)? * z;
            x = sd.flow(&x, &u)?;
            let err = (dict.lift_full(&x)? - &z).norm();
            if !err.is_finite() {
                return Err(Error::ValidationFailed(format!("non-finite rollout error at step {kappa}")));
            }
            let bound = cbar(bounds, kappa) * bounds.eps;
            if err > bound {
                violated = true;
            }
            check.worst_ratio = check.worst_ratio.max(err / bound);
        }
        if violated {
            check.n_violations += 1;
        }
    }
    Ok(check)
}
