//! Gauss–Newton augmented-Lagrangian solver for the single-shooting OCP.
//!
//! Inputs are the only decision variables; the input box is kept exactly by a projected
//! Newton box-QP subproblem, state and terminal constraints enter through an augmented
//! Lagrangian with normalized constraint functions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

use super::predictor::LiftedPredictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Gauss–Newton iterations per solve, summed over all multiplier updates.
    pub max_iters: usize,
    /// Stationarity tolerance on the projected merit gradient (absolute).
    pub tol: f64,
    /// Constraints are imposed with this normalized safety margin.
    pub backoff: f64,
    pub rho_init: f64,
    pub rho_max: f64,
    /// Random initial sequences tried on a cold start in addition to zeros and the
    /// terminal-controller rollout.
    pub n_random_starts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            backoff: 1e-7,
            rho_init: 10.0,
            rho_max: 1e10,
            n_random_starts: 3,
            seed: 0,
        }
    }
}

/// Per-step state box `lo ≤ x ≤ hi`, normalized by `scale` in the constraint functions.
#[derive(Debug, Clone)]
pub(crate) struct StateBound {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub scale: DVector<f64>,
}

pub(crate) struct Problem<'a, P: LiftedPredictor> {
    pub predictor: &'a P,
    pub dict: &'a Dictionary,
    pub horizon: usize,
    pub z0: DVector<f64>,
    /// `Qᵀ`-side Cholesky factor: `xᵀQx = ‖q_half x‖²`.
    pub q_half: DMatrix<f64>,
    pub r_half: DMatrix<f64>,
    /// `V_f(x) = ‖vf_half Φ̂(x)‖²`.
    pub vf_half: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
    /// Entries `1..=N`; `None` leaves the step unconstrained.
    pub state_bounds: Vec<Option<StateBound>>,
    pub terminal_level: Option<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    /// `ℓ(x̂, ·)` state part, constant in the inputs.
    pub initial_state_cost: f64,
}

#[derive(Clone)]
pub(crate) struct Evaluation {
    pub lifted: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
    /// Normalized constraint values without back-off; feasible iff all `≤ 0`.
    pub g: Vec<f64>,
}

impl Evaluation {
    pub fn violation(&self) -> f64 {
        self.g.iter().copied().fold(0.0, f64::max)
    }
}

pub(crate) struct SolveOutcome {
    pub u: DVector<f64>,
    pub eval: Evaluation,
    pub feasible: bool,
    pub iters: usize,
}

impl<'a, P: LiftedPredictor> Problem<'a, P> {
    fn n(&self) -> usize {
        self.dict.state_dim()
    }

    fn m(&self) -> usize {
        self.predictor.input_dim()
    }

    pub fn input_at(&self, u: &DVector<f64>, k: usize) -> DVector<f64> {
        let m = self.m();
        u.rows(k * m, m).into_owned()
    }

    pub fn project_inputs(&self, u: &DVector<f64>) -> DVector<f64> {
        u.zip_zip_map(&self.u_lo, &self.u_hi, |v, lo, hi| v.clamp(lo, hi))
    }

    fn constraint_count(&self) -> usize {
        let n = self.n();
        self.state_bounds.iter().flatten().count() * 2 * n + usize::from(self.terminal_level.is_some())
    }

    pub fn evaluate(&self, u: &DVector<f64>) -> Result<Evaluation> {
        let n = self.n();
        let mut lifted = Vec::with_capacity(self.horizon + 1);
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut z = self.z0.clone();
        let mut cost = self.initial_state_cost;
        states.push(z.rows(1, n).into_owned());
        lifted.push(z.clone());
        for k in 0..self.horizon {
            let uk = self.input_at(u, k);
            cost += (&self.r_half * &uk).norm_squared();
            z = self.predictor.step(&z, &uk);
            let x = z.rows(1, n).into_owned();
            if k + 1 < self.horizon {
                cost += (&self.q_half * &x).norm_squared();
            }
            states.push(x);
            lifted.push(z.clone());
        }
        let x_n = &states[self.horizon];
        let hat_n = self.dict.lift_hat(x_n);
        let vf = match &hat_n {
            Ok(h) => (&self.vf_half * h).norm_squared(),
            Err(_) => f64::INFINITY,
        };
        cost += vf;
        let mut g = Vec::with_capacity(self.constraint_count());
        for (k, bound) in self.state_bounds.iter().enumerate() {
            if let Some(b) = bound {
                let x = &states[k + 1];
                for i in 0..n {
                    g.push((x[i] - b.hi[i]) / b.scale[i]);
                    g.push((b.lo[i] - x[i]) / b.scale[i]);
                }
            }
        }
        if let Some(level) = self.terminal_level {
            g.push((vf - level) / level);
        }
        if !cost.is_finite() || g.iter().any(|v| v.is_nan()) {
            return Err(Error::SolverDiverged(format!("non-finite cost {cost}")));
        }
        Ok(Evaluation { lifted, states, cost, g })
    }

    /// Sensitivities `∂z_k/∂u` for `k = 0..=N`, each `(M+1) × (N m)`.
    fn sensitivities(&self, u: &DVector<f64>, lifted: &[DVector<f64>]) -> Vec<DMatrix<f64>> {
        let m = self.m();
        let dim = self.predictor.lifted_dim();
        let nm = self.horizon * m;
        let mut out = Vec::with_capacity(self.horizon + 1);
        out.push(DMatrix::zeros(dim, nm));
        for k in 0..self.horizon {
            let uk = self.input_at(u, k);
            let mut next = DMatrix::zeros(dim, nm);
            if k > 0 {
                let kmat = self.predictor.state_jacobian(&uk);
                let prev = out[k].columns(0, k * m);
                next.columns_mut(0, k * m).copy_from(&(kmat * prev));
            }
            next.columns_mut(k * m, m).copy_from(&self.predictor.input_jacobian(&lifted[k]));
            out.push(next);
        }
        out
    }

    /// Exact gradient of the cost at `u`.
    pub fn cost_gradient(&self, u: &DVector<f64>, ev: &Evaluation) -> DVector<f64> {
        let (r, jac, _) = self.linearize(u, ev);
        jac.tr_mul(&r) * 2.0
    }

    /// Gauss–Newton residuals and Jacobian of the cost (the constant initial-state part
    /// excluded) and the constraint Jacobian, rows ordered as in [`Evaluation::g`].
    fn linearize(&self, u: &DVector<f64>, ev: &Evaluation) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n();
        let m = self.m();
        let nm = self.horizon * m;
        let mm = self.dict.m_last();
        let sens = self.sensitivities(u, &ev.lifted);
        let rows = n * (self.horizon - 1) + m * self.horizon + mm;
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, nm);
        let mut row = 0;
        for k in 1..self.horizon {
            let dx = sens[k].rows(1, n);
            r.rows_mut(row, n).copy_from(&(&self.q_half * &ev.states[k]));
            jac.view_mut((row, 0), (n, k * m)).copy_from(&(&self.q_half * dx.columns(0, k * m)));
            row += n;
        }
        for k in 0..self.horizon {
            let uk = self.input_at(u, k);
            r.rows_mut(row, m).copy_from(&(&self.r_half * uk));
            jac.view_mut((row, k * m), (m, m)).copy_from(&self.r_half);
            row += m;
        }
        let x_n = &ev.states[self.horizon];
        let hat_n = self.dict.lift_hat(x_n).expect("finite terminal state");
        let dphi = self.dict.jacobian_hat(x_n) * sens[self.horizon].rows(1, n);
        r.rows_mut(row, mm).copy_from(&(&self.vf_half * &hat_n));
        jac.view_mut((row, 0), (mm, nm)).copy_from(&(&self.vf_half * &dphi));

        let mut gjac = DMatrix::zeros(ev.g.len(), nm);
        let mut gi = 0;
        for (k, bound) in self.state_bounds.iter().enumerate() {
            if let Some(b) = bound {
                let dx = sens[k + 1].rows(1, n);
                for i in 0..n {
                    let drow = dx.row(i) / b.scale[i];
                    gjac.row_mut(gi).copy_from(&drow);
                    gjac.row_mut(gi + 1).copy_from(&(-drow));
                    gi += 2;
                }
            }
        }
        if let Some(level) = self.terminal_level {
            let grad = (&self.p_inv * &hat_n).transpose() * &dphi * (2.0 / level);
            gjac.row_mut(gi).copy_from(&grad);
        }
        (r, jac, gjac)
    }
}

fn merit(ev: &Evaluation, lambda: &[f64], rho: f64, backoff: f64) -> f64 {
    let mut value = ev.cost;
    for (g, l) in ev.g.iter().zip(lambda) {
        let shifted = (g + backoff + l / rho).max(0.0);
        value += 0.5 * rho * shifted * shifted - l * l / (2.0 * rho);
    }
    value
}

/// `min ½ dᵀHd + gᵀd` over `lo ≤ d ≤ hi` by projected Newton with an active set.
pub(crate) fn box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let dim = g.len();
    let quad = |d: &DVector<f64>| 0.5 * d.dot(&(h * d)) + g.dot(d);
    let mut d = DVector::zeros(dim).zip_zip_map(lo, hi, |v: f64, l, u| v.clamp(l, u));
    let mut fval = quad(&d);
    for _ in 0..50 {
        let grad = h * &d + g;
        let free: Vec<usize> = (0..dim)
            .filter(|&i| {
                let at_lo = d[i] <= lo[i] + 1e-14 * (1.0 + lo[i].abs());
                let at_hi = d[i] >= hi[i] - 1e-14 * (1.0 + hi[i].abs());
                !((at_lo && grad[i] > 0.0) || (at_hi && grad[i] < 0.0))
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let gf = DVector::from_fn(free.len(), |a, _| grad[free[a]]);
        let Some(ch) = hff.cholesky() else { break };
        let step = ch.solve(&(-gf));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = d.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] = (d[i] + t * step[a]).clamp(lo[i], hi[i]);
            }
            let ft = quad(&trial);
            if ft <= fval - 1e-12 * fval.abs() || (ft < fval && t < 1.0) {
                let moved = (&trial - &d).amax();
                d = trial;
                fval = ft;
                accepted = moved > 1e-15;
                break;
            }
            if ft <= fval && t == 1.0 {
                // full Newton step without measurable change: converged
                d = trial;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    d
}

pub(crate) fn projected_gradient_norm(u: &DVector<f64>, grad: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        let moved = (u[i] - grad[i]).clamp(lo[i], hi[i]) - u[i];
        worst = worst.max(moved.abs());
    }
    worst
}

/// Runs the augmented-Lagrangian Gauss–Newton iteration from `u_init` (projected onto the
/// input box) and returns the best feasible iterate by cost, or the last iterate.
pub(crate) fn solve<P: LiftedPredictor>(problem: &Problem<'_, P>, u_init: &DVector<f64>, opts: &SolverOptions) -> Result<SolveOutcome> {
    let mut u = problem.project_inputs(u_init);
    let mut ev = problem.evaluate(&u)?;
    let mut lambda = vec![0.0; ev.g.len()];
    let mut rho = opts.rho_init;
    let mut best: Option<(DVector<f64>, Evaluation)> = None;
    let consider = |u: &DVector<f64>, ev: Evaluation, best: &mut Option<(DVector<f64>, Evaluation)>| {
        if ev.violation() <= 0.0 && best.as_ref().is_none_or(|(_, b)| ev.cost < b.cost) {
            *best = Some((u.clone(), ev));
        }
    };
    consider(&u, ev.clone(), &mut best);
    let mut iters = 0;
    let mut prev_violation = f64::INFINITY;

    'outer: while iters < opts.max_iters {
        let mut inner_converged = false;
        let mut inner = 0;
        while iters < opts.max_iters && inner < 25 {
            iters += 1;
            inner += 1;
            let (r, jac, gjac) = problem.linearize(&u, &ev);
            let mut r_all = r.clone();
            let mut j_all = jac;
            let active: Vec<usize> = (0..ev.g.len())
                .filter(|&i| ev.g[i] + opts.backoff + lambda[i] / rho > 0.0)
                .collect();
            if !active.is_empty() {
                let base = r_all.len();
                let w = (0.5 * rho).sqrt();
                r_all = r_all.resize_vertically(base + active.len(), 0.0);
                j_all = j_all.resize_vertically(base + active.len(), 0.0);
                for (a, &i) in active.iter().enumerate() {
                    r_all[base + a] = w * (ev.g[i] + opts.backoff + lambda[i] / rho);
                    j_all.row_mut(base + a).copy_from(&(gjac.row(i) * w));
                }
            }
            let h = j_all.tr_mul(&j_all) * 2.0;
            let grad = j_all.tr_mul(&r_all) * 2.0;
            let m0 = merit(&ev, &lambda, rho, opts.backoff);
            let pg = projected_gradient_norm(&u, &grad, &problem.u_lo, &problem.u_hi);
            if pg <= opts.tol {
                inner_converged = true;
                break;
            }
            let lo = &problem.u_lo - &u;
            let hi = &problem.u_hi - &u;
            let d = box_qp(&h, &grad, &lo, &hi);
            let slope = grad.dot(&d);
            if slope >= 0.0 {
                inner_converged = true;
                break;
            }
            let mut t = 1.0;
            let mut stepped = None;
            for _ in 0..30 {
                let trial = problem.project_inputs(&(&u + &d * t));
                if let Ok(tev) = problem.evaluate(&trial) {
                    let mt = merit(&tev, &lambda, rho, opts.backoff);
                    if mt <= m0 + 1e-4 * t * slope {
                        stepped = Some((trial, tev, mt));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((trial, tev, mt)) = stepped else {
                inner_converged = true;
                break;
            };
            let step_size = (&trial - &u).amax();
            u = trial;
            ev = tev;
            consider(&u, ev.clone(), &mut best);
            if (m0 - mt) <= 1e-12 * m0.abs().max(1e-300) || step_size <= 1e-12 * (1.0 + u.amax()) {
                inner_converged = true;
                break;
            }
        }
        let violation = ev.violation();
        let complementarity = ev
            .g
            .iter()
            .zip(&lambda)
            .map(|(g, l)| (l * g).abs())
            .fold(0.0, f64::max);
        if inner_converged && violation <= 0.0 && complementarity <= opts.tol.max(1e-6) * ev.cost.max(1.0) {
            break 'outer;
        }
        if ev.g.is_empty() {
            if inner_converged {
                break;
            }
            continue;
        }
        for (l, g) in lambda.iter_mut().zip(&ev.g) {
            *l = (*l + rho * (g + opts.backoff)).max(0.0);
        }
        if violation > 0.25 * prev_violation {
            rho = (rho * 10.0).min(opts.rho_max);
        }
        prev_violation = violation;
    }
    consider(&u, ev.clone(), &mut best);
    Ok(match best {
        Some((u, eval)) => SolveOutcome { u, eval, feasible: true, iters },
        None => SolveOutcome { u, eval: ev, feasible: false, iters },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_qp_unconstrained() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![-1.0, 0.3]);
        let d = box_qp(&h, &g, &DVector::from_element(2, -10.0), &DVector::from_element(2, 10.0));
        let exact = h.clone().try_inverse().unwrap() * -&g;
        assert!((d - exact).amax() < 1e-12);
    }

    #[test]
    fn box_qp_active_bound() {
        // minimizer (2, 0) of (d0 − 2)² + d1², clipped at d0 ≤ 1
        let h = DMatrix::identity(2, 2) * 2.0;
        let g = DVector::from_vec(vec![-4.0, 0.0]);
        let d = box_qp(&h, &g, &DVector::from_element(2, -1.0), &DVector::from_element(2, 1.0));
        assert!((d[0] - 1.0).abs() < 1e-14);
        assert!(d[1].abs() < 1e-14);
    }

    #[test]
    fn box_qp_coupled_active_set() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let g = DVector::from_vec(vec![-8.0, 3.0, -1.0]);
        let lo = DVector::from_element(3, -0.5);
        let hi = DVector::from_element(3, 0.5);
        let d = box_qp(&h, &g, &lo, &hi);
        // KKT: projected gradient vanishes
        let grad = &h * &d + &g;
        assert!(projected_gradient_norm(&d, &grad, &lo, &hi) < 1e-10);
    }
}
