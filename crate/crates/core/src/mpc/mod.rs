//! Receding-horizon control over a lifted surrogate with error-aware constraint tightening,
//! warm starts from the shifted and prolonged sequence, and a one-way dual-mode switch.

mod predictor;
mod solver;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{is_spd, max_eigenvalue};
use crate::safedmd::{cbar, ErrorBounds};
use crate::sets::BoxSet;
use crate::terminal::{in_terminal_region, terminal_controller, TerminalIngredients};

pub use predictor::LiftedPredictor;
pub use solver::SolverOptions;

use solver::{Problem, StateBound};

/// `ℓ(x, u) = xᵀQx + uᵀRu`.
pub fn stage_cost(q: &DMatrix<f64>, r: &DMatrix<f64>, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (x.transpose() * q * x)[(0, 0)] + (u.transpose() * r * u)[(0, 0)]
}

/// Optimal control problem data shared by every closed-loop step.
#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x_box: BoxSet,
    pub u_box: BoxSet,
    pub bounds: ErrorBounds,
    pub ingredients: TerminalIngredients,
    /// Lift constant used to map the terminal error ball into the lifted ellipsoid.
    pub l_phi: f64,
    pub tightening_enabled: bool,
    pub state_constraints: bool,
    pub terminal_constraint: bool,
    pub solver: SolverOptions,
}

impl OcpSpec {
    /// Spec with state and terminal constraints and tightening switched on.
    pub fn new(
        horizon: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        x_box: BoxSet,
        u_box: BoxSet,
        bounds: ErrorBounds,
        ingredients: TerminalIngredients,
        l_phi: f64,
    ) -> Result<Self> {
        let spec = Self {
            horizon,
            q,
            r,
            x_box,
            u_box,
            bounds,
            ingredients,
            l_phi,
            tightening_enabled: true,
            state_constraints: true,
            terminal_constraint: true,
            solver: SolverOptions::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let n = self.x_box.dim();
        let m = self.u_box.dim();
        if self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::DimensionError("weights do not match the constraint boxes".into()));
        }
        if !is_spd(&self.q) || !is_spd(&self.r) {
            return Err(Error::InvalidParameter("Q and R must be symmetric positive definite".into()));
        }
        if !self.x_box.contains_origin_interior() {
            return Err(Error::InvalidParameter("the state box must contain the origin in its interior".into()));
        }
        if self.ingredients.input_dim() != m {
            return Err(Error::DimensionError("terminal ingredients do not match the input box".into()));
        }
        if self.tightening_enabled {
            if self.state_constraints {
                for k in 1..=self.horizon {
                    tightened_state_box(self, k)?;
                }
            }
            if self.terminal_constraint {
                tightened_terminal_level(self)?;
            }
        }
        Ok(())
    }

    fn margin(&self, kappa: usize) -> f64 {
        if self.tightening_enabled {
            cbar(&self.bounds, kappa) * self.bounds.eps
        } else {
            0.0
        }
    }
}

/// `X` shrunk on every axis by `c̄(κ)·ε`.
pub fn tightened_state_box(spec: &OcpSpec, kappa: usize) -> Result<BoxSet> {
    if kappa == 0 || kappa > spec.horizon {
        return Err(Error::InvalidParameter(format!("step {kappa} outside 1..={}", spec.horizon)));
    }
    let margin = spec.margin(kappa);
    spec.x_box.shrink(margin).ok_or_else(|| Error::InfeasibleTightening {
        step: kappa,
        margin,
        half_width: spec.x_box.half_widths().into_iter().fold(f64::INFINITY, f64::min),
    })
}

/// Level `(√c − c̄(N)·ε·√λ_max(P⁻¹)·L_Φ)²` of the tightened terminal set.
pub fn tightened_terminal_level(spec: &OcpSpec) -> Result<f64> {
    let c = spec.ingredients.c;
    let margin = spec.margin(spec.horizon);
    if margin == 0.0 {
        return Ok(c);
    }
    let shrink = margin * max_eigenvalue(spec.ingredients.p_inv()).sqrt() * spec.l_phi;
    let root = c.sqrt() - shrink;
    if root <= 0.0 {
        return Err(Error::InfeasibleTightening {
            step: spec.horizon,
            margin: shrink,
            half_width: c.sqrt(),
        });
    }
    Ok(root * root)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub u_star: Vec<DVector<f64>>,
    /// `J_N` at `u_star`.
    pub cost: f64,
    pub predicted_states: Vec<DVector<f64>>,
    pub feasible: bool,
    /// Smallest slack of predicted state `κ = 1..=N` to its (tightened) box, in state units.
    pub tightening_margins: Vec<f64>,
    /// Tightened terminal level minus `V_f` of the predicted terminal state.
    pub terminal_margin: f64,
    pub solver_iters: usize,
    /// Largest normalized constraint violation (zero when feasible).
    pub violation: f64,
    /// Projected-gradient norm of `J_N` alone at `u_star`; near zero when no state or
    /// terminal constraint is active.
    pub stationarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mpc,
    Terminal,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Mpc => write!(f, "mpc"),
            Mode::Terminal => write!(f, "terminal"),
        }
    }
}

/// Dual-mode state; once `Terminal`, it stays there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerMode {
    pub mode: Mode,
    pub switch_time: Option<usize>,
}

impl Default for ControllerMode {
    fn default() -> Self {
        Self {
            mode: Mode::Mpc,
            switch_time: None,
        }
    }
}

fn cholesky_half(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .cholesky()
        .map(|c| c.l().transpose())
        .ok_or_else(|| Error::InvalidParameter("weight matrix is not positive definite".into()))
}

fn build_problem<'a, P: LiftedPredictor>(
    spec: &OcpSpec,
    predictor: &'a P,
    dict: &'a Dictionary,
    x_hat: &DVector<f64>,
) -> Result<Problem<'a, P>> {
    let n = dict.state_dim();
    let m = predictor.input_dim();
    if x_hat.len() != n || m != spec.u_box.dim() || predictor.lifted_dim() != dict.lifted_dim() {
        return Err(Error::DimensionError("state, predictor, dictionary and spec disagree".into()));
    }
    let mut state_bounds = Vec::with_capacity(spec.horizon);
    let scale = DVector::from_vec(spec.x_box.half_widths());
    for k in 1..=spec.horizon {
        if spec.state_constraints {
            let b = tightened_state_box(spec, k)?;
            state_bounds.push(Some(StateBound {
                lo: DVector::from_vec(b.lo),
                hi: DVector::from_vec(b.hi),
                scale: scale.clone(),
            }));
        } else {
            state_bounds.push(None);
        }
    }
    let terminal_level = if spec.terminal_constraint {
        Some(tightened_terminal_level(spec)?)
    } else {
        None
    };
    let u_lo = DVector::from_fn(spec.horizon * m, |i, _| spec.u_box.lo[i % m]);
    let u_hi = DVector::from_fn(spec.horizon * m, |i, _| spec.u_box.hi[i % m]);
    Ok(Problem {
        predictor,
        dict,
        horizon: spec.horizon,
        z0: dict.lift_full(x_hat)?,
        q_half: cholesky_half(&spec.q)?,
        r_half: cholesky_half(&spec.r)?,
        vf_half: cholesky_half(spec.ingredients.p_inv())?,
        p_inv: spec.ingredients.p_inv().clone(),
        state_bounds,
        terminal_level,
        u_lo,
        u_hi,
        initial_state_cost: (x_hat.transpose() * &spec.q * x_hat)[(0, 0)],
    })
}

fn flatten(seq: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(seq.iter().map(|v| v.len()).sum(), seq.iter().flat_map(|v| v.iter().copied()))
}

/// Terminal controller evaluated on predicted states and clipped to `U`.
fn clipped_terminal_input(spec: &OcpSpec, dict: &Dictionary, x: &DVector<f64>) -> DVector<f64> {
    let m = spec.u_box.dim();
    dict.lift_hat(x)
        .ok()
        .and_then(|h| spec.ingredients.feedback_of_lift(&h))
        .map(|u| spec.u_box.clamp(&u))
        .unwrap_or_else(|| DVector::zeros(m))
}

fn terminal_rollout<P: LiftedPredictor>(spec: &OcpSpec, predictor: &P, dict: &Dictionary, x_hat: &DVector<f64>) -> Result<DVector<f64>> {
    let n = dict.state_dim();
    let mut z = dict.lift_full(x_hat)?;
    let mut seq = Vec::with_capacity(spec.horizon);
    for _ in 0..spec.horizon {
        let x = z.rows(1, n).into_owned();
        let u = clipped_terminal_input(spec, dict, &x);
        z = predictor.step(&z, &u);
        seq.push(u);
    }
    Ok(flatten(&seq))
}

fn to_solution<P: LiftedPredictor>(spec: &OcpSpec, problem: &Problem<'_, P>, out: solver::SolveOutcome) -> OcpSolution {
    let m = spec.u_box.dim();
    let u_star: Vec<DVector<f64>> = (0..spec.horizon).map(|k| out.u.rows(k * m, m).into_owned()).collect();
    let tightening_margins = (1..=spec.horizon)
        .map(|k| {
            let x = &out.eval.states[k];
            let (lo, hi) = match &problem.state_bounds[k - 1] {
                Some(b) => (b.lo.as_slice().to_vec(), b.hi.as_slice().to_vec()),
                None => (spec.x_box.lo.clone(), spec.x_box.hi.clone()),
            };
            (0..x.len())
                .map(|i| (x[i] - lo[i]).min(hi[i] - x[i]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let grad = problem.cost_gradient(&out.u, &out.eval);
    let stationarity = solver::projected_gradient_norm(&out.u, &grad, &problem.u_lo, &problem.u_hi);
    let level = problem.terminal_level.unwrap_or(spec.ingredients.c);
    let vf = problem
        .dict
        .lift_hat(&out.eval.states[spec.horizon])
        .map(|h| spec.ingredients.cost_of_lift(&h))
        .unwrap_or(f64::INFINITY);
    OcpSolution {
        u_star,
        cost: out.eval.cost,
        predicted_states: out.eval.states.clone(),
        feasible: out.feasible,
        tightening_margins,
        terminal_margin: level - vf,
        solver_iters: out.iters,
        violation: out.eval.violation(),
        stationarity,
    }
}

/// Cost and constraint status of a given input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEvaluation {
    pub cost: f64,
    /// Inputs in `U` and every state and terminal constraint of `spec` satisfied.
    pub feasible: bool,
    pub violation: f64,
    pub predicted_states: Vec<DVector<f64>>,
}

/// `J_N(x̂, u)` and constraint status without optimizing.
pub fn evaluate_sequence<P: LiftedPredictor>(
    spec: &OcpSpec,
    predictor: &P,
    dict: &Dictionary,
    x_hat: &DVector<f64>,
    u_seq: &[DVector<f64>],
) -> Result<SequenceEvaluation> {
    let problem = build_problem(spec, predictor, dict, x_hat)?;
    if u_seq.len() != spec.horizon || u_seq.iter().any(|u| u.len() != spec.u_box.dim()) {
        return Err(Error::DimensionError("sequence must hold N inputs".into()));
    }
    let ev = problem.evaluate(&flatten(u_seq))?;
    let in_box = u_seq.iter().all(|u| spec.u_box.contains(u));
    Ok(SequenceEvaluation {
        cost: ev.cost,
        feasible: in_box && ev.violation() <= 0.0,
        violation: ev.violation(),
        predicted_states: ev.states,
    })
}

/// Minimizes `J_N(x̂, u)` over `u ∈ U^N` subject to the (tightened) state and terminal
/// constraints, predicting through `predictor`. Without a warm start the solver is
/// started from zeros, the terminal-controller rollout and seeded random sequences.
pub fn solve_ocp<P: LiftedPredictor>(
    spec: &OcpSpec,
    predictor: &P,
    dict: &Dictionary,
    x_hat: &DVector<f64>,
    warm_start: Option<&[DVector<f64>]>,
) -> Result<OcpSolution> {
    let problem = build_problem(spec, predictor, dict, x_hat)?;
    let m = spec.u_box.dim();
    if let Some(ws) = warm_start {
        if ws.len() != spec.horizon || ws.iter().any(|u| u.len() != m) {
            return Err(Error::DimensionError("warm start must hold N inputs".into()));
        }
        let out = solver::solve(&problem, &flatten(ws), &spec.solver)?;
        if out.feasible {
            return Ok(to_solution(spec, &problem, out));
        }
        log::debug!("warm-started solve infeasible, retrying from cold starts");
    }
    let mut starts = vec![DVector::zeros(spec.horizon * m), terminal_rollout(spec, predictor, dict, x_hat)?];
    let mut rng = crate::safedmd::rng_for(spec.solver.seed, 300);
    for _ in 0..spec.solver.n_random_starts {
        starts.push(DVector::from_fn(spec.horizon * m, |i, _| {
            rng.random_range(spec.u_box.lo[i % m]..=spec.u_box.hi[i % m])
        }));
    }
    let mut best: Option<solver::SolveOutcome> = None;
    for start in &starts {
        let out = solver::solve(&problem, start, &spec.solver)?;
        let better = match &best {
            None => true,
            Some(b) => match (out.feasible, b.feasible) {
                (true, false) => true,
                (true, true) => out.eval.cost < b.eval.cost,
                (false, false) => out.eval.violation() < b.eval.violation(),
                (false, true) => false,
            },
        };
        if better {
            best = Some(out);
        }
    }
    Ok(to_solution(spec, &problem, best.expect("at least one start")))
}

/// Shifted and prolonged sequence: drop `u_0`, append `μ` at the predicted terminal state.
pub fn shifted_warm_start(spec: &OcpSpec, dict: &Dictionary, prev: &OcpSolution) -> Vec<DVector<f64>> {
    let mut seq: Vec<DVector<f64>> = prev.u_star.iter().skip(1).cloned().collect();
    let x_n = &prev.predicted_states[prev.predicted_states.len() - 1];
    seq.push(clipped_terminal_input(spec, dict, x_n));
    seq
}

/// One receding-horizon step at closed-loop index `k`: solve from the shifted warm start
/// (or cold starts when there is no previous solution) and return `u*(0)`.
pub fn mpc_step<P: LiftedPredictor>(
    spec: &OcpSpec,
    predictor: &P,
    dict: &Dictionary,
    state: &DVector<f64>,
    prev: Option<&OcpSolution>,
    k: usize,
) -> Result<(DVector<f64>, OcpSolution)> {
    if spec.state_constraints && !spec.x_box.contains(state) {
        return Err(Error::InvalidParameter(format!("state {state} outside the state box at step {k}")));
    }
    let warm = prev.map(|p| shifted_warm_start(spec, dict, p));
    let sol = solve_ocp(spec, predictor, dict, state, warm.as_deref())?;
    if !sol.feasible {
        log::warn!(
            "step {k}: no feasible sequence (violation {:e}, terminal margin {:e}, iterations {})",
            sol.violation,
            sol.terminal_margin,
            sol.solver_iters
        );
        return Err(Error::FeasibilityLost { step: k });
    }
    Ok((sol.u_star[0].clone(), sol))
}

/// Dual mode: MPC until the state first enters `X_f`, then the terminal
/// controller for good.
pub fn dual_mode_feedback<P: LiftedPredictor>(
    spec: &OcpSpec,
    predictor: &P,
    dict: &Dictionary,
    mode: &mut ControllerMode,
    state: &DVector<f64>,
    prev: Option<&OcpSolution>,
    k: usize,
) -> Result<(DVector<f64>, Option<OcpSolution>)> {
    if mode.mode == Mode::Mpc && in_terminal_region(&spec.ingredients, dict, state) {
        mode.mode = Mode::Terminal;
        mode.switch_time = Some(k);
    }
    match mode.mode {
        Mode::Terminal => Ok((terminal_controller(&spec.ingredients, dict, state)?, None)),
        Mode::Mpc => {
            let (u, sol) = mpc_step(spec, predictor, dict, state, prev, k)?;
            Ok((u, Some(sol)))
        }
    }
}

/// Closed-loop wrapper carrying the previous solution and the dual-mode state.
pub struct MpcController<'a, P: LiftedPredictor> {
    spec: &'a OcpSpec,
    predictor: &'a P,
    dict: &'a Dictionary,
    dual_mode: bool,
    prev: Option<OcpSolution>,
    pub mode: ControllerMode,
}

impl<'a, P: LiftedPredictor> MpcController<'a, P> {
    pub fn new(spec: &'a OcpSpec, predictor: &'a P, dict: &'a Dictionary, dual_mode: bool) -> Self {
        Self {
            spec,
            predictor,
            dict,
            dual_mode,
            prev: None,
            mode: ControllerMode::default(),
        }
    }

    pub fn last_solution(&self) -> Option<&OcpSolution> {
        self.prev.as_ref()
    }

    pub fn feedback(&mut self, k: usize, state: &DVector<f64>) -> Result<DVector<f64>> {
        if self.dual_mode {
            let (u, sol) = dual_mode_feedback(
                self.spec,
                self.predictor,
                self.dict,
                &mut self.mode,
                state,
                self.prev.as_ref(),
                k,
            )?;
            self.prev = sol;
            Ok(u)
        } else {
            let (u, sol) = mpc_step(self.spec, self.predictor, self.dict, state, self.prev.as_ref(), k)?;
            self.prev = Some(sol);
            Ok(u)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_cost_by_hand() {
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1) * 0.1;
        let v = stage_cost(&q, &r, &DVector::from_vec(vec![3.0, 4.0]), &DVector::from_element(1, 2.0));
        assert!((v - 25.4).abs() < 1e-12);
        assert_eq!(stage_cost(&q, &r, &DVector::zeros(2), &DVector::zeros(1)), 0.0);
    }
}
