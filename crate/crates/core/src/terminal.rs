//! Terminal cost `V_f(x) = Φ̂(x)ᵀ P⁻¹ Φ̂(x)`, terminal region `X_f = {V_f ≤ c}` and the
//! sampled-data terminal controller, with synthesis and sampled verification of the
//! invariance and decrease conditions against the true plant.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::SampledDynamics;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, is_spd, max_eigenvalue, min_eigenvalue, solve_dare, symmetrize, to_rows};
use crate::mpc::stage_cost;
use crate::safedmd::{rng_for, SurrogateModel};
use crate::sets::BoxSet;

/// How the local feedback and its Lyapunov matrix are designed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthesisMethod {
    /// LQR on the surrogate linearized along the lift map, acting on the coordinate block.
    #[default]
    ManifoldLqr,
    /// LQR on the lifted pair `(A, [b_1 … b_m])` with the state weight pulled back through
    /// the coordinate selector.
    LiftedLqr,
}

/// Sampled check of invariance, decrease and input admissibility inside `X_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_samples: usize,
    pub n_decrease_violations: usize,
    pub n_invariance_violations: usize,
    pub n_input_violations: usize,
    /// Smallest `(V_f(x) − V_f(x⁺) − ℓ(x, μ(x))) / ℓ(x, μ(x))` over samples away from the origin.
    pub worst_margin: f64,
    /// Rejection sampling accepted fewer than 0.1% of the draws from the enclosing box.
    pub region_too_thin: bool,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIngredients {
    pub p: DMatrix<f64>,
    pub c: f64,
    pub p_mu: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub l_w: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub eps_scale: f64,
    pub eps_x: f64,
    pub eps_u: f64,
    pub dict_name: String,
    pub method: SynthesisMethod,
    pub attempts: usize,
    pub report: Option<VerificationReport>,
    p_inv: DMatrix<f64>,
    gain: DMatrix<f64>,
    lambda_inv: DMatrix<f64>,
}

impl TerminalIngredients {
    /// Assembles ingredients with `P = eps_scale · P_μ` and `c = 1 / eps_scale`.
    pub fn new(
        p_mu: DMatrix<f64>,
        l: DMatrix<f64>,
        l_w: DMatrix<f64>,
        lambda: DMatrix<f64>,
        eps_x: f64,
        eps_u: f64,
        eps_scale: f64,
        dict_name: impl Into<String>,
    ) -> Result<Self> {
        if !(eps_scale > 0.0 && eps_scale.is_finite()) {
            return Err(Error::SynthesisInvalid(format!("scaling must be positive, got {eps_scale}")));
        }
        let mm = p_mu.nrows();
        let m = l.nrows();
        if l.ncols() != mm || l_w.shape() != (m, mm * m) || lambda.shape() != (m, m) {
            return Err(Error::DimensionError(format!(
                "controller parameters L {:?}, L_w {:?}, Λ {:?} for M = {mm}",
                l.shape(),
                l_w.shape(),
                lambda.shape()
            )));
        }
        if !is_spd(&p_mu) || !is_spd(&lambda) {
            return Err(Error::SynthesisInvalid("P_mu and Lambda must be symmetric positive definite".into()));
        }
        let p = &p_mu * eps_scale;
        if !is_spd(&p) {
            return Err(Error::SynthesisInvalid("P is not symmetric positive definite".into()));
        }
        let p_inv = symmetrize(
            &p.clone()
                .cholesky()
                .ok_or_else(|| Error::SynthesisInvalid("P has no Cholesky factor".into()))?
                .inverse(),
        );
        let p_mu_inv = p_mu
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SynthesisInvalid("P_mu has no Cholesky factor".into()))?
            .inverse();
        let gain = &l * p_mu_inv;
        let lambda_inv = lambda
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SynthesisInvalid("Lambda is singular".into()))?;
        Ok(Self {
            p,
            c: 1.0 / eps_scale,
            p_mu,
            l,
            l_w,
            lambda,
            eps_scale,
            eps_x,
            eps_u,
            dict_name: dict_name.into(),
            method: SynthesisMethod::default(),
            attempts: 0,
            report: None,
            p_inv,
            gain,
            lambda_inv,
        })
    }

    pub fn m_last(&self) -> usize {
        self.p.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.l.nrows()
    }

    /// `P⁻¹`, the weight of the terminal quadratic form.
    pub fn p_inv(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    /// `L P_μ⁻¹`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// Schur complement of `P⁻¹` on the coordinate block: `Φ̂ᵀP⁻¹Φ̂ ≥ xᵀ S x` for every lift.
    pub fn coordinate_weight(&self, n: usize) -> DMatrix<f64> {
        coordinate_schur(&self.p_inv, n)
    }

    /// Radius of the smallest origin-centred ball containing the state projection of `X_f`.
    pub fn enclosing_radius(&self, n: usize) -> f64 {
        (self.c / min_eigenvalue(&self.coordinate_weight(n))).sqrt()
    }

    fn check_dict(&self, dict: &Dictionary) -> Result<()> {
        if dict.m_last() != self.m_last() {
            return Err(Error::DimensionError(format!(
                "dictionary `{}` has M = {}, ingredients have M = {}",
                dict.name(),
                dict.m_last(),
                self.m_last()
            )));
        }
        Ok(())
    }

    /// `V_f` evaluated on a reduced lift.
    pub fn cost_of_lift(&self, hat: &DVector<f64>) -> f64 {
        (hat.transpose() * &self.p_inv * hat)[(0, 0)]
    }

    /// Controller evaluated on a reduced lift, without the region check.
    pub fn feedback_of_lift(&self, hat: &DVector<f64>) -> Option<DVector<f64>> {
        let linear = &self.gain * hat;
        if self.l_w.iter().all(|v| *v == 0.0) {
            return Some(linear);
        }
        let m = self.input_dim();
        let inner = DMatrix::identity(m, m) - &self.l_w * self.lambda_inv.kronecker(hat);
        inner.lu().solve(&linear).filter(|u| u.iter().all(|v| v.is_finite()))
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &IngredientsFile::from(self))?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let f: IngredientsFile = serde_json::from_reader(input)?;
        let mut ing = Self::new(
            from_rows(&f.p_mu)?,
            from_rows(&f.l)?,
            from_rows(&f.l_w)?,
            from_rows(&f.lambda)?,
            f.eps_x,
            f.eps_u,
            f.eps_scale,
            f.dict_name,
        )?;
        ing.method = f.method;
        ing.attempts = f.attempts;
        ing.report = f.report;
        Ok(ing)
    }
}

#[derive(Serialize, Deserialize)]
struct IngredientsFile {
    dict_name: String,
    method: SynthesisMethod,
    p: Vec<Vec<f64>>,
    c: f64,
    p_mu: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    l_w: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    eps_scale: f64,
    eps_x: f64,
    eps_u: f64,
    attempts: usize,
    report: Option<VerificationReport>,
}

impl From<&TerminalIngredients> for IngredientsFile {
    fn from(t: &TerminalIngredients) -> Self {
        Self {
            dict_name: t.dict_name.clone(),
            method: t.method,
            p: to_rows(&t.p),
            c: t.c,
            p_mu: to_rows(&t.p_mu),
            l: to_rows(&t.l),
            l_w: to_rows(&t.l_w),
            lambda: to_rows(&t.lambda),
            eps_scale: t.eps_scale,
            eps_x: t.eps_x,
            eps_u: t.eps_u,
            attempts: t.attempts,
            report: t.report.clone(),
        }
    }
}

fn coordinate_schur(w: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mm = w.nrows();
    let wxx = w.view((0, 0), (n, n)).into_owned();
    if mm == n {
        return wxx;
    }
    let wxp = w.view((0, n), (n, mm - n)).into_owned();
    let wpp = w.view((n, n), (mm - n, mm - n)).into_owned();
    match wpp.clone().cholesky() {
        Some(ch) => symmetrize(&(wxx - &wxp * ch.solve(&wxp.transpose()))),
        None => wxx,
    }
}

/// `V_f(x)`.
pub fn terminal_cost(ing: &TerminalIngredients, dict: &Dictionary, x: &DVector<f64>) -> Result<f64> {
    ing.check_dict(dict)?;
    Ok(ing.cost_of_lift(&dict.lift_hat(x)?))
}

/// `V_f(x) ≤ c`; non-finite lifts are outside.
pub fn in_terminal_region(ing: &TerminalIngredients, dict: &Dictionary, x: &DVector<f64>) -> bool {
    terminal_cost(ing, dict, x).is_ok_and(|v| v <= ing.c)
}

/// `μ(x) = (I − L_w(Λ⁻¹ ⊗ Φ̂(x)))⁻¹ L P_μ⁻¹ Φ̂(x)` for `x ∈ X_f`.
pub fn terminal_controller(ing: &TerminalIngredients, dict: &Dictionary, x: &DVector<f64>) -> Result<DVector<f64>> {
    ing.check_dict(dict)?;
    let hat = dict.lift_hat(x)?;
    if ing.cost_of_lift(&hat) > ing.c {
        return Err(Error::OutsideTerminalRegion {
            x: x.as_slice().to_vec(),
        });
    }
    ing.feedback_of_lift(&hat).ok_or_else(|| Error::ControllerSingular {
        x: x.as_slice().to_vec(),
    })
}

/// Tuning of the synthesis loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisOptions {
    pub method: SynthesisMethod,
    /// Inflation of the Riccati matrix in the Lyapunov weight.
    pub riccati_inflation: f64,
    /// Factor applied to the region level after a failed verification.
    pub shrink: f64,
    /// Smallest admissible region level relative to the first candidate.
    pub c_min: f64,
    /// Fraction of the sampled decrease margin kept as the scaling.
    pub margin_derate: f64,
    pub n_margin_samples: usize,
    pub n_verify_samples: usize,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            method: SynthesisMethod::ManifoldLqr,
            riccati_inflation: 1.2,
            shrink: 0.8,
            c_min: 1e-8,
            margin_derate: 0.9,
            n_margin_samples: 4000,
            n_verify_samples: 10_000,
            seed: 0,
        }
    }
}

/// Local LQR design: Lyapunov weight `W` on the reduced lift and lifted gain `L P_μ⁻¹`.
#[derive(Debug, Clone)]
pub struct LqrDesign {
    pub p_riccati: DMatrix<f64>,
    pub k_lin: DMatrix<f64>,
    /// `m × M` feedback acting on `Φ̂`.
    pub gain: DMatrix<f64>,
    /// SPD `M × M` weight with `V_μ = Φ̂ᵀ W Φ̂` up to scaling.
    pub weight: DMatrix<f64>,
}

fn selector(n: usize, mm: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, mm, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub fn lqr_design(
    model: &SurrogateModel,
    dict: &Dictionary,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    method: SynthesisMethod,
    inflation: f64,
) -> Result<LqrDesign> {
    let n = dict.state_dim();
    let mm = model.m_last();
    let m = model.input_dim();
    if dict.m_last() != mm || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionError("weights, dictionary and model disagree".into()));
    }
    if !is_spd(q) || !is_spd(r) {
        return Err(Error::InvalidParameter("Q and R must be symmetric positive definite".into()));
    }
    let s = selector(n, mm);
    let b_cols = DMatrix::from_columns(&model.b);
    match method {
        SynthesisMethod::ManifoldLqr => {
            let jac = dict.jacobian_hat(&DVector::zeros(n));
            let a_red = &s * &model.a * jac;
            let b_red = &s * b_cols;
            let sol = solve_dare(&a_red, &b_red, q, r).ok_or_else(|| {
                Error::SynthesisFailed("Riccati equation of the linearized surrogate has no stabilizing solution".into())
            })?;
            let p_x = &sol.p * inflation;
            let delta = 1e-4 * min_eigenvalue(&p_x);
            let complement = DMatrix::identity(mm, mm) - s.transpose() * &s;
            let weight = symmetrize(&(s.transpose() * &p_x * &s + complement * delta));
            let gain = -&sol.k * &s;
            Ok(LqrDesign {
                p_riccati: sol.p,
                k_lin: sol.k,
                gain,
                weight,
            })
        }
        SynthesisMethod::LiftedLqr => {
            let q_lift = s.transpose() * q * &s;
            let sol = solve_dare(&model.a, &b_cols, &q_lift, r).ok_or_else(|| {
                Error::SynthesisFailed("Riccati equation of the lifted pair has no stabilizing solution".into())
            })?;
            let mut weight = symmetrize(&(&sol.p * inflation));
            if min_eigenvalue(&weight) <= 1e-12 * max_eigenvalue(&weight) {
                weight += DMatrix::identity(mm, mm) * (1e-8 * max_eigenvalue(&weight));
            }
            Ok(LqrDesign {
                p_riccati: sol.p.clone(),
                gain: -&sol.k,
                k_lin: sol.k,
                weight,
            })
        }
    }
}

/// Draws points of `{Φ̂ᵀ W Φ̂ ≤ level}`: half uniformly by rejection from the enclosing box,
/// half on the boundary shell by bisection along random rays.
struct RegionSampler<'a> {
    dict: &'a Dictionary,
    weight: DMatrix<f64>,
    level: f64,
    half_widths: Vec<f64>,
    radius: f64,
}

impl<'a> RegionSampler<'a> {
    fn new(dict: &'a Dictionary, weight: DMatrix<f64>, level: f64) -> Self {
        let n = dict.state_dim();
        let schur = coordinate_schur(&weight, n);
        let inv = schur.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(n, n));
        let half_widths = (0..n).map(|i| (level * inv[(i, i)]).sqrt()).collect();
        let radius = (level / min_eigenvalue(&schur)).sqrt();
        Self {
            dict,
            weight,
            level,
            half_widths,
            radius,
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self.dict.lift_hat(x) {
            Ok(h) => (h.transpose() * &self.weight * &h)[(0, 0)],
            Err(_) => f64::INFINITY,
        }
    }

    fn shell_point(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.dict.state_dim();
        let mut dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        while dir.norm() < 1e-6 {
            dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        }
        dir /= dir.norm();
        let (mut lo, mut hi) = (0.0, self.radius * 1.000001);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.value(&(&dir * mid)) <= self.level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        dir * lo
    }

    fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> (Vec<DVector<f64>>, bool) {
        let n = self.dict.state_dim();
        let n_shell = count / 2;
        let n_inner = count - n_shell;
        let mut out = Vec::with_capacity(count);
        let mut draws = 0usize;
        let max_draws = n_inner.max(1) * 1000;
        let mut thin = false;
        while out.len() < n_inner {
            if draws >= max_draws {
                thin = true;
                break;
            }
            draws += 1;
            let x = DVector::from_fn(n, |i, _| {
                let h = self.half_widths[i];
                if h > 0.0 {
                    rng.random_range(-h..=h)
                } else {
                    0.0
                }
            });
            if self.value(&x) <= self.level {
                out.push(x);
            }
        }
        if draws > 0 && (out.len() as f64) < 1e-3 * draws as f64 {
            thin = true;
        }
        if thin {
            log::warn!("terminal region too thin for rejection sampling; using scaled shell points");
            while out.len() < n_inner {
                let t: f64 = rng.random_range(0.0..=1.0);
                out.push(self.shell_point(rng) * t);
            }
        }
        while out.len() < count {
            out.push(self.shell_point(rng));
        }
        (out, thin)
    }
}

const STREAM_MARGIN: u64 = 200;
const STREAM_VERIFY: u64 = 201;

/// Samples `n_samples` states of `X_f`, applies `μ` through the true plant and checks
/// invariance, decrease and `μ(x) ∈ U`.
pub fn verify(
    ing: &TerminalIngredients,
    sd: &SampledDynamics,
    dict: &Dictionary,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u_box: &BoxSet,
    n_samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("verification needs at least one sample".into()));
    }
    ing.check_dict(dict)?;
    let sampler = RegionSampler::new(dict, ing.p_inv.clone(), ing.c);
    let mut rng = rng_for(seed, STREAM_VERIFY);
    let (points, thin) = sampler.sample(n_samples, &mut rng);
    let mut report = VerificationReport {
        n_samples: points.len(),
        n_decrease_violations: 0,
        n_invariance_violations: 0,
        n_input_violations: 0,
        worst_margin: f64::INFINITY,
        region_too_thin: thin,
        verified: false,
    };
    for x in &points {
        let hat = dict.lift_hat(x)?;
        let v = ing.cost_of_lift(&hat);
        let Some(u) = ing.feedback_of_lift(&hat) else {
            report.n_decrease_violations += 1;
            report.worst_margin = f64::NEG_INFINITY;
            continue;
        };
        if !u_box.contains(&u) {
            report.n_input_violations += 1;
        }
        let v_next = match sd.flow(x, &u).and_then(|xn| dict.lift_hat(&xn)) {
            Ok(h) => ing.cost_of_lift(&h),
            Err(_) => f64::INFINITY,
        };
        let ell = stage_cost(q, r, x, &u);
        let slack = v - ell - v_next;
        let tol = 1e-12 * v + f64::MIN_POSITIVE;
        if slack < -tol {
            report.n_decrease_violations += 1;
        }
        if v_next > ing.c {
            report.n_invariance_violations += 1;
        }
        if ell > 0.0 {
            report.worst_margin = report.worst_margin.min(slack / ell);
        } else if slack < -tol {
            report.worst_margin = f64::NEG_INFINITY;
        }
    }
    if !report.worst_margin.is_finite() && report.worst_margin > 0.0 {
        report.worst_margin = 0.0;
    }
    report.verified = report.n_decrease_violations == 0
        && report.n_invariance_violations == 0
        && report.n_input_violations == 0;
    Ok(report)
}

/// Largest `s` with `W`-decrease `≥ s(‖Q‖‖x‖² + ‖R‖‖μ(x)‖²)` on samples of the level set,
/// or `None` when the decrease fails somewhere or an input leaves `U`.
fn decrease_scale(
    design: &LqrDesign,
    sd: &SampledDynamics,
    dict: &Dictionary,
    level: f64,
    q_norm: f64,
    r_norm: f64,
    u_box: &BoxSet,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let sampler = RegionSampler::new(dict, design.weight.clone(), level);
    let (points, _) = sampler.sample(n_samples, rng);
    let mut scale = f64::INFINITY;
    for x in &points {
        let hat = dict.lift_hat(x)?;
        let u = &design.gain * &hat;
        if !u_box.contains(&u) {
            return Ok(None);
        }
        let denom = q_norm * x.norm_squared() + r_norm * u.norm_squared();
        if denom < 1e-300 {
            continue;
        }
        let Ok(next) = sd.flow(x, &u).and_then(|xn| dict.lift_hat(&xn)) else {
            return Ok(None);
        };
        let drop = ((hat.transpose() * &design.weight * &hat)[(0, 0)]
            - (next.transpose() * &design.weight * &next)[(0, 0)])
            / level;
        if drop <= 0.0 {
            return Ok(None);
        }
        scale = scale.min(drop / denom);
    }
    Ok(scale.is_finite().then_some(scale))
}

/// Designs a local LQR feedback, then shrinks the region level until the sampled
/// decrease, invariance and input conditions hold with the scaled cost.
pub fn synthesize(
    model: &SurrogateModel,
    sd: &SampledDynamics,
    dict: &Dictionary,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x_box: &BoxSet,
    u_box: &BoxSet,
    opts: &SynthesisOptions,
) -> Result<TerminalIngredients> {
    if !(opts.shrink > 0.0 && opts.shrink < 1.0) || !(opts.margin_derate > 0.0 && opts.margin_derate <= 1.0) {
        return Err(Error::InvalidParameter("shrink and derate factors must lie in (0, 1)".into()));
    }
    if x_box.dim() != dict.state_dim() || u_box.dim() != model.input_dim() {
        return Err(Error::DimensionError("constraint boxes do not match the model".into()));
    }
    let design = lqr_design(model, dict, q, r, opts.method, opts.riccati_inflation)?;
    let n = dict.state_dim();
    let m = model.input_dim();
    let mm = model.m_last();
    let q_norm = max_eigenvalue(q);
    let r_norm = max_eigenvalue(r);

    // largest level whose state projection fits inside X
    let schur_inv = coordinate_schur(&design.weight, n)
        .try_inverse()
        .ok_or_else(|| Error::SynthesisFailed("singular Lyapunov weight".into()))?;
    let level0 = (0..n)
        .map(|i| {
            let h = x_box.hi[i].min(-x_box.lo[i]);
            h * h / schur_inv[(i, i)]
        })
        .fold(f64::INFINITY, f64::min);
    if !(level0 > 0.0 && level0.is_finite()) {
        return Err(Error::SynthesisFailed("state box does not contain the origin in its interior".into()));
    }

    let weight_inv = design
        .weight
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SynthesisFailed("singular Lyapunov weight".into()))?;
    let mut margin_rng = rng_for(opts.seed, STREAM_MARGIN);
    let mut level = level0;
    let mut attempts = 0;
    while level >= opts.c_min * level0 {
        attempts += 1;
        let scale = decrease_scale(
            &design,
            sd,
            dict,
            level,
            q_norm,
            r_norm,
            u_box,
            opts.n_margin_samples,
            &mut margin_rng,
        )?;
        if let Some(s) = scale {
            let s = (s * opts.margin_derate).max(1e-10);
            let p_mu = symmetrize(&(&weight_inv * level));
            let l = &design.gain * &p_mu;
            let mut ing = TerminalIngredients::new(
                p_mu,
                l,
                DMatrix::zeros(m, mm * m),
                DMatrix::identity(m, m),
                s * q_norm,
                s * r_norm,
                s,
                dict.name(),
            )?;
            ing.method = opts.method;
            ing.attempts = attempts;
            let report = verify(&ing, sd, dict, q, r, u_box, opts.n_verify_samples, opts.seed)?;
            log::debug!("terminal synthesis attempt {attempts}: level {level:e}, scale {s:e}, verified {}", report.verified);
            if report.verified {
                ing.report = Some(report);
                return Ok(ing);
            }
        }
        level *= opts.shrink;
    }
    Err(Error::TerminalRegionEmpty { c_min: opts.c_min })
}
