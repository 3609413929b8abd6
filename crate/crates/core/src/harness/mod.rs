//! Experiment pipeline: configuration, closed-loop simulation against the true plant,
//! metrics and artifact export.

mod config;
mod metrics;
mod trace;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::{fit_edmdc, LinearSurrogate};
use crate::dictionary::Dictionary;
use crate::dynamics::SampledDynamics;
use crate::error::{Error, Result};
use crate::mpc::OcpSpec;
use crate::safedmd::{
    estimate_error_constants, fit, sample_data, validate_proportional_bound, validate_rollout_bound, BoundCheck, DataSet,
    ErrorBounds, InputTag, SurrogateModel,
};
use crate::sets::BoxSet;
use crate::terminal::{synthesize, verify, SynthesisOptions, TerminalIngredients, VerificationReport};

pub use config::{ControllerKind, ExperimentConfig, PlantConfig};
pub use metrics::{
    accumulated_stage_cost, default_radius_candidates, entry_index, lyapunov_audit, practical_stability_metrics,
    value_decrease_constant, AuditReport, StabilityReport,
};
pub use trace::{closed_loop_sim, ClosedLoopTrace, SimContext, TraceRow};

/// Rollouts for the multi-step bound check and their longest length.
pub const N_ROLLOUTS: usize = 1000;
pub const MAX_ROLLOUT_LENGTH: usize = 10;
/// Admissible violation rates of the two bound checks.
pub const MAX_PROPORTIONAL_VIOLATION_RATE: f64 = 0.01;
pub const MAX_ROLLOUT_VIOLATION_RATE: f64 = 0.01;

/// Grid density per axis for the lift constant.
const L_PHI_GRID: usize = 201;

// seed offsets keep the fitting, estimation and validation draws apart
const SEED_ESTIMATE: u64 = 1;
const SEED_VALIDATE: u64 = 2;
const SEED_VERIFY: u64 = 3;

/// Plant, dictionary, boxes and weights built from a configuration.
pub struct Setup {
    pub sd: SampledDynamics,
    pub dict: Dictionary,
    pub x_box: BoxSet,
    pub u_box: BoxSet,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let sd = cfg.sampled_dynamics()?;
        let dict = Dictionary::by_name(&cfg.dictionary, sd.state_dim())?;
        let (q, r) = cfg.weights()?;
        Ok(Self {
            sd,
            dict,
            x_box: cfg.x_box.clone(),
            u_box: cfg.u_box.clone(),
            q,
            r,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bounds: ErrorBounds,
    pub proportional: BoundCheck,
    pub rollout: BoundCheck,
    pub l_phi: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.proportional.violation_rate() <= MAX_PROPORTIONAL_VIOLATION_RATE
            && self.rollout.violation_rate() <= MAX_ROLLOUT_VIOLATION_RATE
    }
}

/// Learned artifacts shared by all controllers of one configuration.
pub struct Learned {
    pub data: Vec<DataSet>,
    pub model: SurrogateModel,
    pub bound_report: BoundReport,
    pub ingredients: TerminalIngredients,
    /// Independent re-verification with a fresh seed.
    pub verification: VerificationReport,
}

pub fn generate_data(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<DataSet>> {
    let mut tags = vec![InputTag::Zero];
    tags.extend((1..=setup.sd.input_dim()).map(InputTag::Unit));
    tags.into_iter()
        .map(|tag| sample_data(&setup.sd, &setup.dict, &setup.x_box, tag, cfg.d, cfg.seed))
        .collect()
}

pub fn fit_model(data: &[DataSet]) -> Result<SurrogateModel> {
    let (zero, units) = data
        .split_first()
        .ok_or_else(|| Error::FitFailed("no data sets".into()))?;
    fit(zero, units)
}

pub fn estimate_bounds(cfg: &ExperimentConfig, setup: &Setup, model: &SurrogateModel) -> Result<BoundReport> {
    let (sd, dict) = (&setup.sd, &setup.dict);
    let bounds = estimate_error_constants(model, sd, dict, &setup.x_box, &setup.u_box, cfg.n_validation, cfg.seed + SEED_ESTIMATE)?;
    let seed = cfg.seed + SEED_VALIDATE;
    let proportional = validate_proportional_bound(model, sd, dict, &bounds, &setup.x_box, &setup.u_box, cfg.n_validation, seed)?;
    let rollout = validate_rollout_bound(model, sd, dict, &bounds, &setup.x_box, &setup.u_box, N_ROLLOUTS, MAX_ROLLOUT_LENGTH, seed)?;
    let l_phi = dict.estimate_l_phi(&setup.x_box, L_PHI_GRID)?;
    Ok(BoundReport {
        bounds,
        proportional,
        rollout,
        l_phi,
    })
}

pub fn synthesis_options(cfg: &ExperimentConfig) -> SynthesisOptions {
    SynthesisOptions {
        seed: cfg.seed,
        ..cfg.synthesis.clone()
    }
}

pub fn synthesize_terminal(cfg: &ExperimentConfig, setup: &Setup, model: &SurrogateModel) -> Result<TerminalIngredients> {
    synthesize(model, &setup.sd, &setup.dict, &setup.q, &setup.r, &setup.x_box, &setup.u_box, &synthesis_options(cfg))
}

pub fn verify_terminal(cfg: &ExperimentConfig, setup: &Setup, ing: &TerminalIngredients) -> Result<VerificationReport> {
    let n = cfg.synthesis.n_verify_samples.max(1);
    verify(ing, &setup.sd, &setup.dict, &setup.q, &setup.r, &setup.u_box, n, cfg.seed + SEED_VERIFY)
}

/// Sampling, fit, bounds, synthesis and verification, with stage-labelled errors. Fails
/// when a bound check or the terminal verification fails.
pub fn learn(cfg: &ExperimentConfig, setup: &Setup) -> Result<Learned> {
    let data = generate_data(cfg, setup).map_err(|e| e.in_stage("sampling"))?;
    let model = fit_model(&data).map_err(|e| e.in_stage("fit"))?;
    let bound_report = estimate_bounds(cfg, setup, &model).map_err(|e| e.in_stage("bounds"))?;
    if !bound_report.passed() {
        return Err(Error::ValidationFailed(format!(
            "bound checks violated: proportional {:.4}, rollout {:.4}",
            bound_report.proportional.violation_rate(),
            bound_report.rollout.violation_rate()
        ))
        .in_stage("bounds"));
    }
    let ingredients = synthesize_terminal(cfg, setup, &model).map_err(|e| e.in_stage("synthesis"))?;
    let verification = verify_terminal(cfg, setup, &ingredients).map_err(|e| e.in_stage("verification"))?;
    if !verification.verified {
        return Err(Error::ValidationFailed(format!("{verification:?}")).in_stage("verification"));
    }
    Ok(Learned {
        data,
        model,
        bound_report,
        ingredients,
        verification,
    })
}

/// SafEDMD problem for the configuration. Tightening is validated here, so an
/// infeasible tightening surfaces before the loop starts.
pub fn ocp_spec(cfg: &ExperimentConfig, setup: &Setup, learned: &Learned) -> Result<OcpSpec> {
    let mut solver = cfg.solver.clone();
    solver.seed = cfg.seed;
    let spec = OcpSpec {
        horizon: cfg.horizon,
        q: setup.q.clone(),
        r: setup.r.clone(),
        x_box: setup.x_box.clone(),
        u_box: setup.u_box.clone(),
        bounds: learned.bound_report.bounds.clone(),
        ingredients: learned.ingredients.clone(),
        l_phi: learned.bound_report.l_phi,
        tightening_enabled: cfg.tightening,
        state_constraints: true,
        terminal_constraint: true,
        solver,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn fit_linear_baseline(cfg: &ExperimentConfig, setup: &Setup) -> Result<LinearSurrogate> {
    fit_edmdc(&setup.sd, &setup.dict, &setup.x_box, &setup.u_box, cfg.d, cfg.seed)
}

/// Per-run summary written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub controller: ControllerKind,
    pub steps: usize,
    pub stability: StabilityReport,
    pub accumulated_cost: f64,
    pub switch_step: Option<usize>,
    pub enclosing_radius: f64,
    pub terminal_level: f64,
    pub eps_scale: f64,
    pub bound_report: BoundReport,
    pub verification: VerificationReport,
    pub audit: Option<AuditReport>,
    pub error: Option<String>,
}

pub struct RunOutput {
    pub trace: ClosedLoopTrace,
    pub metrics: RunMetrics,
}

/// Simulates `kind` and computes its metrics.
pub fn simulate(
    cfg: &ExperimentConfig,
    setup: &Setup,
    learned: &Learned,
    spec: &OcpSpec,
    linear: Option<&LinearSurrogate>,
    kind: ControllerKind,
) -> Result<RunOutput> {
    let ctx = SimContext {
        sd: &setup.sd,
        dict: &setup.dict,
        spec,
        model: &learned.model,
        linear,
    };
    let trace = closed_loop_sim(cfg, &ctx, kind)?;
    let n = setup.sd.state_dim();
    let radius = learned.ingredients.enclosing_radius(n);
    let stability = practical_stability_metrics(&trace, &default_radius_candidates(radius), &setup.x_box, &setup.u_box, cfg.dt);
    let audit = match kind {
        ControllerKind::SafedmdMpc => Some(lyapunov_audit(&trace, spec, &setup.dict, stability.radius.unwrap_or(0.0))?),
        _ => None,
    };
    let metrics = RunMetrics {
        controller: kind,
        steps: trace.rows.len(),
        accumulated_cost: accumulated_stage_cost(&trace, &setup.q, &setup.r),
        stability,
        switch_step: trace.switch_step,
        enclosing_radius: radius,
        terminal_level: learned.ingredients.c,
        eps_scale: learned.ingredients.eps_scale,
        bound_report: learned.bound_report.clone(),
        verification: learned.verification.clone(),
        audit,
        error: trace.error.clone(),
    };
    Ok(RunOutput { trace, metrics })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(dir, name)?, value)?;
    Ok(())
}

pub fn write_data(dir: &Path, dict: &Dictionary, data: &[DataSet]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    data.iter()
        .map(|ds| {
            let name = format!("data_{}.csv", ds.input_tag);
            ds.write_csv(dict, create(dir, &name)?)?;
            Ok(dir.join(name))
        })
        .collect()
}

/// Pipeline stages addressable from the command line; each one reruns its
/// prerequisites deterministically and writes its own artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenerateData,
    Fit,
    Bounds,
    Synthesize,
    Verify,
    Simulate,
    Compare,
    Run,
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json_string()?)?;
    Ok(dir)
}

/// Runs one stage and writes its outputs into `cfg.out_dir`.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<()> {
    match stage {
        Stage::Run => return run_experiment(cfg).map(|_| ()),
        Stage::Simulate => return execute(cfg, false).map(|_| ()),
        Stage::Compare => {
            let table = compare_controllers(cfg)?;
            write_json(prepare_out(cfg)?, "comparison.json", &table.rows)?;
            return Ok(());
        }
        _ => {}
    }
    let setup = Setup::from_config(cfg)?;
    let dir = prepare_out(cfg)?;
    let data = generate_data(cfg, &setup).map_err(|e| e.in_stage("sampling"))?;
    write_data(dir, &setup.dict, &data).map_err(|e| e.in_stage("output"))?;
    if stage == Stage::GenerateData {
        return Ok(());
    }
    let model = fit_model(&data).map_err(|e| e.in_stage("fit"))?;
    model.write_json(create(dir, "model.json")?)?;
    if stage == Stage::Fit {
        return Ok(());
    }
    let report = estimate_bounds(cfg, &setup, &model).map_err(|e| e.in_stage("bounds"))?;
    write_json(dir, "bounds.json", &report)?;
    if stage == Stage::Bounds {
        return if report.passed() {
            Ok(())
        } else {
            Err(Error::ValidationFailed("bound checks exceed the admissible violation rate".into()).in_stage("bounds"))
        };
    }
    let ing = synthesize_terminal(cfg, &setup, &model).map_err(|e| e.in_stage("synthesis"))?;
    ing.write_json(create(dir, "ingredients.json")?)?;
    if stage == Stage::Synthesize {
        return Ok(());
    }
    let verification = verify_terminal(cfg, &setup, &ing).map_err(|e| e.in_stage("verification"))?;
    write_json(dir, "verification.json", &verification)?;
    if !verification.verified {
        return Err(Error::ValidationFailed(format!("{verification:?}")).in_stage("verification"));
    }
    Ok(())
}

/// End-to-end pipeline writing the full artifact bundle. A run that lost feasibility or
/// diverged still writes its partial trace and metrics before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    execute(cfg, true)
}

fn execute(cfg: &ExperimentConfig, bundle: bool) -> Result<RunOutput> {
    let setup = Setup::from_config(cfg)?;
    let dir = prepare_out(cfg).map_err(|e| e.in_stage("output"))?;
    let learned = learn(cfg, &setup)?;
    let out = (|| -> Result<()> {
        if !bundle {
            return Ok(());
        }
        write_data(dir, &setup.dict, &learned.data)?;
        learned.model.write_json(create(dir, "model.json")?)?;
        write_json(dir, "bounds.json", &learned.bound_report)?;
        learned.ingredients.write_json(create(dir, "ingredients.json")?)?;
        write_json(dir, "verification.json", &learned.verification)
    })();
    out.map_err(|e| e.in_stage("output"))?;
    let spec = ocp_spec(cfg, &setup, &learned).map_err(|e| e.in_stage("tightening"))?;
    let linear = match cfg.controller {
        ControllerKind::Lmpc => {
            let lin = fit_linear_baseline(cfg, &setup).map_err(|e| e.in_stage("baseline"))?;
            if bundle {
                lin.write_json(create(dir, "linear_model.json")?)?;
            }
            Some(lin)
        }
        _ => None,
    };
    let run = simulate(cfg, &setup, &learned, &spec, linear.as_ref(), cfg.controller).map_err(|e| e.in_stage("simulation"))?;
    run.trace.write_csv(create(dir, "trace.csv")?).map_err(|e| e.in_stage("output"))?;
    write_json(dir, "metrics.json", &run.metrics).map_err(|e| e.in_stage("output"))?;
    if let Some(e) = &run.trace.error {
        return Err(Error::ValidationFailed(e.clone()).in_stage("simulation"));
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: ControllerKind,
    pub final_norm: Option<f64>,
    pub accumulated_cost: Option<f64>,
    pub n_state_violations: Option<usize>,
    pub n_input_violations: Option<usize>,
    pub steps: usize,
    pub error: Option<String>,
}

pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Traces in row order; `None` where the controller could not be set up.
    pub traces: Vec<Option<ClosedLoopTrace>>,
}

/// Runs the configured SafEDMD controller (dual mode when the configuration names a
/// different one) and L-MPC on the same seed and `x0`.
pub fn compare_controllers(cfg: &ExperimentConfig) -> Result<Comparison> {
    let setup = Setup::from_config(cfg)?;
    let learned = learn(cfg, &setup)?;
    let spec = ocp_spec(cfg, &setup, &learned).map_err(|e| e.in_stage("tightening"))?;
    let primary = match cfg.controller {
        ControllerKind::SafedmdMpc => ControllerKind::SafedmdMpc,
        _ => ControllerKind::DualMode,
    };
    let linear = fit_linear_baseline(cfg, &setup);
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for kind in [primary, ControllerKind::Lmpc] {
        let run = match (&linear, kind) {
            (Err(e), ControllerKind::Lmpc) => Err(Error::FitFailed(e.to_string()).in_stage("baseline")),
            _ => simulate(cfg, &setup, &learned, &spec, linear.as_ref().ok(), kind),
        };
        match run {
            Ok(run) => {
                let m = &run.metrics;
                rows.push(ComparisonRow {
                    controller: kind,
                    final_norm: Some(m.stability.final_norm),
                    accumulated_cost: Some(m.accumulated_cost),
                    n_state_violations: Some(m.stability.n_state_violations),
                    n_input_violations: Some(m.stability.n_input_violations),
                    steps: m.steps,
                    error: m.error.clone(),
                });
                traces.push(Some(run.trace));
            }
            Err(e) => {
                rows.push(ComparisonRow {
                    controller: kind,
                    final_norm: None,
                    accumulated_cost: None,
                    n_state_violations: None,
                    n_input_violations: None,
                    steps: 0,
                    error: Some(e.to_string()),
                });
                traces.push(None);
            }
        }
    }
    Ok(Comparison { rows, traces })
}
