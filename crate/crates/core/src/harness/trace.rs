use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DVector;

use crate::baseline::{lmpc_spec, LinearSurrogate};
use crate::dictionary::Dictionary;
use crate::dynamics::SampledDynamics;
use crate::error::{Error, Result};
use crate::mpc::{Mode, MpcController, OcpSpec};
use crate::safedmd::SurrogateModel;
use crate::terminal::{terminal_controller, terminal_cost, TerminalIngredients};

use super::config::{ControllerKind, ExperimentConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub t: f64,
    pub x: DVector<f64>,
    /// Input applied on `[t, t + dt)`.
    pub u: DVector<f64>,
    pub vf: f64,
    pub xnorm: f64,
    pub feasible: bool,
    pub mode: Mode,
    pub solve_ms: f64,
    /// Optimal value `J_N` of the problem solved at this step; not exported.
    pub value: Option<f64>,
}

/// Closed-loop record, one row per applied input.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub controller: ControllerKind,
    pub rows: Vec<TraceRow>,
    /// State after the last applied input.
    pub final_state: DVector<f64>,
    pub switch_step: Option<usize>,
    /// Set when the run was aborted; the last row is then the failing step.
    pub error: Option<String>,
}

impl ClosedLoopTrace {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    /// `‖x(k)‖` for every row followed by the final state.
    pub fn norms(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.rows.iter().map(|r| r.xnorm).collect();
        if self.succeeded() {
            out.push(self.final_state.norm());
        }
        out
    }

    pub fn final_norm(&self) -> f64 {
        self.final_state.norm()
    }

    pub fn header(n: usize, m: usize) -> Vec<String> {
        let mut h = vec!["k".to_string(), "t".to_string()];
        h.extend((1..=n).map(|i| format!("x{i}")));
        h.extend((1..=m).map(|i| format!("u{i}")));
        h.extend(["Vf", "xnorm", "feasible", "mode", "solve_ms"].map(String::from));
        h
    }

    /// CSV with the fixed column order; an aborted run ends with a `# error:` line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.final_state.len();
        let m = self.rows.first().map_or(0, |r| r.u.len());
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(Self::header(n, m))?;
            for row in &self.rows {
                let mut rec = vec![row.k.to_string(), row.t.to_string()];
                rec.extend(row.x.iter().map(f64::to_string));
                rec.extend(row.u.iter().map(f64::to_string));
                rec.push(row.vf.to_string());
                rec.push(row.xnorm.to_string());
                rec.push(row.feasible.to_string());
                rec.push(row.mode.to_string());
                rec.push(row.solve_ms.to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        if let Some(e) = &self.error {
            writeln!(out, "# error: {}", e.replace('\n', " "))?;
        }
        Ok(())
    }

    /// Parses the exported columns back; `value`, the final state and the switch step are
    /// not part of the file.
    pub fn read_csv_rows<R: Read>(input: R) -> Result<Vec<TraceRow>> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = rdr.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with('x') && *h != "xnorm").count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad number `{s}` in trace")))
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let x = DVector::from_iterator(n, (0..n).map(|i| num(field(2 + i))).collect::<Result<Vec<_>>>()?);
            let u = DVector::from_iterator(m, (0..m).map(|i| num(field(2 + n + i))).collect::<Result<Vec<_>>>()?);
            let base = 2 + n + m;
            rows.push(TraceRow {
                k: field(0)
                    .parse()
                    .map_err(|_| Error::Config(format!("bad step `{}`", field(0))))?,
                t: num(field(1))?,
                x,
                u,
                vf: num(field(base))?,
                xnorm: num(field(base + 1))?,
                feasible: field(base + 2) == "true",
                mode: if field(base + 3) == "terminal" { Mode::Terminal } else { Mode::Mpc },
                solve_ms: num(field(base + 4))?,
                value: None,
            });
        }
        Ok(rows)
    }
}

struct StepInfo {
    u: DVector<f64>,
    mode: Mode,
    value: Option<f64>,
}

/// Everything the loop needs besides the configuration.
pub struct SimContext<'a> {
    pub sd: &'a SampledDynamics,
    pub dict: &'a Dictionary,
    /// SafEDMD problem; also supplies the terminal cost for every controller.
    pub spec: &'a OcpSpec,
    pub model: &'a SurrogateModel,
    pub linear: Option<&'a LinearSurrogate>,
}

fn run_loop<F>(cfg: &ExperimentConfig, ctx: &SimContext<'_>, ing: &TerminalIngredients, kind: ControllerKind, mut feedback: F) -> ClosedLoopTrace
where
    F: FnMut(usize, &DVector<f64>) -> Result<StepInfo>,
{
    let steps = cfg.n_steps();
    let m = ctx.sd.input_dim();
    let mut x = cfg.x0();
    let mut rows = Vec::with_capacity(steps);
    let mut switch_step = None;
    let mut error = None;
    for k in 0..steps {
        let started = Instant::now();
        let step = feedback(k, &x);
        let solve_ms = if cfg.record_solve_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let vf = terminal_cost(ing, ctx.dict, &x).unwrap_or(f64::NAN);
        let t = k as f64 * cfg.dt;
        let info = match step {
            Ok(info) => info,
            Err(e) => {
                rows.push(TraceRow {
                    k,
                    t,
                    xnorm: x.norm(),
                    x: x.clone(),
                    u: DVector::zeros(m),
                    vf,
                    feasible: false,
                    mode: Mode::Mpc,
                    solve_ms,
                    value: None,
                });
                error = Some(e.to_string());
                break;
            }
        };
        if info.mode == Mode::Terminal && switch_step.is_none() && kind == ControllerKind::DualMode {
            switch_step = Some(k);
        }
        let next = ctx.sd.flow(&x, &info.u);
        rows.push(TraceRow {
            k,
            t,
            xnorm: x.norm(),
            x: x.clone(),
            u: info.u,
            vf,
            feasible: true,
            mode: info.mode,
            solve_ms,
            value: info.value,
        });
        match next {
            Ok(xn) => x = xn,
            Err(e) => {
                error = Some(format!("plant step {k}: {e}"));
                break;
            }
        }
    }
    ClosedLoopTrace {
        controller: kind,
        rows,
        final_state: x,
        switch_step,
        error,
    }
}

/// Runs `kind` against the true sampled plant from `x0` for `k·dt < T_final`. The
/// controller predicts through the surrogate; feasibility loss or plant divergence aborts
/// the run and is recorded in the trace instead of returned.
pub fn closed_loop_sim(cfg: &ExperimentConfig, ctx: &SimContext<'_>, kind: ControllerKind) -> Result<ClosedLoopTrace> {
    let ing = &ctx.spec.ingredients;
    let trace = match kind {
        ControllerKind::SafedmdMpc | ControllerKind::DualMode => {
            let mut ctl = MpcController::new(ctx.spec, ctx.model, ctx.dict, kind == ControllerKind::DualMode);
            run_loop(cfg, ctx, ing, kind, |k, x| {
                let u = ctl.feedback(k, x)?;
                Ok(StepInfo {
                    u,
                    mode: ctl.mode.mode,
                    value: ctl.last_solution().map(|s| s.cost),
                })
            })
        }
        ControllerKind::Lmpc => {
            let lin = ctx
                .linear
                .ok_or_else(|| Error::Config("the lmpc controller needs a linear surrogate".into()))?;
            let spec = lmpc_spec(ctx.spec);
            let mut ctl = MpcController::new(&spec, lin, ctx.dict, false);
            run_loop(cfg, ctx, ing, kind, |k, x| {
                let u = ctl.feedback(k, x)?;
                Ok(StepInfo {
                    u,
                    mode: Mode::Mpc,
                    value: ctl.last_solution().map(|s| s.cost),
                })
            })
        }
        ControllerKind::TerminalOnly => run_loop(cfg, ctx, ing, kind, |_, x| {
            Ok(StepInfo {
                u: terminal_controller(ing, ctx.dict, x)?,
                mode: Mode::Terminal,
                value: None,
            })
        }),
    };
    if let Some(e) = &trace.error {
        log::warn!("{kind} run aborted after {} rows: {e}", trace.rows.len());
    }
    Ok(trace)
}
