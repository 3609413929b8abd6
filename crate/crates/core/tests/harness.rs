mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use safedmd_mpc::harness::{
    compare_controllers, fit_linear_baseline, learn, ocp_spec, practical_stability_metrics,
    run_experiment, run_stage, simulate, ClosedLoopTrace, ControllerKind, ExperimentConfig, RunOutput, Setup, Stage,
    TraceRow,
};
use safedmd_mpc::mpc::Mode;
use safedmd_mpc::sets::BoxSet;
use safedmd_mpc::Error;

use common::{config_path, linear, load_config, pendulum, vec, Fixture};

fn run_fixture(fx: &Fixture, cfg: &ExperimentConfig, kind: ControllerKind) -> RunOutput {
    let lin = (kind == ControllerKind::Lmpc).then(|| fit_linear_baseline(cfg, &fx.setup).unwrap());
    let spec = ocp_spec(cfg, &fx.setup, &fx.learned).unwrap();
    simulate(cfg, &fx.setup, &fx.learned, &spec, lin.as_ref(), kind).unwrap()
}

fn csv_bytes(trace: &ClosedLoopTrace) -> Vec<u8> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    buf
}

/// Trace with the given state norms along the first axis, inputs zero.
fn synthetic_trace(norms: &[f64]) -> ClosedLoopTrace {
    let rows = norms[..norms.len() - 1]
        .iter()
        .enumerate()
        .map(|(k, v)| TraceRow {
            k,
            t: k as f64 * 0.1,
            x: vec(&[*v, 0.0]),
            u: vec(&[0.0]),
            vf: 0.0,
            xnorm: *v,
            feasible: true,
            mode: Mode::Mpc,
            solve_ms: 0.0,
            value: None,
        })
        .collect();
    ClosedLoopTrace {
        controller: ControllerKind::SafedmdMpc,
        rows,
        final_state: vec(&[norms[norms.len() - 1], 0.0]),
        switch_step: None,
        error: None,
    }
}

#[test]
fn resting_state_stays_at_rest_for_every_controller() {
    for fx in [linear(), pendulum()] {
        let mut cfg = fx.cfg.clone();
        cfg.x0 = vec![0.0, 0.0];
        cfg.t_final = cfg.horizon as f64 * cfg.dt + 0.1;
        for kind in ControllerKind::ALL {
            let out = run_fixture(fx, &cfg, kind);
            assert!(out.trace.succeeded(), "{kind}: {:?}", out.trace.error);
            assert_eq!(out.trace.rows.len(), cfg.n_steps());
            // the baseline regression keeps a small drift on the pendulum, an offset of its own
            let tol = if kind == ControllerKind::Lmpc { 5e-2 } else { 1e-9 };
            for row in &out.trace.rows {
                assert!(row.x.amax() <= tol && row.u.amax() <= tol, "{kind} at {}: {} {}", row.k, row.x, row.u);
            }
        }
    }
}

#[test]
fn trace_csv_has_the_fixed_columns() {
    let fx = linear();
    let mut cfg = fx.cfg.clone();
    cfg.t_final = 1.0;
    let out = run_fixture(fx, &cfg, ControllerKind::DualMode);
    let bytes = csv_bytes(&out.trace);
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,t,x1,x2,u1,Vf,xnorm,feasible,mode,solve_ms");
    assert_eq!(text.lines().count(), cfg.n_steps() + 1);
    let back = ClosedLoopTrace::read_csv_rows(bytes.as_slice()).unwrap();
    assert_eq!(back.len(), out.trace.rows.len());
    for (a, b) in back.iter().zip(&out.trace.rows) {
        assert_eq!((a.k, a.t, &a.x, &a.u, a.vf, a.xnorm), (b.k, b.t, &b.x, &b.u, b.vf, b.xnorm));
        assert_eq!((a.feasible, a.mode, a.solve_ms), (b.feasible, b.mode, b.solve_ms));
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = load_config("linear.toml");
    cfg.t_final = cfg.horizon as f64 * cfg.dt * 0.5;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = load_config("linear.toml");
    cfg.x0 = vec![6.0, 0.0];
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = load_config("linear.toml");
    cfg.x0 = vec![0.0];
    assert!(cfg.validate().is_err());
    let mut cfg = load_config("linear.toml");
    cfg.dictionary = "pendulum-sin".into();
    cfg.plant = safedmd_mpc::harness::PlantConfig::Linear {
        a: vec![vec![0.0]],
        b: vec![vec![1.0]],
    };
    cfg.x_box = BoxSet::symmetric(1, 1.0);
    cfg.x0 = vec![0.0];
    assert!(cfg.validate().is_err());
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config_path("linear.toml")).unwrap();
    let path = dir.path().join("extra.toml");
    fs::write(&path, format!("horizon_typo = 3\n{text}")).unwrap();
    assert!(matches!(ExperimentConfig::from_path(&path), Err(Error::Config(_))));
}

#[test]
fn configuration_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [ExperimentConfig::pendulum_benchmark(), load_config("linear.toml")] {
        let path = dir.path().join("cfg.json");
        fs::write(&path, cfg.to_json_string().unwrap()).unwrap();
        assert_eq!(ExperimentConfig::from_path(&path).unwrap(), cfg);
    }
    for name in [
        "pendulum.json",
        "pendulum_n40.json",
        "pendulum_dual.json",
        "pendulum_dual_n40.json",
        "pendulum_ext.json",
        "pendulum_ext_n40.json",
        "pendulum_lmpc_n40.json",
    ] {
        load_config(name);
    }
    let mut shipped = load_config("pendulum.json");
    shipped.out_dir = ExperimentConfig::pendulum_benchmark().out_dir;
    assert_eq!(shipped, ExperimentConfig::pendulum_benchmark());
}

#[test]
fn zero_trace_enters_the_smallest_radius_at_once() {
    let trace = synthetic_trace(&[0.0; 6]);
    let report = practical_stability_metrics(&trace, &[1.0, 1e-3, 0.1], &BoxSet::symmetric(2, 1.0), &BoxSet::symmetric(1, 1.0), 0.1);
    assert_eq!(report.radius, Some(1e-3));
    assert_eq!(report.entry_step, Some(0));
    assert_eq!(report.entry_time, Some(0.0));
    assert_eq!(report.envelope_violations, 0);
    assert!(report.constraints_held && report.all_feasible);
}

#[test]
fn halving_trace_enters_the_quarter_ball_at_step_two() {
    let norms: Vec<f64> = (0..12).map(|k| 0.5f64.powi(k)).collect();
    let trace = synthetic_trace(&norms);
    let x_box = BoxSet::symmetric(2, 2.0);
    let u_box = BoxSet::symmetric(1, 1.0);
    let report = practical_stability_metrics(&trace, &[0.25], &x_box, &u_box, 0.1);
    assert_eq!(report.entry_step, Some(2));
    assert!((report.entry_time.unwrap() - 0.2).abs() < 1e-15);
    // no candidate below the last norm
    assert_eq!(practical_stability_metrics(&trace, &[1e-6], &x_box, &u_box, 0.1).radius, None);
}

#[test]
fn growth_and_box_exits_are_counted() {
    let trace = synthetic_trace(&[1.0, 0.5, 0.8, 3.0, 0.01, 0.001]);
    let report = practical_stability_metrics(&trace, &[0.05], &BoxSet::symmetric(2, 2.0), &BoxSet::symmetric(1, 1.0), 0.1);
    assert_eq!(report.entry_step, Some(4));
    assert_eq!(report.envelope_violations, 2);
    assert_eq!(report.n_state_violations, 1);
    assert!(!report.constraints_held);
}

#[test]
fn linear_closed_loop_is_admissible_and_settles() {
    let fx = linear();
    let out = run_fixture(fx, &fx.cfg, ControllerKind::SafedmdMpc);
    let trace = &out.trace;
    assert!(trace.succeeded(), "{:?}", trace.error);
    assert_eq!(trace.rows.len(), fx.cfg.n_steps());
    for (i, row) in trace.rows.iter().enumerate() {
        assert_eq!(row.k, i);
        assert_eq!(row.t, i as f64 * fx.cfg.dt);
        assert!(row.feasible);
        assert!(fx.setup.x_box.contains(&row.x) && fx.setup.u_box.contains(&row.u));
        assert!(row.value.is_some());
    }
    assert!(trace.rows.windows(2).all(|w| w[1].t > w[0].t));
    let m = &out.metrics;
    assert!(m.stability.constraints_held && m.stability.all_feasible);
    assert!(m.stability.radius.unwrap() <= m.enclosing_radius);
    let audit = m.audit.as_ref().unwrap();
    assert!(audit.n_checked > 0);
    assert_eq!(audit.n_violations, 0, "{audit:?}");
}

#[test]
fn same_configuration_gives_identical_traces() {
    let fx = linear();
    let mut cfg = fx.cfg.clone();
    cfg.t_final = 2.0;
    for kind in [ControllerKind::SafedmdMpc, ControllerKind::Lmpc] {
        let a = run_fixture(fx, &cfg, kind);
        let b = run_fixture(fx, &cfg, kind);
        assert_eq!(a.trace, b.trace);
        assert_eq!(csv_bytes(&a.trace), csv_bytes(&b.trace));
    }
    // learning itself is a pure function of the configuration
    let setup = Setup::from_config(&fx.cfg).unwrap();
    let again = learn(&fx.cfg, &setup).unwrap();
    assert_eq!(again.model, fx.learned.model);
    assert_eq!(again.ingredients, fx.learned.ingredients);
}

#[test]
fn exact_lift_comparison_agrees() {
    let cmp = compare_controllers(&load_config("linear.toml")).unwrap();
    assert_eq!(cmp.rows.len(), 2);
    assert_eq!(cmp.rows[0].controller, ControllerKind::SafedmdMpc);
    assert_eq!(cmp.rows[1].controller, ControllerKind::Lmpc);
    for row in &cmp.rows {
        assert!(row.error.is_none(), "{row:?}");
        assert!(row.accumulated_cost.unwrap().is_finite());
        assert_eq!(row.n_state_violations, Some(0));
        assert_eq!(row.n_input_violations, Some(0));
    }
    let (a, b) = (cmp.rows[0].final_norm.unwrap(), cmp.rows[1].final_norm.unwrap());
    assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
    assert!(cmp.traces.iter().all(Option::is_some));
}

#[test]
fn comparison_uses_dual_mode_for_other_controllers() {
    let mut cfg = load_config("linear.toml");
    cfg.controller = ControllerKind::TerminalOnly;
    cfg.t_final = 1.0;
    let cmp = compare_controllers(&cfg).unwrap();
    assert_eq!(cmp.rows[0].controller, ControllerKind::DualMode);
}

fn data_files(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("data_"))
        .count()
}

#[test]
fn run_writes_the_full_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_config("linear.toml");
    cfg.out_dir = dir.path().to_path_buf();
    cfg.t_final = 1.0;
    let out = run_experiment(&cfg).unwrap();
    for name in [
        "config.json",
        "model.json",
        "bounds.json",
        "ingredients.json",
        "verification.json",
        "trace.csv",
        "metrics.json",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    assert_eq!(data_files(dir.path()), 2);
    assert_eq!(fs::read(dir.path().join("trace.csv")).unwrap(), csv_bytes(&out.trace));
    let echoed = ExperimentConfig::from_path(&dir.path().join("config.json")).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn each_stage_writes_its_own_artifacts() {
    let cases = [
        (Stage::GenerateData, "data_zero.csv"),
        (Stage::Fit, "model.json"),
        (Stage::Bounds, "bounds.json"),
        (Stage::Synthesize, "ingredients.json"),
        (Stage::Verify, "verification.json"),
        (Stage::Simulate, "trace.csv"),
        (Stage::Compare, "comparison.json"),
    ];
    for (stage, file) in cases {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = load_config("linear.toml");
        cfg.out_dir = dir.path().to_path_buf();
        cfg.t_final = 0.5;
        run_stage(&cfg, stage).unwrap();
        assert!(dir.path().join(file).is_file(), "{stage:?} did not write {file}");
    }
}

#[test]
fn lost_feasibility_flushes_a_marked_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_config("linear.toml");
    cfg.out_dir = dir.path().to_path_buf();
    // five steps cannot bring a far corner into the terminal region
    cfg.horizon = 5;
    cfg.t_final = 0.5;
    cfg.x0 = vec![4.5, 4.5];
    let Err(err) = run_experiment(&cfg) else { panic!("run should fail") };
    assert!(matches!(err, Error::Stage { stage: "simulation", .. }), "{err}");
    let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(text.lines().last().unwrap().starts_with("# error:"));
    let rows = ClosedLoopTrace::read_csv_rows(text.as_bytes()).unwrap();
    assert!(!rows.last().unwrap().feasible);
    assert!(dir.path().join("metrics.json").is_file());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_safedmd-mpc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn command_line_runs_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_file = dir.path().join("short.json");
    let mut cfg = load_config("linear.toml");
    cfg.t_final = 0.5;
    fs::write(&cfg_file, cfg.to_json_string().unwrap()).unwrap();
    let out_dir = dir.path().join("bundle");
    let cfg_arg = cfg_file.to_str().unwrap();
    let out_arg = out_dir.to_str().unwrap();

    let out = cli(&["run", "--config", cfg_arg, "--out", out_arg, "--seed", "4", "--controller", "lmpc"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = ExperimentConfig::from_path(&out_dir.join("config.json")).unwrap();
    assert_eq!((echoed.seed, echoed.controller), (4, ControllerKind::Lmpc));
    assert!(out_dir.join("linear_model.json").is_file());

    let gen_dir = dir.path().join("data");
    let out = cli(&["generate-data", "--config", cfg_arg, "--out", gen_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(data_files(&gen_dir), 2);

    let out = cli(&["simulate", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!cli(&["fly"]).status.success());
}

#[test]
fn solve_times_are_zero_unless_requested() {
    let fx = linear();
    let mut cfg = fx.cfg.clone();
    cfg.t_final = 0.5;
    let quiet = run_fixture(fx, &cfg, ControllerKind::SafedmdMpc);
    assert!(quiet.trace.rows.iter().all(|r| r.solve_ms == 0.0));
    cfg.record_solve_time = true;
    let timed = run_fixture(fx, &cfg, ControllerKind::SafedmdMpc);
    assert!(timed.trace.rows.iter().any(|r| r.solve_ms > 0.0));
}

#[test]
fn dual_mode_switches_once_and_the_terminal_cost_decreases() {
    let fx = pendulum();
    let mut cfg = fx.cfg.clone();
    cfg.controller = ControllerKind::DualMode;
    let out = run_fixture(fx, &cfg, ControllerKind::DualMode);
    let trace = &out.trace;
    assert!(trace.succeeded());
    let s = trace.switch_step.unwrap();
    assert!(trace.rows[..s].iter().all(|r| r.mode == Mode::Mpc));
    assert!(trace.rows[s..].iter().all(|r| r.mode == Mode::Terminal));
    assert!(trace.rows[s].vf <= fx.learned.ingredients.c);
    for w in trace.rows[s..].windows(2) {
        assert!(w[1].vf <= w[0].vf, "V_f grew at step {}", w[1].k);
    }
    let norms = trace.norms();
    let hit = (s..norms.len()).find(|&k| norms[k] < 1e-3).unwrap();
    assert!(((hit - s) as f64) * cfg.dt <= 10.0);
    assert_eq!(out.metrics.switch_step, Some(s));
}
