//! Checks the value-function decrease along an MPC run on the pendulum.

use safedmd_mpc::harness::{learn, ocp_spec, simulate, value_decrease_constant, ControllerKind, ExperimentConfig, Setup};

fn main() -> safedmd_mpc::Result<()> {
    let mut cfg = ExperimentConfig::pendulum_benchmark();
    cfg.horizon = 40;
    cfg.t_final = 5.0;
    let setup = Setup::from_config(&cfg)?;
    let learned = learn(&cfg, &setup)?;
    let spec = ocp_spec(&cfg, &setup, &learned)?;
    let run = simulate(&cfg, &setup, &learned, &spec, None, ControllerKind::SafedmdMpc)?;
    let audit = run.metrics.audit.expect("MPC runs are audited");

    println!("C = {:.4e} (recomputed {:.4e})", audit.constant, value_decrease_constant(&spec, &setup.dict)?);
    println!("slack C*eps = {:.4e}", audit.slack);
    println!("{} steps above r = {:.3e}, {} violations", audit.n_checked, audit.practical_radius, audit.n_violations);
    println!("largest V_N change relative to |x|_Q^2 / 2: {:.4}", audit.worst_decrease_ratio);
    Ok(())
}
