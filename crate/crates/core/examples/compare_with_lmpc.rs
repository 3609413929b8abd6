//! Dual-mode SafEDMD control against MPC on a linear EDMDc surrogate, same seed and x0.

use safedmd_mpc::harness::{compare_controllers, ControllerKind, ExperimentConfig};

fn main() -> safedmd_mpc::Result<()> {
    let mut cfg = ExperimentConfig::pendulum_benchmark();
    cfg.horizon = 40;
    cfg.controller = ControllerKind::DualMode;
    let table = compare_controllers(&cfg)?;
    println!("{:<14} {:>12} {:>14} {:>8} {:>8}", "controller", "final |x|", "stage cost", "x viol", "u viol");
    for row in &table.rows {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{:<14} {:>12} {:>14} {:>8} {:>8}",
            row.controller.as_str(),
            show(row.final_norm),
            show(row.accumulated_cost),
            row.n_state_violations.map_or("-".into(), |v| v.to_string()),
            row.n_input_violations.map_or("-".into(), |v| v.to_string()),
        );
        if let Some(e) = &row.error {
            println!("  error: {e}");
        }
    }
    Ok(())
}
