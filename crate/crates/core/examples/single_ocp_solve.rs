//! One optimal control problem from a given state, with the plan and its margins.
//!
//! ```text
//! cargo run --release --example single_ocp_solve -- 3.0 -4.0
//! ```

use nalgebra::DVector;
use safedmd_mpc::harness::{learn, ocp_spec, ExperimentConfig, Setup};
use safedmd_mpc::mpc::solve_ocp;

fn main() -> safedmd_mpc::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let x = match args.as_slice() {
        [a, b] => DVector::from_vec(vec![*a, *b]),
        _ => DVector::from_vec(vec![3.0, -4.0]),
    };
    let mut cfg = ExperimentConfig::pendulum_benchmark();
    cfg.horizon = 40;
    let setup = Setup::from_config(&cfg)?;
    let learned = learn(&cfg, &setup)?;
    let spec = ocp_spec(&cfg, &setup, &learned)?;

    let started = std::time::Instant::now();
    let sol = solve_ocp(&spec, &learned.model, &setup.dict, &x, None)?;
    println!(
        "cost {:.4}, feasible {}, {} iterations, {:.1} ms",
        sol.cost,
        sol.feasible,
        sol.solver_iters,
        started.elapsed().as_secs_f64() * 1e3
    );
    println!("terminal margin {:.4}", sol.terminal_margin);
    for k in (0..spec.horizon).step_by(5) {
        let p = &sol.predicted_states[k];
        println!("{k:>4}  x = ({:>8.4}, {:>8.4})  u = {:>8.4}", p[0], p[1], sol.u_star[k][0]);
    }
    let end = sol.predicted_states.last().unwrap();
    println!("{:>4}  x = ({:>8.4}, {:>8.4})", spec.horizon, end[0], end[1]);
    Ok(())
}
