//! Terminal cost, region and local controller for the pendulum, re-verified on fresh
//! samples against the true plant.

use nalgebra::DVector;
use safedmd_mpc::harness::{fit_model, generate_data, synthesize_terminal, verify_terminal, ExperimentConfig, Setup};
use safedmd_mpc::terminal::{in_terminal_region, terminal_controller, terminal_cost};

fn main() -> safedmd_mpc::Result<()> {
    let cfg = ExperimentConfig::pendulum_benchmark();
    let setup = Setup::from_config(&cfg)?;
    let model = fit_model(&generate_data(&cfg, &setup)?)?;
    let ing = synthesize_terminal(&cfg, &setup, &model)?;
    println!("P =\n{}", ing.p);
    println!("level c = {:.4}, eps scale = {:.4e}, attempts {}", ing.c, ing.eps_scale, ing.attempts);
    println!("enclosing radius {:.4}", ing.enclosing_radius(2));

    let report = verify_terminal(&cfg, &setup, &ing)?;
    println!("{report:#?}");

    for x in [[0.5, -0.5], [2.0, 1.0], [6.0, 6.0]] {
        let x = DVector::from_vec(x.to_vec());
        let inside = in_terminal_region(&ing, &setup.dict, &x);
        let v = terminal_cost(&ing, &setup.dict, &x)?;
        match terminal_controller(&ing, &setup.dict, &x) {
            Ok(u) => println!("x = {:?}: V_f = {v:.3}, inside {inside}, mu = {:.3}", x.as_slice(), u[0]),
            Err(e) => println!("x = {:?}: V_f = {v:.3}, {e}", x.as_slice()),
        }
    }
    Ok(())
}
