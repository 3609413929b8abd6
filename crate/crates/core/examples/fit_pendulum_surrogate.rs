//! Samples the pendulum, fits the bilinear surrogate and estimates its error constants.

use safedmd_mpc::harness::{estimate_bounds, fit_model, generate_data, ExperimentConfig, Setup};

fn main() -> safedmd_mpc::Result<()> {
    let cfg = ExperimentConfig::pendulum_benchmark();
    let setup = Setup::from_config(&cfg)?;
    let data = generate_data(&cfg, &setup)?;
    let model = fit_model(&data)?;
    println!("lifted dimension {}", setup.dict.lifted_dim());
    println!("A =\n{}", model.a);
    println!("b_1 = {}", model.b[0].transpose());
    println!("training residual per sample {:?}", model.meta.residual_per_sample);

    let report = estimate_bounds(&cfg, &setup, &model)?;
    let b = &report.bounds;
    println!("c_x = {:.4e}, c_u = {:.4e}, eps = {:.4e}, L_K = {:.4}", b.c_x, b.c_u, b.eps, b.l_k);
    println!("{}", b.confidence_note);
    println!(
        "one-step check: {}/{} violations, rollout check: {}/{} violations",
        report.proportional.n_violations,
        report.proportional.n_samples,
        report.rollout.n_violations,
        report.rollout.n_samples
    );
    Ok(())
}
