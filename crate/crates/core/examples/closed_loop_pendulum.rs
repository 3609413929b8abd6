//! Closed loop on the true pendulum for one controller; the trace goes to a CSV file.
//!
//! ```text
//! cargo run --release --example closed_loop_pendulum -- dual-mode trace.csv
//! ```

use std::fs::File;
use std::io::BufWriter;

use safedmd_mpc::harness::{fit_linear_baseline, learn, ocp_spec, simulate, ControllerKind, ExperimentConfig, Setup};

fn main() -> safedmd_mpc::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: ControllerKind = args.next().as_deref().unwrap_or("safedmd-mpc").parse()?;
    let out = args.next().unwrap_or_else(|| "trace.csv".into());

    let mut cfg = ExperimentConfig::pendulum_benchmark();
    cfg.horizon = 40;
    cfg.controller = kind;
    let setup = Setup::from_config(&cfg)?;
    let learned = learn(&cfg, &setup)?;
    let spec = ocp_spec(&cfg, &setup, &learned)?;
    let lin = match kind {
        ControllerKind::Lmpc => Some(fit_linear_baseline(&cfg, &setup)?),
        _ => None,
    };
    let run = simulate(&cfg, &setup, &learned, &spec, lin.as_ref(), kind)?;
    run.trace.write_csv(BufWriter::new(File::create(&out)?))?;

    let m = &run.metrics;
    println!("{kind}: {} steps, final norm {:.3e}", m.steps, m.stability.final_norm);
    println!("settles within r = {:?} from t = {:?} s", m.stability.radius, m.stability.entry_time);
    println!("constraints held {}, all feasible {}", m.stability.constraints_held, m.stability.all_feasible);
    if let Some(s) = m.switch_step {
        println!("switched to the terminal controller at t = {:.2} s", s as f64 * cfg.dt);
    }
    println!("trace written to {out}");
    Ok(())
}
