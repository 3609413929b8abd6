#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use safedmd_mpc::dynamics::ControlAffinePlant;
use safedmd_mpc::harness::{learn, ocp_spec, ExperimentConfig, Learned, Setup};
use safedmd_mpc::mpc::OcpSpec;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&config_path(name)).expect("shipped config parses")
}

/// Damped double integrator used throughout; the identity dictionary lifts it exactly.
pub fn linear_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
}

/// Zero-order-hold discretization through the exponential of the augmented matrix
/// `[[A, B], [0, 0]]·dt`.
pub fn exact_discretization(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Discrete LQR gain `K` (with `u = −Kx`) by plain Riccati value iteration.
pub fn dlqr_by_iteration(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..200_000 {
        let s = r + b.transpose() * &p * b;
        let k = s.clone().try_inverse().unwrap() * b.transpose() * &p * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let done = (&next - &p).norm() <= 1e-13 * next.norm();
        p = next;
        if done {
            break;
        }
    }
    let s = r + b.transpose() * &p * b;
    s.try_inverse().unwrap() * b.transpose() * &p * a
}

pub fn linear_plant(a: DMatrix<f64>, b: DMatrix<f64>) -> ControlAffinePlant {
    ControlAffinePlant::linear(a, b).unwrap()
}

pub fn pendulum_plant() -> ControlAffinePlant {
    ControlAffinePlant::pendulum(0.5, 1.0, 1.0, 9.81).unwrap()
}

pub fn vec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Everything learned for one configuration, built once per test binary.
pub struct Fixture {
    pub cfg: ExperimentConfig,
    pub setup: Setup,
    pub learned: Learned,
    pub spec: OcpSpec,
}

impl Fixture {
    fn build(cfg: ExperimentConfig) -> Self {
        let setup = Setup::from_config(&cfg).unwrap();
        let learned = learn(&cfg, &setup).unwrap();
        let spec = ocp_spec(&cfg, &setup, &learned).unwrap();
        Self {
            cfg,
            setup,
            learned,
            spec,
        }
    }

    /// Same problem with another horizon.
    pub fn spec_with_horizon(&self, horizon: usize) -> OcpSpec {
        let mut spec = self.spec.clone();
        spec.horizon = horizon;
        spec.validate().unwrap();
        spec
    }
}

pub fn pendulum() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| Fixture::build(ExperimentConfig::pendulum_benchmark()))
}

pub fn linear() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| Fixture::build(load_config("linear.toml")))
}
