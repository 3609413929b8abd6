//! Continuous-time control-affine plants and their zero-order-hold sampled maps.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::is_finite_vec;

pub type DriftFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type InputMapFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `ẋ = g0(x) + G(x) u` with `g0(0) = 0`.
#[derive(Clone)]
pub struct ControlAffinePlant {
    name: String,
    n: usize,
    m: usize,
    g0: DriftFn,
    g: InputMapFn,
}

impl fmt::Debug for ControlAffinePlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffinePlant")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl ControlAffinePlant {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        g0: DriftFn,
        g: InputMapFn,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParameter("plant dimensions must be positive".into()));
        }
        let origin = DVector::zeros(n);
        let drift = g0(&origin);
        if drift.len() != n {
            return Err(Error::DimensionError(format!(
                "drift returns length {}, expected {n}",
                drift.len()
            )));
        }
        if drift.amax() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "drift does not vanish at the origin (|g0(0)|_inf = {:e})",
                drift.amax()
            )));
        }
        let input = g(&origin);
        if input.shape() != (n, m) {
            return Err(Error::DimensionError(format!(
                "input map has shape {:?}, expected ({n}, {m})",
                input.shape()
            )));
        }
        Ok(Self {
            name: name.into(),
            n,
            m,
            g0,
            g,
        })
    }

    /// Inverted pendulum `ẋ1 = x2`, `ẋ2 = (g/l) sin x1 − b/(m l²) x2 + u/(m l²)`.
    pub fn pendulum(b: f64, l: f64, mass: f64, g: f64) -> Result<Self> {
        if !(l > 0.0 && mass > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pendulum length and mass must be positive (l = {l}, m = {mass})"
            )));
        }
        let inertia = mass * l * l;
        Self::new(
            "pendulum",
            2,
            1,
            Arc::new(move |x: &DVector<f64>| {
                DVector::from_vec(vec![x[1], g / l * x[0].sin() - b / inertia * x[1]])
            }),
            Arc::new(move |_x: &DVector<f64>| DMatrix::from_column_slice(2, 1, &[0.0, 1.0 / inertia])),
        )
    }

    /// `ẋ = A x + B u`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::DimensionError(format!(
                "linear plant with A {:?} and B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (n, m) = b.shape();
        Self::new(
            "linear",
            n,
            m,
            Arc::new(move |x: &DVector<f64>| &a * x),
            Arc::new(move |_x: &DVector<f64>| b.clone()),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.g0)(x)
    }

    pub fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.g)(x)
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.g0)(x) + (self.g)(x) * u
    }
}

/// One classical fourth-order Runge–Kutta step with `u` held constant.
pub fn rk4_step(
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if x.len() != plant.n || u.len() != plant.m {
        return Err(Error::DimensionError(format!(
            "state/input of length {}/{} for a plant with n = {}, m = {}",
            x.len(),
            u.len(),
            plant.n,
            plant.m
        )));
    }
    let k1 = plant.rhs(x, u);
    let k2 = plant.rhs(&(x + &k1 * (0.5 * h)), u);
    let k3 = plant.rhs(&(x + &k2 * (0.5 * h)), u);
    let k4 = plant.rhs(&(x + &k3 * h), u);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if !is_finite_vec(&next) {
        return Err(Error::IntegrationDiverged);
    }
    Ok(next)
}

/// The sampled map `f(x, u) = x(Δt; x, u)` under zero-order hold.
#[derive(Debug, Clone)]
pub struct SampledDynamics {
    plant: ControlAffinePlant,
    dt: f64,
    substeps: usize,
}

impl SampledDynamics {
    pub const DEFAULT_SUBSTEPS: usize = 10;

    pub fn new(plant: ControlAffinePlant, dt: f64, substeps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("sampling period must be positive, got {dt}")));
        }
        if substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(Self { plant, dt, substeps })
    }

    pub fn with_default_substeps(plant: ControlAffinePlant, dt: f64) -> Result<Self> {
        Self::new(plant, dt, Self::DEFAULT_SUBSTEPS)
    }

    pub fn plant(&self) -> &ControlAffinePlant {
        &self.plant
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn state_dim(&self) -> usize {
        self.plant.n
    }

    pub fn input_dim(&self) -> usize {
        self.plant.m
    }

    pub fn flow(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if !is_finite_vec(x) || !is_finite_vec(u) {
            return Err(Error::InvalidParameter("non-finite state or input".into()));
        }
        let h = self.dt / self.substeps as f64;
        let mut state = x.clone();
        for _ in 0..self.substeps {
            state = rk4_step(&self.plant, &state, u, h)?;
        }
        Ok(state)
    }
}
