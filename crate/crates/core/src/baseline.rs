//! EDMDc linear lifted surrogate `z⁺ ≈ A_L z + B_L u` and the linear-model MPC baseline.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::SampledDynamics;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, lstsq_right, to_rows};
use crate::mpc::{solve_ocp, LiftedPredictor, OcpSolution, OcpSpec};
use crate::safedmd::rng_for;
use crate::sets::BoxSet;

/// Linear lifted model on the full lift (constant entry included).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSurrogate {
    pub a_l: DMatrix<f64>,
    pub b_l: DMatrix<f64>,
    pub dt: f64,
    pub dict_name: String,
    /// `‖Z⁺ − A_L Z − B_L U‖_F / d` on the training data.
    pub residual_per_sample: f64,
}

const STREAM_EDMDC: u64 = 400;

/// Joint least squares `[A_L B_L] = argmin ‖Z⁺ − A_L Z − B_L U‖_F`, minimum norm when the
/// regressor is rank deficient.
pub fn fit_linear(z: &DMatrix<f64>, u: &DMatrix<f64>, z_next: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let d = z.ncols();
    if u.ncols() != d || z_next.ncols() != d || z_next.nrows() != z.nrows() {
        return Err(Error::DimensionError("EDMDc data blocks disagree".into()));
    }
    if d < z.nrows() + u.nrows() {
        log::warn!("insufficient data: {d} samples for {} unknowns per row", z.nrows() + u.nrows());
    }
    let dim = z.nrows();
    let m = u.nrows();
    let mut reg = DMatrix::zeros(dim + m, d);
    reg.rows_mut(0, dim).copy_from(z);
    reg.rows_mut(dim, m).copy_from(u);
    let theta = lstsq_right(&reg, z_next)?;
    let a = theta.columns(0, dim).into_owned();
    let b = theta.columns(dim, m).into_owned();
    let resid = (z_next - &theta * reg).norm() / d as f64;
    Ok((a, b, resid))
}

/// Draws `d` pairs uniformly from `X × U`, advances each one period and fits the linear
/// lifted model.
pub fn fit_edmdc(
    sd: &SampledDynamics,
    dict: &Dictionary,
    x_box: &BoxSet,
    u_box: &BoxSet,
    d: usize,
    seed: u64,
) -> Result<LinearSurrogate> {
    if d == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let dim = dict.lifted_dim();
    let m = sd.input_dim();
    if u_box.dim() != m || x_box.dim() != sd.state_dim() {
        return Err(Error::DimensionError("constraint boxes do not match the plant".into()));
    }
    let mut rng = rng_for(seed, STREAM_EDMDC);
    let mut z = DMatrix::zeros(dim, d);
    let mut u = DMatrix::zeros(m, d);
    let mut z_next = DMatrix::zeros(dim, d);
    let mut discarded = 0;
    let mut j = 0;
    while j < d {
        let x = x_box.sample(&mut rng);
        let uj = u_box.sample(&mut rng);
        let pair = sd
            .flow(&x, &uj)
            .and_then(|xn| Ok((dict.lift_full(&x)?, dict.lift_full(&xn)?)));
        match pair {
            Ok((zj, zn)) => {
                z.set_column(j, &zj);
                u.set_column(j, &uj);
                z_next.set_column(j, &zn);
                j += 1;
            }
            Err(Error::IntegrationDiverged) | Err(Error::LiftFailed { .. }) => {
                discarded += 1;
                if discarded > d / 10 {
                    return Err(Error::SamplingFailed { discarded, requested: d });
                }
            }
            Err(e) => return Err(e),
        }
    }
    let (a_l, b_l, residual_per_sample) = fit_linear(&z, &u, &z_next)?;
    Ok(LinearSurrogate {
        a_l,
        b_l,
        dt: sd.dt(),
        dict_name: dict.name().to_string(),
        residual_per_sample,
    })
}

impl LiftedPredictor for LinearSurrogate {
    fn lifted_dim(&self) -> usize {
        self.a_l.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b_l.ncols()
    }

    fn step(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_l * z + &self.b_l * u
    }

    fn state_jacobian(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a_l.clone()
    }

    fn input_jacobian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        self.b_l.clone()
    }
}

#[derive(Serialize, Deserialize)]
struct LinearFile {
    dt: f64,
    dict_name: String,
    a_l: Vec<Vec<f64>>,
    b_l: Vec<Vec<f64>>,
    residual_per_sample: f64,
}

impl LinearSurrogate {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let f = LinearFile {
            dt: self.dt,
            dict_name: self.dict_name.clone(),
            a_l: to_rows(&self.a_l),
            b_l: to_rows(&self.b_l),
            residual_per_sample: self.residual_per_sample,
        };
        serde_json::to_writer_pretty(out, &f)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let f: LinearFile = serde_json::from_reader(input)?;
        let a_l = from_rows(&f.a_l)?;
        let b_l = from_rows(&f.b_l)?;
        if !a_l.is_square() || b_l.nrows() != a_l.nrows() {
            return Err(Error::DimensionError("inconsistent linear model file".into()));
        }
        Ok(Self {
            a_l,
            b_l,
            dt: f.dt,
            dict_name: f.dict_name,
            residual_per_sample: f.residual_per_sample,
        })
    }
}

/// The baseline problem: same stage and terminal cost, input box only.
pub fn lmpc_spec(base: &OcpSpec) -> OcpSpec {
    let mut spec = base.clone();
    spec.tightening_enabled = false;
    spec.state_constraints = false;
    spec.terminal_constraint = false;
    spec
}

/// One L-MPC step: solves the input-constrained problem through the linear model and
/// returns the first input with the full solution for warm starting.
pub fn lmpc_step(
    spec: &OcpSpec,
    lin: &LinearSurrogate,
    dict: &Dictionary,
    state: &DVector<f64>,
    warm_start: Option<&[DVector<f64>]>,
) -> Result<(DVector<f64>, OcpSolution)> {
    let spec = if spec.state_constraints || spec.terminal_constraint || spec.tightening_enabled {
        lmpc_spec(spec)
    } else {
        spec.clone()
    };
    let sol = solve_ocp(&spec, lin, dict, state, warm_start)?;
    Ok((sol.u_star[0].clone(), sol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unexcited_input_gets_zero_gain() {
        let z = DMatrix::from_fn(3, 20, |i, j| if i == 0 { 1.0 } else { ((i * 7 + j * 3) % 11) as f64 - 5.0 });
        let u = DMatrix::zeros(1, 20);
        let z_next = &z * 0.5;
        let (a, b, _) = fit_linear(&z, &u, &z_next).unwrap();
        assert!(b.amax() < 1e-12);
        assert!((a - DMatrix::identity(3, 3) * 0.5).amax() < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let lin = LinearSurrogate {
            a_l: DMatrix::identity(2, 2),
            b_l: DMatrix::from_element(2, 1, 0.3),
            dt: 0.1,
            dict_name: "identity".into(),
            residual_per_sample: 0.0,
        };
        let mut buf = Vec::new();
        lin.write_json(&mut buf).unwrap();
        assert_eq!(LinearSurrogate::read_json(buf.as_slice()).unwrap(), lin);
    }
}
