use nalgebra::{DMatrix, DVector};

use crate::safedmd::SurrogateModel;

/// Lifted one-step predictor `z⁺ = F(z, u)` that is affine in `u` for fixed `z`
/// and linear in `z` for fixed `u`.
pub trait LiftedPredictor {
    /// Length of the full lift, constant entry included.
    fn lifted_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `∂z⁺/∂z` at input `u`.
    fn state_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64>;
    /// `∂z⁺/∂u` at lifted state `z`.
    fn input_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;
}

impl LiftedPredictor for SurrogateModel {
    fn lifted_dim(&self) -> usize {
        self.m_last() + 1
    }

    fn input_dim(&self) -> usize {
        self.b.len()
    }

    fn step(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let hat = z.rows(1, self.m_last());
        let mut next_hat = &self.a * hat;
        for i in 0..self.b.len() {
            if u[i] != 0.0 {
                next_hat += (&self.b[i] * z[0] + (&self.b_mats[i] - &self.a) * hat) * u[i];
            }
        }
        let mut out = DVector::zeros(z.len());
        out[0] = z[0];
        out.rows_mut(1, self.m_last()).copy_from(&next_hat);
        out
    }

    fn state_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.k_of_u(u).expect("input length checked by the caller")
    }

    fn input_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mm = self.m_last();
        let hat = z.rows(1, mm);
        let mut jac = DMatrix::zeros(mm + 1, self.b.len());
        for i in 0..self.b.len() {
            let col = &self.b[i] * z[0] + (&self.b_mats[i] - &self.a) * hat;
            jac.view_mut((1, i), (mm, 1)).copy_from(&col);
        }
        jac
    }
}
