//! Observable dictionaries `Φ(x) = (1, x1, …, xn, ψ_{n+1}(x), …, ψ_M(x))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sets::BoxSet;

pub type ObservableFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A scalar observable with an optional analytic gradient.
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: ObservableFn,
    grad: Option<GradientFn>,
}

impl Observable {
    pub fn new(name: impl Into<String>, eval: ObservableFn) -> Self {
        Self {
            name: name.into(),
            eval,
            grad: None,
        }
    }

    pub fn with_gradient(mut self, grad: GradientFn) -> Self {
        self.grad = Some(grad);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (self.eval)(x)
    }

    /// Analytic gradient when available, central differences otherwise.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        if let Some(g) = &self.grad {
            return g(x);
        }
        let mut g = DVector::zeros(x.len());
        let mut probe = x.clone();
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let fp = self.eval(&probe);
            probe[i] = x[i] - h;
            let fm = self.eval(&probe);
            probe[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }
}

/// Full lift `z = Φ(x)` together with the reduced lift `Φ̂(x)` (constant entry dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVec {
    pub z: DVector<f64>,
    pub hat: DVector<f64>,
}

/// Ordered dictionary with the constant and coordinate observables in front.
#[derive(Clone)]
pub struct Dictionary {
    name: String,
    n: usize,
    extra: Vec<Observable>,
}

impl fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dictionary")
            .field("name", &self.name)
            .field("observables", &self.names())
            .finish()
    }
}

impl Dictionary {
    /// Builds `(1, x1, …, xn, extra…)`; every extra observable must vanish at the origin.
    pub fn new(name: impl Into<String>, n: usize, extra: Vec<Observable>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        let origin = DVector::zeros(n);
        for obs in &extra {
            let v = obs.eval(&origin);
            if !(v.abs() <= 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "observable `{}` does not vanish at the origin ({v:e})",
                    obs.name
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            n,
            extra,
        })
    }

    /// `(1, x1, …, xn)`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new("identity", n, Vec::new())
    }

    /// `(1, x1, x2, sin x1)`.
    pub fn pendulum_sin() -> Self {
        let sin = Observable::new("sin(x1)", Arc::new(|x: &DVector<f64>| x[0].sin()))
            .with_gradient(Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![x[0].cos(), 0.0])));
        Self::new("pendulum-sin", 2, vec![sin]).expect("sin vanishes at 0")
    }

    /// `(1, x1, x2, sin x1, x2 cos x1)`.
    pub fn pendulum_extended() -> Self {
        let mut dict = Self::pendulum_sin();
        dict.name = "pendulum-ext".into();
        dict.extra.push(
            Observable::new("x2*cos(x1)", Arc::new(|x: &DVector<f64>| x[1] * x[0].cos())).with_gradient(
                Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![-x[1] * x[0].sin(), x[0].cos()])),
            ),
        );
        dict
    }

    /// Built-in dictionaries by registry name.
    pub fn by_name(name: &str, n: usize) -> Result<Self> {
        match name {
            "identity" => Self::identity(n),
            "pendulum-sin" if n == 2 => Ok(Self::pendulum_sin()),
            "pendulum-ext" if n == 2 => Ok(Self::pendulum_extended()),
            _ => Err(Error::Config(format!(
                "unknown dictionary `{name}` for state dimension {n}"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Index `M` of the last observable; the full lift has `M + 1` entries.
    pub fn m_last(&self) -> usize {
        self.n + self.extra.len()
    }

    pub fn lifted_dim(&self) -> usize {
        self.m_last() + 1
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["1".to_string()];
        names.extend((1..=self.n).map(|i| format!("x{i}")));
        names.extend(self.extra.iter().map(|o| o.name.clone()));
        names
    }

    /// Reduced lift `Φ̂(x)` of length `M`.
    pub fn lift_hat(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionError(format!(
                "state of length {} for a dictionary over R^{}",
                x.len(),
                self.n
            )));
        }
        let mut hat = DVector::zeros(self.m_last());
        hat.rows_mut(0, self.n).copy_from(x);
        for (k, obs) in self.extra.iter().enumerate() {
            let v = obs.eval(x);
            if !v.is_finite() {
                return Err(Error::LiftFailed {
                    name: obs.name.clone(),
                });
            }
            hat[self.n + k] = v;
        }
        if let Some(i) = (0..self.n).find(|&i| !x[i].is_finite()) {
            return Err(Error::LiftFailed {
                name: format!("x{}", i + 1),
            });
        }
        Ok(hat)
    }

    /// Full lift `Φ(x)` of length `M + 1`.
    pub fn lift_full(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let hat = self.lift_hat(x)?;
        let mut z = DVector::zeros(hat.len() + 1);
        z[0] = 1.0;
        z.rows_mut(1, hat.len()).copy_from(&hat);
        Ok(z)
    }

    pub fn lift(&self, x: &DVector<f64>) -> Result<LiftedVec> {
        let hat = self.lift_hat(x)?;
        let mut z = DVector::zeros(hat.len() + 1);
        z[0] = 1.0;
        z.rows_mut(1, hat.len()).copy_from(&hat);
        Ok(LiftedVec { z, hat })
    }

    /// Coordinate block `x = [0_n I_n 0] z` of a full lifted vector.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.lifted_dim() {
            return Err(Error::DimensionError(format!(
                "lifted vector of length {}, expected {}",
                z.len(),
                self.lifted_dim()
            )));
        }
        Ok(z.rows(1, self.n).into_owned())
    }

    /// Jacobian `∂Φ̂/∂x` (`M × n`).
    pub fn jacobian_hat(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.m_last(), self.n);
        for i in 0..self.n {
            jac[(i, i)] = 1.0;
        }
        for (k, obs) in self.extra.iter().enumerate() {
            let g = obs.gradient(x);
            for j in 0..self.n {
                jac[(self.n + k, j)] = g[j];
            }
        }
        jac
    }

    /// Empirical constant `L_Φ` with `|x| ≤ |Φ(x) − Φ(0)| ≤ L_Φ |x|` on a grid of `x_box`,
    /// inflated by 5%.
    pub fn estimate_l_phi(&self, x_box: &BoxSet, grid_density: usize) -> Result<f64> {
        Ok(self.lift_ratio_supremum(x_box, grid_density)? * Self::L_PHI_INFLATION)
    }

    pub const L_PHI_INFLATION: f64 = 1.05;

    /// Grid supremum of `|Φ(x) − Φ(0)| / |x|` without inflation.
    pub fn lift_ratio_supremum(&self, x_box: &BoxSet, grid_density: usize) -> Result<f64> {
        if x_box.dim() != self.n {
            return Err(Error::DimensionError("box dimension differs from dictionary".into()));
        }
        let mut sup: f64 = 1.0;
        for x in x_box.grid(grid_density) {
            let xn = x.norm();
            if xn < 1e-8 {
                continue;
            }
            // Φ(0) = e_0, so Φ(x) − Φ(0) = (0, Φ̂(x))
            let ln = self.lift_hat(&x)?.norm();
            if ln < xn * (1.0 - 1e-12) {
                return Err(Error::DictionaryNotNormBounding {
                    x_norm: xn,
                    lift_norm: ln,
                });
            }
            sup = sup.max(ln / xn);
        }
        Ok(sup)
    }

    /// Largest `|Φ̂(x)|` over a grid of the box.
    pub fn max_hat_norm(&self, x_box: &BoxSet, grid_density: usize) -> Result<f64> {
        let mut best: f64 = 0.0;
        for x in x_box.grid(grid_density) {
            best = best.max(self.lift_hat(&x)?.norm());
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn lift_at_origin() {
        let d = Dictionary::pendulum_sin();
        let l = d.lift(&DVector::zeros(2)).unwrap();
        assert_eq!(l.z.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(l.hat, DVector::zeros(3));
    }

    #[test]
    fn lift_by_hand() {
        let d = Dictionary::pendulum_sin();
        let l = d.lift(&DVector::from_vec(vec![FRAC_PI_2, 2.0])).unwrap();
        assert_abs_diff_eq!(l.z[0], 1.0);
        assert_abs_diff_eq!(l.z[1], FRAC_PI_2);
        assert_abs_diff_eq!(l.z[2], 2.0);
        assert_abs_diff_eq!(l.z[3], 1.0, epsilon = 1e-15);
        assert_eq!(l.hat.as_slice(), &l.z.as_slice()[1..]);
    }

    #[test]
    fn project_selects_coordinates() {
        let d = Dictionary::pendulum_sin();
        let z = DVector::from_vec(vec![1.0, 3.0, -2.0, 0.7]);
        assert_eq!(d.project(&z).unwrap().as_slice(), &[3.0, -2.0]);
        assert!(matches!(d.project(&DVector::zeros(3)), Err(Error::DimensionError(_))));
    }

    #[test]
    fn lift_failure_is_reported() {
        let bad = Observable::new("log", Arc::new(|x: &DVector<f64>| if x[0] == 0.0 { 0.0 } else { x[0].ln() }));
        let d = Dictionary::new("bad", 1, vec![bad]).unwrap();
        assert!(matches!(
            d.lift(&DVector::from_element(1, -1.0)),
            Err(Error::LiftFailed { .. })
        ));
    }

    #[test]
    fn extra_observables_must_vanish() {
        let cos = Observable::new("cos", Arc::new(|x: &DVector<f64>| x[0].cos()));
        assert!(Dictionary::new("cos", 1, vec![cos]).is_err());
    }

    #[test]
    fn identity_l_phi() {
        let d = Dictionary::identity(2).unwrap();
        let l = d.estimate_l_phi(&BoxSet::symmetric(2, 3.0), 21).unwrap();
        assert_abs_diff_eq!(l, 1.05, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let d = Dictionary::pendulum_extended();
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let analytic = d.jacobian_hat(&x);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let col = (d.lift_hat(&xp).unwrap() - d.lift_hat(&xm).unwrap()) / (2.0 * h);
            for i in 0..4 {
                assert_abs_diff_eq!(analytic[(i, j)], col[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn registry_names() {
        assert_eq!(Dictionary::by_name("pendulum-ext", 2).unwrap().lifted_dim(), 5);
        assert!(Dictionary::by_name("pendulum-sin", 3).is_err());
        assert_eq!(
            Dictionary::pendulum_sin().names(),
            vec!["1", "x1", "x2", "sin(x1)"]
        );
    }
}
