use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `{x : lo ≤ x ≤ hi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionError(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::InvalidParameter(format!("invalid box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// `[-r, r]^dim`.
    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self {
            lo: vec![-radius; dim],
            hi: vec![radius; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_tol(x, 0.0)
    }

    pub fn contains_tol(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    /// True when the origin is strictly inside the box.
    pub fn contains_origin_interior(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| *l < 0.0 && *h > 0.0)
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    /// Shrinks every side by `margin` (the Pontryagin difference of the box and a ball of that radius).
    pub fn shrink(&self, margin: f64) -> Option<BoxSet> {
        if self.half_widths().iter().any(|w| margin > *w) {
            return None;
        }
        Some(BoxSet {
            lo: self.lo.iter().map(|l| l + margin).collect(),
            hi: self.hi.iter().map(|h| h - margin).collect(),
        })
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(v, (l, h))| v.clamp(*l, *h)),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| if l < h { rng.random_range(*l..=*h) } else { *l }),
        )
    }

    /// All `2^dim` corners.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
            })
            .collect()
    }

    /// Corners plus face centres, the points where residuals typically peak.
    pub fn boundary_points(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        let center: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let mut pts = self.vertices();
        for i in 0..n {
            for bound in [self.lo[i], self.hi[i]] {
                let mut c = center.clone();
                c[i] = bound;
                pts.push(DVector::from_vec(c));
            }
        }
        pts
    }

    /// Largest Euclidean norm attained on the box.
    pub fn max_norm(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Regular grid with `per_axis` points along every coordinate.
    pub fn grid(&self, per_axis: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        let per_axis = per_axis.max(2);
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                DVector::from_fn(n, |i, _| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (per_axis - 1) as f64
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_by_margin() {
        let b = BoxSet::symmetric(2, 15.0);
        let s = b.shrink(0.3).unwrap();
        assert_eq!(s.hi, vec![14.7, 14.7]);
        assert!(b.shrink(15.1).is_none());
    }

    #[test]
    fn grid_covers_corners() {
        let b = BoxSet::symmetric(2, 1.0);
        let g = b.grid(3);
        assert_eq!(g.len(), 9);
        assert!(g.iter().any(|p| p[0] == -1.0 && p[1] == 1.0));
    }

    #[test]
    fn vertices_and_boundary() {
        let b = BoxSet::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.vertices().len(), 4);
        assert_eq!(b.boundary_points().len(), 8);
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
    }
}
