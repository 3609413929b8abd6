use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, is_finite_vec, lstsq_right, numerical_rank, to_rows};

use super::data::{DataSet, InputTag};

/// Regression diagnostics recorded at fit time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    /// Samples per data set, zero-input set first.
    pub samples: Vec<usize>,
    /// `‖Y − Θ X‖_F / d` for each data set.
    pub residual_per_sample: Vec<f64>,
    /// `sqrt(‖Y − Θ X‖_F² / d)` for each data set.
    pub residual_rms: Vec<f64>,
    pub rank_deficient: bool,
    pub warnings: Vec<String>,
}

/// Bilinear surrogate `K_u = K_0 + Σ u_i (K_e_i − K_0)` on the full lift.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub a: DMatrix<f64>,
    pub b: Vec<DVector<f64>>,
    pub b_mats: Vec<DMatrix<f64>>,
    pub dt: f64,
    pub dict_name: String,
    pub meta: FitMeta,
}

/// Projected and lifted rollout of the surrogate, index 0 holding the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub states: Vec<DVector<f64>>,
    pub lifted: Vec<DVector<f64>>,
}

/// Solves the structured regressions for `A` and `[b_i B_i]`.
pub fn fit(data_zero: &DataSet, data_units: &[DataSet]) -> Result<SurrogateModel> {
    if data_zero.input_tag != InputTag::Zero {
        return Err(Error::InvalidParameter(format!(
            "first data set must be recorded with zero input, got {}",
            data_zero.input_tag
        )));
    }
    if data_units.is_empty() {
        return Err(Error::InvalidParameter("at least one unit-input data set is required".into()));
    }
    let m_last = data_zero.y.nrows();
    if data_zero.x.nrows() != m_last {
        return Err(Error::DimensionError("zero-input regressor must have M rows".into()));
    }
    let mut meta = FitMeta::default();

    let mut regress = |ds: &DataSet, unknowns: usize| -> Result<DMatrix<f64>> {
        let d = ds.len();
        if d < unknowns {
            let msg = format!(
                "{}: {d} samples for {unknowns} unknowns per row, returning the minimum-norm solution",
                ds.input_tag
            );
            log::warn!("insufficient data: {msg}");
            meta.warnings.push(msg);
        }
        if numerical_rank(&ds.x) < ds.x.nrows() {
            meta.rank_deficient = true;
        }
        let theta = lstsq_right(&ds.x, &ds.y)?;
        let resid = (&ds.y - &theta * &ds.x).norm();
        meta.samples.push(d);
        meta.residual_per_sample.push(resid / d as f64);
        meta.residual_rms.push(resid / (d as f64).sqrt());
        Ok(theta)
    };

    let a = regress(data_zero, m_last)?;
    let mut b = Vec::with_capacity(data_units.len());
    let mut b_mats = Vec::with_capacity(data_units.len());
    for (i, ds) in data_units.iter().enumerate() {
        if ds.input_tag != InputTag::Unit(i + 1) {
            return Err(Error::InvalidParameter(format!(
                "data set {i} has tag {}, expected unit{}",
                ds.input_tag,
                i + 1
            )));
        }
        if ds.dt != data_zero.dt || ds.dict_name != data_zero.dict_name {
            return Err(Error::InvalidParameter(
                "all data sets must share the sampling period and dictionary".into(),
            ));
        }
        if ds.x.nrows() != m_last + 1 || ds.y.nrows() != m_last {
            return Err(Error::DimensionError("unit-input regressor must have M + 1 rows".into()));
        }
        let theta = regress(ds, m_last + 1)?;
        b.push(theta.column(0).into_owned());
        b_mats.push(theta.columns(1, m_last).into_owned());
    }
    let model = SurrogateModel {
        a,
        b,
        b_mats,
        dt: data_zero.dt,
        dict_name: data_zero.dict_name.clone(),
        meta,
    };
    if model.a.iter().chain(model.b_mats.iter().flat_map(|m| m.iter())).any(|v| !v.is_finite()) {
        return Err(Error::FitFailed("non-finite surrogate coefficients".into()));
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dt: f64,
    dict_name: String,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    b_mats: Vec<Vec<Vec<f64>>>,
    meta: FitMeta,
}

impl SurrogateModel {
    /// `M`, the reduced lifted dimension.
    pub fn m_last(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.len()
    }

    /// Full `(M+1) × (M+1)` zero-input operator.
    pub fn k0(&self) -> DMatrix<f64> {
        let mm = self.m_last();
        let mut k = DMatrix::zeros(mm + 1, mm + 1);
        k[(0, 0)] = 1.0;
        k.view_mut((1, 1), (mm, mm)).copy_from(&self.a);
        k
    }

    /// `K_e_i − K_0` for channel `i` (0-based); its first row is zero.
    pub fn input_direction(&self, i: usize) -> DMatrix<f64> {
        let mm = self.m_last();
        let mut e = DMatrix::zeros(mm + 1, mm + 1);
        e.view_mut((1, 0), (mm, 1)).copy_from(&self.b[i]);
        e.view_mut((1, 1), (mm, mm)).copy_from(&(&self.b_mats[i] - &self.a));
        e
    }

    /// `K_u`, assembled in block form.
    pub fn k_of_u(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        if u.len() != self.input_dim() {
            return Err(Error::DimensionError(format!(
                "input of length {} for a model with m = {}",
                u.len(),
                self.input_dim()
            )));
        }
        let mm = self.m_last();
        let mut k = DMatrix::zeros(mm + 1, mm + 1);
        k[(0, 0)] = 1.0;
        let mut lower_right = self.a.clone();
        let mut first_col = DVector::zeros(mm);
        for i in 0..self.input_dim() {
            lower_right += (&self.b_mats[i] - &self.a) * u[i];
            first_col += &self.b[i] * u[i];
        }
        k.view_mut((1, 0), (mm, 1)).copy_from(&first_col);
        k.view_mut((1, 1), (mm, mm)).copy_from(&lower_right);
        Ok(k)
    }

    /// `κ`-step rollout `z_κ = K_{u_{κ−1}} z_{κ−1}` from `z_0 = Φ(x0)`.
    pub fn predict_k(
        &self,
        dict: &Dictionary,
        x0: &DVector<f64>,
        u_seq: &[DVector<f64>],
    ) -> Result<Prediction> {
        if u_seq.is_empty() {
            return Err(Error::InvalidParameter("input sequence must be non-empty".into()));
        }
        if dict.m_last() != self.m_last() {
            return Err(Error::DimensionError("dictionary does not match model".into()));
        }
        let mut z = dict.lift_full(x0)?;
        let mut lifted = Vec::with_capacity(u_seq.len() + 1);
        let mut states = Vec::with_capacity(u_seq.len() + 1);
        states.push(dict.project(&z)?);
        lifted.push(z.clone());
        for (k, u) in u_seq.iter().enumerate() {
            z = self.k_of_u(u)? * z;
            if !is_finite_vec(&z) {
                return Err(Error::PredictionDiverged { step: k + 1 });
            }
            states.push(dict.project(&z)?);
            lifted.push(z.clone());
        }
        Ok(Prediction { states, lifted })
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = ModelFile {
            dt: self.dt,
            dict_name: self.dict_name.clone(),
            a: to_rows(&self.a),
            b: self.b.iter().map(|v| v.as_slice().to_vec()).collect(),
            b_mats: self.b_mats.iter().map(to_rows).collect(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(input)?;
        let a = from_rows(&file.a)?;
        let b_mats = file.b_mats.iter().map(|m| from_rows(m)).collect::<Result<Vec<_>>>()?;
        let b: Vec<DVector<f64>> = file.b.into_iter().map(DVector::from_vec).collect();
        let mm = a.nrows();
        if !a.is_square()
            || b.len() != b_mats.len()
            || b.iter().any(|v| v.len() != mm)
            || b_mats.iter().any(|m| m.shape() != (mm, mm))
        {
            return Err(Error::DimensionError("inconsistent model file".into()));
        }
        Ok(Self {
            a,
            b,
            b_mats,
            dt: file.dt,
            dict_name: file.dict_name,
            meta: file.meta,
        })
    }
}
