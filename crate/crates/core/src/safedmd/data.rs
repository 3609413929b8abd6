use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::SampledDynamics;
use crate::error::{Error, Result};
use crate::sets::BoxSet;

use super::rng_for;

const STREAM_STATES: u64 = 0;

/// Constant input under which a data set was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InputTag {
    Zero,
    /// `e_i` with 1-based channel index.
    Unit(usize),
}

impl InputTag {
    pub fn input(&self, m: usize) -> Result<DVector<f64>> {
        let mut u = DVector::zeros(m);
        if let InputTag::Unit(i) = *self {
            if i == 0 || i > m {
                return Err(Error::InvalidParameter(format!("unit input e_{i} with m = {m}")));
            }
            u[i - 1] = 1.0;
        }
        Ok(u)
    }
}

impl fmt::Display for InputTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputTag::Zero => write!(f, "zero"),
            InputTag::Unit(i) => write!(f, "unit{i}"),
        }
    }
}

impl FromStr for InputTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "zero" {
            return Ok(InputTag::Zero);
        }
        s.strip_prefix("unit")
            .and_then(|i| i.parse().ok())
            .filter(|i| *i > 0)
            .map(InputTag::Unit)
            .ok_or_else(|| Error::Config(format!("unknown input tag `{s}`")))
    }
}

impl TryFrom<String> for InputTag {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InputTag> for String {
    fn from(t: InputTag) -> String {
        t.to_string()
    }
}

/// Lifted snapshot pairs recorded under one constant input.
///
/// For [`InputTag::Zero`] the regressor `x` holds `Φ̂` (the constant row is stripped); for
/// unit inputs it holds the full `Φ`. The targets `y` always hold `Φ̂` of the successors.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub input_tag: InputTag,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub dt: f64,
    pub dict_name: String,
    /// Draws rejected because the flow or the lift diverged.
    pub discarded: usize,
}

impl DataSet {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// Writes the data set as CSV: a `#` metadata line, a header naming the observables,
    /// and one row per sample with the regressor block followed by the target block.
    pub fn write_csv<W: Write>(&self, dict: &Dictionary, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# input={} dt={} dict={} discarded={}",
            self.input_tag, self.dt, self.dict_name, self.discarded
        )?;
        let names = dict.names();
        let x_names: &[String] = match self.input_tag {
            InputTag::Zero => &names[1..],
            InputTag::Unit(_) => &names[..],
        };
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = x_names
            .iter()
            .map(|n| format!("X:{n}"))
            .chain(names[1..].iter().map(|n| format!("Y:{n}")))
            .collect();
        w.write_record(&header)?;
        for j in 0..self.len() {
            let row: Vec<String> = self
                .x
                .column(j)
                .iter()
                .chain(self.y.column(j).iter())
                .map(|v| format!("{v:e}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let (meta_line, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Config("empty data file".into()))?;
        let meta = meta_line
            .strip_prefix('#')
            .ok_or_else(|| Error::Config("missing metadata line".into()))?;
        let mut tag = None;
        let mut dt = None;
        let mut dict_name = None;
        let mut discarded = 0;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("input", v)) => tag = Some(v.parse::<InputTag>()?),
                Some(("dt", v)) => dt = v.parse::<f64>().ok(),
                Some(("dict", v)) => dict_name = Some(v.to_string()),
                Some(("discarded", v)) => discarded = v.parse().unwrap_or(0),
                _ => {}
            }
        }
        let (input_tag, dt, dict_name) = match (tag, dt, dict_name) {
            (Some(t), Some(d), Some(n)) => (t, d, n),
            _ => return Err(Error::Config(format!("incomplete metadata `{meta_line}`"))),
        };
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header = rdr.headers()?.clone();
        let x_rows = header.iter().filter(|h| h.starts_with("X:")).count();
        let y_rows = header.iter().filter(|h| h.starts_with("Y:")).count();
        let mut cols = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::Config(format!("bad number in data file: {e}")))?;
            if vals.len() != x_rows + y_rows {
                return Err(Error::DimensionError("data row length differs from header".into()));
            }
            cols.push(vals);
        }
        let d = cols.len();
        let x = DMatrix::from_fn(x_rows, d, |i, j| cols[j][i]);
        let y = DMatrix::from_fn(y_rows, d, |i, j| cols[j][x_rows + i]);
        Ok(Self {
            input_tag,
            x,
            y,
            dt,
            dict_name,
            discarded,
        })
    }
}

/// Draws `d` states uniformly from `x_box`, advances each one sampling period under the
/// constant input `tag`, and assembles the lifted regression matrices.
///
/// The state draws depend on `seed` only, so every input tag sees the same states and the
/// fitted input directions `K_{e_i} − K_0` are not swamped by sampling noise.
pub fn sample_data(
    sd: &SampledDynamics,
    dict: &Dictionary,
    x_box: &BoxSet,
    tag: InputTag,
    d: usize,
    seed: u64,
) -> Result<DataSet> {
    if d == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    if x_box.dim() != sd.state_dim() || dict.state_dim() != sd.state_dim() {
        return Err(Error::DimensionError("box, dictionary and plant dimensions differ".into()));
    }
    let u = tag.input(sd.input_dim())?;
    let mut rng = rng_for(seed, STREAM_STATES);
    let max_discards = d / 10;
    let m_last = dict.m_last();
    let x_rows = match tag {
        InputTag::Zero => m_last,
        InputTag::Unit(_) => m_last + 1,
    };
    let mut x = DMatrix::zeros(x_rows, d);
    let mut y = DMatrix::zeros(m_last, d);
    let mut discarded = 0;
    let mut j = 0;
    while j < d {
        let state = x_box.sample(&mut rng);
        let pair = sd
            .flow(&state, &u)
            .and_then(|next| Ok((dict.lift(&state)?, dict.lift_hat(&next)?)));
        match pair {
            Ok((lifted, next_hat)) => {
                match tag {
                    InputTag::Zero => x.set_column(j, &lifted.hat),
                    InputTag::Unit(_) => x.set_column(j, &lifted.z),
                }
                y.set_column(j, &next_hat);
                j += 1;
            }
            Err(Error::IntegrationDiverged) | Err(Error::LiftFailed { .. }) => {
                discarded += 1;
                if discarded > max_discards {
                    return Err(Error::SamplingFailed {
                        discarded,
                        requested: d,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DataSet {
        input_tag: tag,
        x,
        y,
        dt: sd.dt(),
        dict_name: dict.name().to_string(),
        discarded,
    })
}
