use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::{ControlAffinePlant, SampledDynamics};
use crate::error::{Error, Result};
use crate::linalg::from_rows;
use crate::mpc::SolverOptions;
use crate::sets::BoxSet;
use crate::terminal::SynthesisOptions;

/// Plant registry entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PlantConfig {
    Pendulum { b: f64, l: f64, m: f64, g: f64 },
    /// Continuous-time `ẋ = A x + B u`, matrices given row by row.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

impl PlantConfig {
    pub fn build(&self) -> Result<ControlAffinePlant> {
        match self {
            PlantConfig::Pendulum { b, l, m, g } => ControlAffinePlant::pendulum(*b, *l, *m, *g),
            PlantConfig::Linear { a, b } => ControlAffinePlant::linear(from_rows(a)?, from_rows(b)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    SafedmdMpc,
    DualMode,
    Lmpc,
    TerminalOnly,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::SafedmdMpc,
        ControllerKind::DualMode,
        ControllerKind::Lmpc,
        ControllerKind::TerminalOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::SafedmdMpc => "safedmd-mpc",
            ControllerKind::DualMode => "dual-mode",
            ControllerKind::Lmpc => "lmpc",
            ControllerKind::TerminalOnly => "terminal-only",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}`")))
    }
}

fn yes() -> bool {
    true
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_n_validation() -> usize {
    10_000
}

fn default_substeps() -> usize {
    10
}

/// Everything one experiment needs; outputs are a pure function of this and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub dictionary: String,
    pub x_box: BoxSet,
    pub u_box: BoxSet,
    /// Samples per constant input.
    pub d: usize,
    pub dt: f64,
    pub seed: u64,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub horizon: usize,
    pub controller: ControllerKind,
    /// Simulated seconds.
    pub t_final: f64,
    pub x0: Vec<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "yes")]
    pub tightening: bool,
    /// Off by default so that traces are reproducible byte for byte.
    #[serde(default)]
    pub record_solve_time: bool,
    #[serde(default = "default_n_validation")]
    pub n_validation: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ExperimentConfig {
    /// Pendulum benchmark: `b = 0.5`, `l = m = 1`, `g = 9.81`, `X = [−15, 15]²`,
    /// `U = [−25, 25]`, 6000 samples per input at `dt = 0.01`, `Q = I`, `R = 0.1 I`,
    /// `N = 110`, 20 s from `(3, −4)`.
    pub fn pendulum_benchmark() -> Self {
        Self {
            plant: PlantConfig::Pendulum {
                b: 0.5,
                l: 1.0,
                m: 1.0,
                g: 9.81,
            },
            dictionary: "pendulum-sin".into(),
            x_box: BoxSet::symmetric(2, 15.0),
            u_box: BoxSet::symmetric(1, 25.0),
            d: 6000,
            dt: 0.01,
            seed: 0,
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![0.1]],
            horizon: 110,
            controller: ControllerKind::SafedmdMpc,
            t_final: 20.0,
            x0: vec![3.0, -4.0],
            out_dir: default_out_dir(),
            // the per-step margins exceed the box after a handful of steps at this ε
            tightening: false,
            record_solve_time: false,
            n_validation: default_n_validation(),
            substeps: default_substeps(),
            synthesis: SynthesisOptions::default(),
            solver: SolverOptions::default(),
        }
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let plant = self.plant.build()?;
        let (n, m) = (plant.state_dim(), plant.input_dim());
        if self.x_box.dim() != n || self.u_box.dim() != m || self.x0.len() != n {
            return Err(Error::Config(format!(
                "plant has n = {n}, m = {m}; X, U and x0 have {}, {}, {}",
                self.x_box.dim(),
                self.u_box.dim(),
                self.x0.len()
            )));
        }
        Dictionary::by_name(&self.dictionary, n)?;
        if self.d == 0 || self.n_validation == 0 || self.substeps == 0 {
            return Err(Error::Config("d, n_validation and substeps must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.horizon as f64 * self.dt > self.t_final {
            return Err(Error::Config(format!(
                "horizon {} · dt {} exceeds T_final {}",
                self.horizon, self.dt, self.t_final
            )));
        }
        if !self.x_box.contains(&DVector::from_column_slice(&self.x0)) {
            return Err(Error::Config(format!("x0 = {:?} lies outside X", self.x0)));
        }
        let (q, r) = self.weights()?;
        if q.shape() != (n, n) || r.shape() != (m, m) {
            return Err(Error::Config("Q must be n×n and R m×m".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((from_rows(&self.q)?, from_rows(&self.r)?))
    }

    pub fn sampled_dynamics(&self) -> Result<SampledDynamics> {
        SampledDynamics::new(self.plant.build()?, self.dt, self.substeps)
    }

    /// Closed-loop steps `k` with `k·dt < T_final`.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.dt) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_is_valid() {
        let cfg = ExperimentConfig::pendulum_benchmark();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_steps(), 2000);
    }

    #[test]
    fn long_horizon_rejected() {
        let mut cfg = ExperimentConfig::pendulum_benchmark();
        cfg.t_final = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn x0_outside_rejected() {
        let mut cfg = ExperimentConfig::pendulum_benchmark();
        cfg.x0 = vec![16.0, 0.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_and_toml_agree() {
        let cfg = ExperimentConfig::pendulum_benchmark();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn controller_names_round_trip() {
        for c in ControllerKind::ALL {
            assert_eq!(c.as_str().parse::<ControllerKind>().unwrap(), c);
        }
    }
}
