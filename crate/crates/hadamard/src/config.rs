//! Run configuration: a TOML document naming the spacetime, the discretization, the
//! tolerances and the stages to execute.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{default_window, TimeGrid};
use crate::error::{Error, Result};
use crate::geometry::SpacetimeSpec;
use crate::microlocal::Sign;
use crate::riccati::RiccatiOptions;
use crate::scenarios;
use crate::states::{Samples, P_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Reduce,
    Powers,
    Riccati,
    Frame,
    Evolve,
    States,
    Microlocal,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Reduce,
        Stage::Powers,
        Stage::Riccati,
        Stage::Frame,
        Stage::Evolve,
        Stage::States,
        Stage::Microlocal,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Reduce => "reduce",
            Stage::Powers => "powers",
            Stage::Riccati => "riccati",
            Stage::Frame => "frame",
            Stage::Evolve => "evolve",
            Stage::States => "states",
            Stage::Microlocal => "microlocal",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage {s:?}")))
    }

    /// Parses a comma-separated list; "all" selects every stage.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        if s.trim() == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut out: Vec<Stage> = s.split(',').map(Stage::parse).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub evolution_rtol: f64,
    pub state: f64,
    pub limit: f64,
    pub riccati_residual: f64,
    pub symplectic: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { evolution_rtol: 1e-10, state: 1e-8, limit: 1e-6, riccati_residual: 1e-10, symplectic: 1e-6 }
    }
}

impl Tolerances {
    pub fn scaled(&self, s: f64) -> Self {
        Tolerances {
            evolution_rtol: self.evolution_rtol * s,
            state: self.state * s,
            limit: self.limit * s,
            riccati_residual: self.riccati_residual * s,
            symplectic: self.symplectic * s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    /// Random (t, s) pairs drawn in the grid span for the symplectic check.
    pub pairs: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig { pairs: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
}

impl Direction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "out" => Ok(Direction::Out),
            "in" => Ok(Direction::In),
            _ => Err(Error::InvalidConfig(format!("direction must be in or out, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatesConfig {
    pub reference_time: f64,
    /// Local grid spacing and Richardson levels for c_ref at the reference time.
    pub reference_dt: f64,
    pub reference_levels: usize,
    /// Same for the frames at the scattering sample times.
    pub sample_dt: f64,
    pub sample_levels: usize,
    pub samples: String,
    pub directions: Vec<Direction>,
    /// Shell window of the smoothing fits; defaults to [8, K/2].
    pub window: Option<(usize, usize)>,
    pub p_threshold: f64,
}

impl Default for StatesConfig {
    fn default() -> Self {
        StatesConfig {
            reference_time: 0.0,
            reference_dt: 0.1,
            reference_levels: 2,
            sample_dt: 0.2,
            sample_levels: 1,
            samples: "5:40:12".into(),
            directions: vec![Direction::Out, Direction::In],
            window: None,
            p_threshold: P_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicrolocalConfig {
    pub x0: f64,
    pub k0: f64,
    pub sigma: f64,
    pub sign: Sign,
    pub launch: f64,
    pub elapsed: f64,
    pub steps: usize,
}

impl Default for MicrolocalConfig {
    fn default() -> Self {
        MicrolocalConfig { x0: 1.0, k0: 8.0, sigma: 0.5, sign: Sign::Plus, launch: 0.0, elapsed: 4.0, steps: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub basis: BasisConfig,
    pub grid: TimeGrid,
    pub spacetime: SpacetimeSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub riccati: RiccatiOptions,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub states: StatesConfig,
    #[serde(default)]
    pub microlocal: MicrolocalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis.k < 8 {
            return Err(Error::InvalidConfig("basis.k must be at least 8 for the shell fits".into()));
        }
        TimeGrid::new(self.grid.t_min, self.grid.t_max, self.grid.n_nodes)?;
        if !(self.grid.t_min < 0.0 && self.grid.t_max > 0.0) {
            return Err(Error::InvalidConfig("grid must contain t = 0".into()));
        }
        self.spacetime.validate()?;
        Samples::parse(&self.states.samples)?;
        if let Some((lo, hi)) = self.states.window {
            if lo >= hi || hi > self.basis.k {
                return Err(Error::InvalidConfig(format!("states.window {:?} outside [0, K]", (lo, hi))));
            }
        }
        if self.states.reference_levels == 0 || self.states.sample_levels == 0 {
            return Err(Error::InvalidConfig("Richardson levels must be at least 1".into()));
        }
        if !(self.tolerances.evolution_rtol > 0.0) {
            return Err(Error::InvalidConfig("tolerances.evolution_rtol must be positive".into()));
        }
        Ok(())
    }

    /// Shell window of the smoothing fits.
    pub fn window(&self) -> (usize, usize) {
        self.states.window.unwrap_or_else(|| {
            let hi = self.basis.k / 2;
            if hi >= 12 {
                (8, hi)
            } else {
                default_window(self.basis.k)
            }
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// The built-in scenarios by name, with the grids used by the examples.
    pub fn preset(name: &str, k: usize) -> Result<Self> {
        let spacetime = match name {
            "ultrastatic" => scenarios::ultrastatic(),
            "s1_bump" => scenarios::s1_bump(0.3),
            "conformal_step" => scenarios::conformal_step(),
            _ => return Err(Error::InvalidConfig(format!("unknown preset {name:?}"))),
        };
        Ok(Config {
            name: name.into(),
            seed: 0,
            basis: BasisConfig { k },
            grid: TimeGrid::new(-10.0, 10.0, 201)?,
            spacetime,
            tolerances: Tolerances::default(),
            riccati: RiccatiOptions::default(),
            evolve: EvolveConfig::default(),
            states: StatesConfig::default(),
            microlocal: MicrolocalConfig::default(),
        })
    }
}
