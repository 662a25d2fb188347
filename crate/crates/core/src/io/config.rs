use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::harness::{
    Exp1Config, Exp2Config, Exp3Config, Exp4Config, GenericRankConfig, LinearityConfig,
    LnTrialsConfig, SimConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Sim,
    Angles,
    Linearity,
    GenericRank,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
            Experiment::Exp4 => "exp4",
            Experiment::Sim => "sim",
            Experiment::Angles => "angles",
            Experiment::Linearity => "linearity",
            Experiment::GenericRank => "generic-rank",
        };
        f.write_str(name)
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// A run file: the experiment to run plus one optional section per driver.
///
/// Unknown keys anywhere are errors; omitted keys take the driver defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub check_mode: bool,
    #[serde(default)]
    pub ln_trials: LnTrialsConfig,
    #[serde(default)]
    pub exp1: Exp1Config,
    #[serde(default)]
    pub exp2: Exp2Config,
    #[serde(default)]
    pub exp3: Exp3Config,
    #[serde(default)]
    pub exp4: Exp4Config,
    /// Shared by `sim` and `angles`.
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub linearity: LinearityConfig,
    #[serde(default)]
    pub generic_rank: GenericRankConfig,
}

impl RunConfig {
    /// All defaults for `experiment`.
    pub fn new(experiment: Experiment) -> Self {
        RunConfig {
            experiment,
            output_dir: default_output_dir(),
            check_mode: false,
            ln_trials: LnTrialsConfig::default(),
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            exp3: Exp3Config::default(),
            exp4: Exp4Config::default(),
            sim: SimConfig::default(),
            linearity: LinearityConfig::default(),
            generic_rank: GenericRankConfig::default(),
        }
    }

    /// Overrides the seed of every section used by the selected experiment.
    pub fn set_seed(&mut self, seed: u64) {
        match self.experiment {
            Experiment::Exp1 => {
                self.ln_trials.seed = seed;
                self.exp1.seed = seed;
            }
            Experiment::Exp2 => self.exp2.seed = seed,
            Experiment::Exp3 => self.exp3.seed = seed,
            Experiment::Exp4 => self.exp4.seed = seed,
            Experiment::Sim | Experiment::Angles => self.sim.seed = seed,
            Experiment::Linearity => self.linearity.seed = seed,
            Experiment::GenericRank => self.generic_rank.seed = seed,
        }
    }

    /// Overrides the rank threshold; errors for experiments that take none.
    pub fn set_rel_tol(&mut self, rel_tol: f64) -> Result<()> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(LabError::Config(format!("rel-tol must lie in (0, 1), got {rel_tol}")));
        }
        match self.experiment {
            Experiment::Exp1 => {
                self.ln_trials.rel_tol = rel_tol;
                self.exp1.rel_tol = rel_tol;
            }
            Experiment::Exp2 => self.exp2.rel_tol = rel_tol,
            Experiment::Exp4 => self.exp4.rel_tol = rel_tol,
            Experiment::Sim | Experiment::Angles => self.sim.rel_tol = rel_tol,
            Experiment::GenericRank => self.generic_rank.rel_tol = rel_tol,
            Experiment::Exp3 | Experiment::Linearity => {
                return Err(LabError::Config(format!("{} has no rank threshold", self.experiment)))
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(format!("serializing config: {e}")))
    }
}

/// Parses run-file text; `origin` prefixes error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| LabError::Config(format!("{origin}: {e}")))
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}
