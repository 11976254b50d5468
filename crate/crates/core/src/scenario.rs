//! Scenario files: geometry, formula, initial set, dynamics and training
//! settings in one TOML document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{BarrierNet, ControllerError};
use crate::dynamics::Dynamics;
use crate::hocbf::SynthOptions;
use crate::sim::{InitBox, TrainConfig};
use crate::stl::{parse, Formula, PredicateShape, StlError};

pub const SCENARIO_SCHEMA: &str = "stlcbf-scenario/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("in formula `{formula}`: {source}")]
    Formula { formula: String, source: StlError },
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Which form of the HOCBF inequality the QP layer enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowForm {
    /// Exact for the Euler-discretized plant at the sampling instants.
    #[default]
    Sampled,
    /// Continuous-time Lie-derivative rows.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synth {
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub release_mixed: bool,
    #[serde(default = "default_p_floor")]
    pub p_floor: f64,
    #[serde(default)]
    pub rows: RowForm,
}

fn default_c() -> f64 {
    SynthOptions::default().c
}
fn default_eps() -> f64 {
    SynthOptions::default().eps
}
fn default_kappa() -> f64 {
    SynthOptions::default().kappa
}
fn default_p_floor() -> f64 {
    SynthOptions::default().p_floor
}

impl Default for Synth {
    fn default() -> Self {
        let o = SynthOptions::default();
        Synth {
            c: o.c,
            eps: o.eps,
            kappa: o.kappa,
            release_mixed: o.release_mixed,
            p_floor: o.p_floor,
            rows: RowForm::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub hidden: Vec<usize>,
}

impl Default for Network {
    fn default() -> Self {
        Network {
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    pub formula: String,
    pub dynamics: Dynamics,
    pub init: InitBox,
    pub shapes: BTreeMap<String, PredicateShape>,
    #[serde(default)]
    pub synth: Synth,
    #[serde(default)]
    pub network: Network,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

fn default_output() -> String {
    "runs".to_string()
}

/// Parts of a scenario that determine the meaning of trained parameters.
#[derive(Serialize)]
struct Identity<'a> {
    schema: &'a str,
    formula: &'a str,
    dynamics: Dynamics,
    init: &'a InitBox,
    shapes: &'a BTreeMap<String, PredicateShape>,
    synth: &'a Synth,
    network: &'a Network,
    dt: f64,
    beta: f64,
    cost_coeff: f64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.schema != SCENARIO_SCHEMA {
            return bad(format!(
                "schema must be `{SCENARIO_SCHEMA}`, got `{}`",
                self.schema
            ));
        }
        for i in 0..2 {
            if !(self.init.min[i] <= self.init.max[i]) {
                return bad("init box is empty".into());
            }
        }
        for (name, s) in &self.shapes {
            s.validate()
                .map_err(|e| ScenarioError::Invalid(format!("shape `{name}`: {e}")))?;
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return bad("network.hidden must list positive widths".into());
        }
        if !(self.synth.eps > 0.0 && self.synth.c > self.synth.eps && self.synth.kappa > 0.0) {
            return bad("synth requires 0 < eps < c and kappa > 0".into());
        }
        if !(self.synth.p_floor >= 0.0 && self.synth.p_floor.is_finite()) {
            return bad("synth.p_floor must be finite and nonnegative".into());
        }
        self.train
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.parse_formula()?;
        Ok(())
    }

    pub fn parse_formula(&self) -> Result<Formula, ScenarioError> {
        parse(&self.formula, &self.shapes).map_err(|source| ScenarioError::Formula {
            formula: self.formula.clone(),
            source,
        })
    }

    /// Reference initial state used to fix predicate categories.
    pub fn reference_state(&self) -> Vec<f64> {
        self.init
            .state(self.init.center(), self.dynamics.state_dim())
    }

    pub fn synth_options(&self) -> SynthOptions {
        let s = &self.synth;
        SynthOptions {
            c: s.c,
            eps: s.eps,
            kappa: s.kappa,
            release_mixed: s.release_mixed,
            p_floor: s.p_floor,
            sample_dt: (s.rows == RowForm::Sampled).then_some(self.train.dt),
        }
    }

    pub fn build(&self) -> Result<BarrierNet, ScenarioError> {
        let f = self.parse_formula()?;
        Ok(BarrierNet::new(
            f,
            self.dynamics,
            &self.reference_state(),
            &self.synth_options(),
            &self.network.hidden,
        )?)
    }

    /// SHA-256 over the fields that give trained parameters their meaning.
    pub fn hash(&self) -> String {
        let id = Identity {
            schema: &self.schema,
            formula: &self.formula,
            dynamics: self.dynamics,
            init: &self.init,
            shapes: &self.shapes,
            synth: &self.synth,
            network: &self.network,
            dt: self.train.dt,
            beta: self.train.beta,
            cost_coeff: self.train.cost_coeff,
        };
        let bytes = serde_json::to_vec(&id).expect("identity serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The built-in two-region, two-obstacle task.
    pub fn reference() -> Self {
        Self::from_toml(REFERENCE_TOML).expect("built-in scenario is valid")
    }
}

pub const REFERENCE_TOML: &str = include_str!("../../../configs/reference.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips() {
        let c = ScenarioConfig::reference();
        let again = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
    }

    #[test]
    fn hash_ignores_training_schedule() {
        let a = ScenarioConfig::reference();
        let mut b = a.clone();
        b.train.iterations += 1;
        b.train.seed += 1;
        assert_eq!(a.hash(), b.hash());
        b.formula = b.formula.replace("F[0,2]", "F[0,2.5]");
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation_errors() {
        let mut c = ScenarioConfig::reference();
        c.init.min[0] = c.init.max[0] + 1.0;
        assert!(matches!(c.validate(), Err(ScenarioError::Invalid(_))));
        let mut c = ScenarioConfig::reference();
        c.formula = "F[0,2] nowhere".into();
        assert!(matches!(c.validate(), Err(ScenarioError::Formula { .. })));
        let mut c = ScenarioConfig::reference();
        c.schema = "v0".into();
        assert!(c.validate().is_err());
    }
}
