//! Scenario and guess files.
//!
//! A scenario file is JSON. It either names a bundled data set and
//! overrides parts of it, or spells out both initial states. Vectors are
//! 3-arrays in SI units. Guess instants are plain numbers (seconds) or
//! `{"value": v, "unit": "s" | "scaled"}`, where scaled values are fractions
//! of the last instant (`tf` with a tail arc, else `th`), which must itself
//! be in seconds.
//!
//! ```json
//! {
//!   "label": "data I impulse boxes",
//!   "data_set": "I",
//!   "constraints": { "alpha": 20, "beta": 40, "gamma": 50,
//!                    "dv1_box": { "min": [-400, -400, -500], "max": [400, 400, 400] } },
//!   "variant": "two-impulse-constrained",
//!   "tol": 1e-9,
//!   "guess": { "t1": { "value": 0.03, "unit": "scaled" }, "t2": 70, "th": 700,
//!              "dv1": [-300, 300, -300], "dv2": [-100, 100, -100],
//!              "costate0": { "p_r": [5.4e-4, -4.7e-4, 8.5e-4], "p_v": [0.49, -0.44, 0.76] },
//!              "lambda": [1, 1, 1], "mu": [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1] }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bcs::{Instant, ProblemVariant, TimeUnit};
use crate::dynamics::{CartesianState, GravityModel};
use crate::guess::GuessSpec;
use crate::mpbvp::SolveOptions;
use crate::problem::InterceptionOptions;
use crate::scenarios::{load_initial_data, ConstraintSet, DataSet, Scenario, ScenarioError};
use crate::vec3::Vec3;

pub const TOL_RANGE: (f64, f64) = (1e-12, 1e-6);

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

fn invalid<T>(m: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(m.into()))
}

/// An instant as written in a file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeValue {
    Seconds(f64),
    Tagged(Instant),
}

impl TimeValue {
    fn instant(self) -> Instant {
        match self {
            TimeValue::Seconds(v) => Instant::seconds(v),
            TimeValue::Tagged(i) => i,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostateValue {
    pub p_r: Vec3<f64>,
    pub p_v: Vec3<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuessFile {
    pub t1: Option<TimeValue>,
    pub t2: Option<TimeValue>,
    pub th: Option<TimeValue>,
    pub tf: Option<TimeValue>,
    pub dv1: Option<Vec3<f64>>,
    pub dv2: Option<Vec3<f64>>,
    /// Costates at t0.
    pub costate0: Option<CostateValue>,
    pub lambda: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub retarget: bool,
    pub nodes_per_segment: Option<usize>,
}

impl GuessFile {
    /// Guess with every instant in seconds.
    pub fn resolve(&self, variant: &ProblemVariant) -> Result<GuessSpec, ConfigError> {
        let last = if variant.has_tail() { self.tf } else { self.th };
        let span = match last.map(TimeValue::instant) {
            Some(Instant { value, unit: TimeUnit::Seconds }) => Some(value),
            Some(_) => return invalid(format!("the last instant of {variant} must be given in seconds")),
            None => None,
        };
        let res = |name: &str, t: Option<TimeValue>| -> Result<Option<f64>, ConfigError> {
            match t.map(TimeValue::instant) {
                None => Ok(None),
                Some(i) if i.unit == TimeUnit::Seconds => Ok(Some(i.value)),
                Some(i) => match span {
                    Some(s) => Ok(Some(i.resolve(s))),
                    None => invalid(format!("scaled guess {name} needs the last instant in seconds")),
                },
            }
        };
        Ok(GuessSpec {
            t1: res("t1", self.t1)?,
            t2: res("t2", self.t2)?,
            th: res("th", self.th)?,
            tf: res("tf", self.tf)?,
            dv1: self.dv1,
            dv2: self.dv2,
            costate0: self.costate0.map(|c| (c.p_r, c.p_v)),
            lambda: self.lambda.clone(),
            mu: self.mu.clone(),
            eta: self.eta.clone(),
            retarget: self.retarget,
            nodes_per_segment: self.nodes_per_segment,
        })
    }
}

/// Variant as a bare name or as the tagged object (needed for a fixed `t1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantSpec {
    Name(String),
    Full(ProblemVariant),
}

impl VariantSpec {
    pub fn variant(&self) -> Result<ProblemVariant, ConfigError> {
        match self {
            VariantSpec::Name(n) => n.parse().map_err(ConfigError::Invalid),
            VariantSpec::Full(v) => Ok(*v),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_newton: Option<usize>,
    pub max_refinements: Option<usize>,
    pub max_nodes: Option<usize>,
    pub max_corrections: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub label: Option<String>,
    pub data_set: Option<DataSet>,
    pub gravity: Option<GravityModel<f64>>,
    pub interceptor0: Option<CartesianState<f64>>,
    pub target0: Option<CartesianState<f64>>,
    pub r_f: Option<Vec3<f64>>,
    pub constraints: Option<ConstraintSet>,
    pub variant: Option<VariantSpec>,
    pub tol: Option<f64>,
    pub guess: Option<GuessFile>,
    pub solver: SolverSettings,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse_json(path)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let mut sc = match self.data_set {
            Some(d) => load_initial_data(d),
            None => {
                let (Some(m), Some(t)) = (self.interceptor0, self.target0) else {
                    return invalid("scenario needs data_set or both interceptor0 and target0");
                };
                Scenario {
                    label: String::new(),
                    gravity: GravityModel::earth(),
                    interceptor0: m,
                    target0: t,
                    r_f: None,
                    constraints: ConstraintSet::default(),
                }
            }
        };
        if let Some(l) = &self.label {
            sc.label = l.clone();
        }
        if sc.label.is_empty() {
            return invalid("scenario label is empty");
        }
        if let Some(g) = self.gravity {
            sc.gravity = g;
        }
        if let Some(m) = self.interceptor0 {
            sc.interceptor0 = m;
        }
        if let Some(t) = self.target0 {
            sc.target0 = t;
        }
        if self.r_f.is_some() {
            sc.r_f = self.r_f;
        }
        if let Some(c) = &self.constraints {
            sc.constraints = c.clone();
        }
        sc.validate()?;
        Ok(sc)
    }
}

/// Everything one solve needs, resolved.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub variant: ProblemVariant,
    pub tol: f64,
    pub guess: GuessSpec,
    pub options: InterceptionOptions,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub variant: Option<ProblemVariant>,
    pub tol: Option<f64>,
    pub guess: Option<GuessFile>,
}

impl RunConfig {
    pub fn from_file(file: &ScenarioFile, ov: &Overrides) -> Result<Self, ConfigError> {
        let scenario = file.scenario()?;
        let variant = match (ov.variant, &file.variant) {
            (Some(v), _) => v,
            (None, Some(v)) => v.variant()?,
            (None, None) => return invalid("no variant given"),
        };
        let tol = ov.tol.or(file.tol).unwrap_or(1e-9);
        if !(TOL_RANGE.0..=TOL_RANGE.1).contains(&tol) {
            return invalid(format!("tol {tol:e} outside [{:e}, {:e}]", TOL_RANGE.0, TOL_RANGE.1));
        }
        let gf = ov.guess.clone().or_else(|| file.guess.clone()).unwrap_or_default();
        let guess = gf.resolve(&variant)?;
        let mut solve = SolveOptions::with_tol(tol);
        let s = &file.solver;
        if let Some(n) = s.max_newton {
            solve.max_newton = n;
        }
        if let Some(n) = s.max_refinements {
            solve.max_refinements = n;
        }
        if let Some(n) = s.max_nodes {
            solve.max_nodes = n;
        }
        let mut options = InterceptionOptions { solve, ..Default::default() };
        if let Some(n) = s.max_corrections {
            options.max_corrections = n;
        }
        Ok(RunConfig { scenario, variant, tol, guess, options })
    }

    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, ConfigError> {
        Self::from_file(&ScenarioFile::load(path)?, ov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_instants_resolve_against_the_last_one() {
        let gf: GuessFile = serde_json::from_str(
            r#"{"t1": {"value": 0.02, "unit": "scaled"}, "t2": 38, "th": {"value": 0.14, "unit": "scaled"}, "tf": 950}"#,
        )
        .unwrap();
        let g = gf.resolve(&ProblemVariant::MultiConstraint).unwrap();
        assert!((g.t1.unwrap() - 19.0).abs() < 1e-12);
        assert_eq!(g.t2, Some(38.0));
        assert!((g.th.unwrap() - 133.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_last_instant_is_rejected() {
        let gf: GuessFile = serde_json::from_str(r#"{"th": {"value": 0.5, "unit": "scaled"}}"#).unwrap();
        assert!(gf.resolve(&ProblemVariant::OneImpulseFree).is_err());
    }

    #[test]
    fn tol_range_is_enforced() {
        let file: ScenarioFile =
            serde_json::from_str(r#"{"data_set": "I", "variant": "one-impulse-free", "tol": 1e-3}"#).unwrap();
        assert!(matches!(RunConfig::from_file(&file, &Overrides::default()), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn fixed_instant_variant_object() {
        let file: ScenarioFile = serde_json::from_str(
            r#"{"data_set": "I", "variant": {"kind": "one-impulse-fixed-t1", "t1": {"value": 0.2, "unit": "scaled"}},
                "guess": {"th": 700}}"#,
        )
        .unwrap();
        let cfg = RunConfig::from_file(&file, &Overrides::default()).unwrap();
        assert_eq!(cfg.variant, ProblemVariant::OneImpulseFixedT1 { t1: Instant::scaled(0.2) });
        assert_eq!(cfg.scenario.label, "data I");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ScenarioFile>(r#"{"data_set": "I", "tolerance": 1e-9}"#).is_err());
    }
}
