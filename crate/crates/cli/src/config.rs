//! The single JSON configuration shared by every subcommand.

use std::path::Path;

use rtinfer::cori::CoriConfig;
use rtinfer::disease::{DiseaseConfig, RtTrajectory};
use rtinfer::eval::{BenchmarkConfig, CellSpec, Method, SchemeSpec};
use rtinfer::gp_prior::PriorConfig;
use rtinfer::observation::ObservationScheme;
use rtinfer::rng::derive_seed;
use rtinfer::scenarios::ScenarioConfig;
use rtinfer::svi::SviConfig;
use rtinfer::test_profile::{TestKind, TestProfile};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_test() -> TestKind {
    TestKind::Pcr
}

/// Seeds inside the sections are replaced by values derived from `seed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub disease: Option<DiseaseConfig>,
    /// Ground truth for `simulate` (or `truth`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    /// Explicit ground truth for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<RtTrajectory>,
    #[serde(default = "default_test")]
    pub test: TestKind,
    /// Replaces the built-in profile named by `test`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_profile: Option<TestProfile>,
    /// Full testing program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationScheme>,
    /// Testing program sized relative to the population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SchemeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub svi: SviConfig,
    #[serde(default)]
    pub cori: CoriConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSection>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Gprt, Method::Cori]
}
fn default_instances() -> usize {
    20
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub grid: Vec<CellSpec>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_true")]
    pub cori_auto_shift: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn disease(&self) -> Result<&DiseaseConfig, CliError> {
        let d = self.disease.as_ref().ok_or_else(|| missing("disease"))?;
        d.validate()?;
        Ok(d)
    }

    pub fn profile(&self) -> TestProfile {
        self.test_profile.clone().unwrap_or_else(|| TestProfile::builtin(self.test))
    }

    pub fn scheme(&self) -> Result<ObservationScheme, CliError> {
        let d = self.disease()?;
        let scheme = match (&self.observation, &self.sampling) {
            (Some(s), None) => s.clone(),
            (None, Some(s)) => s.build(d.population_size, d.horizon),
            (None, None) => return Err(missing("observation` or `sampling")),
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either `observation` or `sampling`, not both".into()))
            }
        };
        scheme.validate(d.horizon, d.population_size)?;
        Ok(scheme)
    }

    pub fn prior_config(&self) -> Result<PriorConfig, CliError> {
        Ok(self
            .prior
            .unwrap_or_else(|| PriorConfig::new(self.disease().map(|d| d.importation_prior_mean).unwrap_or(0.5))))
    }

    /// Ground truth for `simulate`.
    pub fn truth(&self) -> Result<RtTrajectory, CliError> {
        let horizon = self.disease()?.horizon;
        let truth = match (&self.scenario, &self.truth) {
            (Some(s), None) => {
                if s.horizon != horizon {
                    return Err(CliError::Config(format!(
                        "scenario.horizon is {} but disease.horizon is {horizon}",
                        s.horizon
                    )));
                }
                rtinfer::scenarios::generate_scenario(s)?.trajectory
            }
            (None, Some(t)) => t.clone(),
            (None, None) => return Err(missing("scenario` or `truth")),
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either `scenario` or `truth`, not both".into()))
            }
        };
        if truth.horizon() != horizon {
            return Err(CliError::Config(format!(
                "truth.r has {} entries, expected disease.horizon = {horizon}",
                truth.horizon()
            )));
        }
        Ok(truth)
    }

    pub fn benchmark(&self) -> Result<BenchmarkConfig, CliError> {
        let section = self.benchmark.as_ref().ok_or_else(|| missing("benchmark"))?;
        let config = BenchmarkConfig {
            scenario: self.scenario.clone().ok_or_else(|| missing("scenario"))?,
            disease: self.disease()?.clone(),
            prior: self.prior,
            svi: self.svi.clone(),
            cori: self.cori.clone(),
            cori_auto_shift: section.cori_auto_shift,
            grid: section.grid.clone(),
            methods: section.methods.clone(),
            instances: section.instances,
            rng_seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Replaces every nested seed with one derived from `seed`, so the
    /// snapshot in the manifest shows the values actually used.
    pub fn resolve_seeds(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(s) = &mut self.scenario {
            s.rng_seed = derive_seed(&[seed, 1]);
        }
        self.svi.rng_seed = derive_seed(&[seed, 4]);
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing section `{section}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse(r#"{"disease": {"population_size": 10, "horizon": 5}, "sedd": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sedd"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let config = RunConfig::parse(r#"{"disease": {"population_size": 10}}"#);
        assert!(config.unwrap_err().to_string().contains("horizon"));
    }

    #[test]
    fn sampling_shorthand_builds_a_scheme() {
        let config = RunConfig::parse(
            r#"{"disease": {"population_size": 1000, "horizon": 5},
                "sampling": {"type": "cross_sectional", "fraction": 0.01}}"#,
        )
        .unwrap();
        match config.scheme().unwrap() {
            ObservationScheme::CrossSectional { sample_sizes, .. } => assert_eq!(sample_sizes, vec![10; 5]),
            other => panic!("{other:?}"),
        }
    }
}
