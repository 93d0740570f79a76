//! Error and calibration metrics, and the end-to-end benchmark driver.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cori::{cori_posterior, mean_detection_delay, CoriConfig, GammaPosterior};
use crate::disease::{simulate_seeded, DiseaseConfig};
use crate::error::{Error, Result};
use crate::gp_prior::{GpPrior, PriorConfig};
use crate::observation::{ObservationModel, ObservationScheme};
use crate::rng::{derive_seed, stream_rng};
use crate::scenarios::{generate_scenario, ScenarioConfig};
use crate::svi::{fit, Model, PosteriorSummary, SviConfig};
use crate::test_profile::{TestKind, TestProfile};

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

/// One day's posterior over R.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Normal { mean, .. } => mean,
            Self::Gamma { shape, scale } => shape * scale,
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } if sd > 0.0 => mean + sd * standard_normal_quantile(p),
            Self::Normal { mean, .. } => mean,
            Self::Gamma { shape, scale } => GammaPosterior { shape, scale }.quantile(p),
        }
    }

    /// Central interval holding `level` of the mass.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        (self.quantile(0.5 - level / 2.0), self.quantile(0.5 + level / 2.0))
    }

    pub fn covers(&self, truth: f64, level: f64) -> bool {
        let (lo, hi) = self.interval(level);
        lo <= truth && truth <= hi
    }

    /// Family name and its two parameters, as stored in CSV.
    pub fn parts(&self) -> (&'static str, f64, f64) {
        match *self {
            Self::Normal { mean, sd } => ("normal", mean, sd),
            Self::Gamma { shape, scale } => ("gamma", shape, scale),
        }
    }

    pub fn from_parts(family: &str, a: f64, b: f64) -> Option<Self> {
        match family {
            "normal" => Some(Self::Normal { mean: a, sd: b }),
            "gamma" => Some(Self::Gamma { shape: a, scale: b }),
            _ => None,
        }
    }
}

/// Per-day posteriors of one method on one instance; `None` marks days the
/// method gave no estimate for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodPosterior {
    pub days: Vec<Option<Marginal>>,
}

impl MethodPosterior {
    pub fn from_summary(summary: &PosteriorSummary) -> Self {
        Self {
            days: summary
                .mean_r
                .iter()
                .zip(&summary.sd_r)
                .map(|(&mean, &sd)| Some(Marginal::Normal { mean, sd }))
                .collect(),
        }
    }

    pub fn from_gamma(days: &[Option<GammaPosterior>]) -> Self {
        Self {
            days: days
                .iter()
                .map(|d| d.map(|g| Marginal::Gamma { shape: g.shape, scale: g.scale }))
                .collect(),
        }
    }

    /// Point mass on the given values.
    pub fn point(values: &[f64]) -> Self {
        Self {
            days: values
                .iter()
                .map(|&mean| Some(Marginal::Normal { mean, sd: 0.0 }))
                .collect(),
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.map_or(f64::NAN, |m| m.mean())).collect()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.days.iter().map(Option::is_some).collect()
    }
}

/// Mean absolute error over the days where `mask` is true; `None` when no
/// day is left.
pub fn mae(estimate: &[f64], truth: &[f64], mask: &[bool]) -> Result<Option<f64>> {
    if estimate.len() != truth.len() || truth.len() != mask.len() {
        return Err(Error::config("mae inputs differ in length"));
    }
    let (sum, count) = estimate
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .fold((0.0, 0usize), |(s, c), ((e, t), _)| (s + (e - t).abs(), c + 1));
    Ok((count > 0).then(|| sum / count as f64))
}

pub fn posterior_mae(posterior: &MethodPosterior, truth: &[f64]) -> Result<Option<f64>> {
    mae(&posterior.means(), truth, &posterior.mask())
}

/// Fraction of (instance, day) pairs whose truth lies inside the central
/// interval at each level. Days without an estimate are skipped.
pub fn calibration_curve(posteriors: &[MethodPosterior], truths: &[Vec<f64>], levels: &[f64]) -> Result<Vec<f64>> {
    if posteriors.is_empty() || posteriors.len() != truths.len() {
        return Err(Error::config("calibration needs one truth per posterior and at least one instance"));
    }
    levels
        .iter()
        .map(|&level| {
            let mut covered = 0usize;
            let mut total = 0usize;
            for (post, truth) in posteriors.iter().zip(truths) {
                if post.days.len() != truth.len() {
                    return Err(Error::config("posterior and truth differ in length"));
                }
                for (m, &t) in post.days.iter().zip(truth) {
                    if let Some(m) = m {
                        total += 1;
                        covered += usize::from(m.covers(t, level));
                    }
                }
            }
            Ok(if total == 0 { f64::NAN } else { covered as f64 / total as f64 })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gprt,
    Cori,
    /// Reports the ground truth with no uncertainty.
    Truth,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gprt => "gprt",
            Self::Cori => "cori",
            Self::Truth => "truth",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gprt" => Ok(Self::Gprt),
            "cori" => Ok(Self::Cori),
            "truth" => Ok(Self::Truth),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

/// Testing program of a benchmark cell, sized relative to the population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    UniformUndersampling { p_test: f64 },
    CrossSectional { fraction: f64 },
    Longitudinal { fraction: f64, cadence: u32 },
}

impl SchemeSpec {
    pub fn build(&self, population: u64, horizon: usize) -> ObservationScheme {
        match *self {
            Self::UniformUndersampling { p_test } => ObservationScheme::uniform(p_test),
            Self::CrossSectional { fraction } => {
                ObservationScheme::cross_sectional_fraction(fraction, population, horizon)
            }
            Self::Longitudinal { fraction, cadence } => {
                ObservationScheme::longitudinal_fraction(fraction, population, cadence)
            }
        }
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UniformUndersampling { p_test } => write!(f, "uniform_p{p_test}"),
            Self::CrossSectional { fraction } => write!(f, "cross_sectional_{}pct", fraction * 100.0),
            Self::Longitudinal { fraction, cadence } => {
                write!(f, "longitudinal_{}pct_d{cadence}", fraction * 100.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub test: TestKind,
    pub scheme: SchemeSpec,
}

impl CellSpec {
    pub fn label(&self) -> String {
        format!("{}_{}", self.test, self.scheme)
    }
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Scenario template; its seed is replaced per instance.
    pub scenario: ScenarioConfig,
    pub disease: DiseaseConfig,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub svi: SviConfig,
    #[serde(default)]
    pub cori: CoriConfig,
    /// Replace the Cori shift with the scheme's typical detection delay.
    #[serde(default = "default_true")]
    pub cori_auto_shift: bool,
    pub grid: Vec<CellSpec>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.disease.validate()?;
        self.svi.validate()?;
        self.cori.validate()?;
        if self.scenario.horizon != self.disease.horizon {
            return Err(Error::config("scenario horizon and disease horizon differ"));
        }
        if self.grid.is_empty() || self.methods.is_empty() || self.instances == 0 {
            return Err(Error::config("benchmark needs at least one cell, method and instance"));
        }
        for cell in &self.grid {
            cell.scheme
                .build(self.disease.population_size, self.disease.horizon)
                .validate(self.disease.horizon, self.disease.population_size)?;
        }
        Ok(())
    }

    pub fn prior_config(&self) -> PriorConfig {
        self.prior
            .unwrap_or_else(|| PriorConfig::new(self.disease.importation_prior_mean))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub posterior: Option<MethodPosterior>,
    pub mae: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub seed: u64,
    pub truth: Vec<f64>,
    pub observed_total: u64,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mae_mean: f64,
    pub mae_sd: f64,
    /// Instances that produced an MAE.
    pub evaluated: usize,
    pub failures: usize,
    /// More than 10% of instances failed.
    pub flagged: bool,
}

impl MethodSummary {
    /// `mean ± sd` with three decimals.
    pub fn cell_text(&self) -> String {
        format!("{:.3} ± {:.3}", self.mae_mean, self.mae_sd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub spec: CellSpec,
    pub instances: Vec<InstanceResult>,
    pub summaries: Vec<MethodSummary>,
}

impl CellResult {
    /// Posteriors and truths of one method across the instances where it ran.
    pub fn posteriors(&self, method: Method) -> (Vec<MethodPosterior>, Vec<Vec<f64>>) {
        self.instances
            .iter()
            .filter_map(|inst| {
                let outcome = inst.outcomes.iter().find(|o| o.method == method)?;
                Some((outcome.posterior.clone()?, inst.truth.clone()))
            })
            .unzip()
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub cells: Vec<CellResult>,
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(methods: &[Method], instances: &[InstanceResult]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let outcomes: Vec<&MethodOutcome> = instances
                .iter()
                .filter_map(|i| i.outcomes.iter().find(|o| o.method == method))
                .collect();
            let maes: Vec<f64> = outcomes.iter().filter_map(|o| o.mae).collect();
            let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
            let (mae_mean, mae_sd) = mean_sd(&maes);
            MethodSummary {
                method,
                mae_mean,
                mae_sd,
                evaluated: maes.len(),
                failures,
                flagged: failures * 10 > instances.len(),
            }
        })
        .collect()
}

/// Generate, simulate, observe and fit every instance of every cell.
///
/// Instance `i` of cell `c` uses seeds derived from `(rng_seed, c, i)`, so
/// the table is the same for any thread count.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    config.validate()?;
    let horizon = config.disease.horizon;
    let prior = GpPrior::new(&config.prior_config(), horizon)?;

    let jobs: Vec<(usize, usize)> = (0..config.grid.len())
        .flat_map(|c| (0..config.instances).map(move |i| (c, i)))
        .collect();
    let results: Vec<Result<InstanceResult>> = jobs
        .par_iter()
        .map(|&(c, i)| run_instance(config, &prior, c, i))
        .collect();

    let mut cells: Vec<CellResult> = config
        .grid
        .iter()
        .map(|spec| CellResult {
            spec: spec.clone(),
            instances: Vec::with_capacity(config.instances),
            summaries: Vec::new(),
        })
        .collect();
    for (&(c, _), result) in jobs.iter().zip(results) {
        cells[c].instances.push(result?);
    }
    for cell in &mut cells {
        cell.summaries = summarize(&config.methods, &cell.instances);
    }
    Ok(BenchmarkResult { cells })
}

fn run_instance(config: &BenchmarkConfig, prior: &GpPrior, cell: usize, index: usize) -> Result<InstanceResult> {
    let spec = &config.grid[cell];
    let seed = derive_seed(&[config.rng_seed, cell as u64, index as u64]);
    let mut scenario_config = config.scenario.clone();
    scenario_config.rng_seed = derive_seed(&[seed, 1]);
    let truth = generate_scenario(&scenario_config)?.trajectory;

    let n = simulate_seeded(&truth, &config.disease, derive_seed(&[seed, 2]))?;
    let profile = TestProfile::builtin(spec.test);
    let scheme = spec.scheme.build(config.disease.population_size, config.disease.horizon);
    let observation = ObservationModel::new(scheme.clone(), profile.clone(), config.disease.population_size)?;
    let x = observation.sample(&n, &mut stream_rng(seed, 3, 0));

    let outcomes = config
        .methods
        .iter()
        .map(|&method| {
            let posterior = match method {
                Method::Truth => Ok(MethodPosterior::point(&truth.r)),
                Method::Cori => {
                    let mut cori = config.cori.clone();
                    if config.cori_auto_shift {
                        cori.mean_delay_shift = mean_detection_delay(&scheme, &profile);
                    }
                    cori_posterior(&x, &config.disease.profile, &cori).map(|d| MethodPosterior::from_gamma(&d))
                }
                Method::Gprt => {
                    let bound = observation.bind(&x);
                    let model = Model {
                        disease: &config.disease,
                        prior,
                        likelihood: &bound,
                    };
                    let svi = SviConfig {
                        rng_seed: derive_seed(&[seed, 4]),
                        ..config.svi.clone()
                    };
                    fit(&model, &svi).map(|f| MethodPosterior::from_summary(&f.summary))
                }
            };
            match posterior {
                Ok(p) => MethodOutcome {
                    method,
                    mae: posterior_mae(&p, &truth.r).expect("lengths match"),
                    posterior: Some(p),
                    error: None,
                },
                Err(e) => MethodOutcome {
                    method,
                    posterior: None,
                    mae: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(InstanceResult {
        index,
        seed,
        truth: truth.r,
        observed_total: x.total(),
        outcomes,
    })
}
