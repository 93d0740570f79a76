//! Ground-truth R trajectories for synthetic experiments.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::disease::RtTrajectory;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Starts below 1 and rises above 1 around a random day.
    Outbreak,
    /// Piecewise-linear with random change times.
    RandomTrend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutbreakParams {
    pub r_low: (f64, f64),
    pub r_high: (f64, f64),
    /// Changepoint range as fractions of the horizon.
    pub changepoint: (f64, f64),
    /// Days for the rise from 10% to 90% of the way between the levels.
    pub transition_width: f64,
}

impl Default for OutbreakParams {
    fn default() -> Self {
        Self {
            r_low: (0.6, 0.9),
            r_high: (1.3, 1.8),
            changepoint: (0.3, 0.7),
            transition_width: 7.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendParams {
    /// Inclusive range for the number of change times.
    pub change_times: (usize, usize),
    /// Slopes are drawn uniformly from `[-max_slope, max_slope]` per day.
    pub max_slope: f64,
    pub initial: (f64, f64),
    pub clamp: (f64, f64),
}

impl Default for TrendParams {
    fn default() -> Self {
        Self {
            change_times: (2, 4),
            max_slope: 0.04,
            initial: (0.7, 1.3),
            clamp: (0.05, 3.0),
        }
    }
}

fn default_horizon() -> usize {
    100
}
fn default_importation() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// True importation rate `gamma`.
    #[serde(default = "default_importation")]
    pub importation_rate: f64,
    #[serde(default)]
    pub outbreak: OutbreakParams,
    #[serde(default)]
    pub trend: TrendParams,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, horizon: usize, rng_seed: u64) -> Self {
        Self {
            kind,
            horizon,
            rng_seed,
            importation_rate: default_importation(),
            outbreak: OutbreakParams::default(),
            trend: TrendParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config("scenario horizon must be at least 2"));
        }
        if !(self.importation_rate >= 0.0) {
            return Err(Error::config("importation_rate must be non-negative"));
        }
        let o = &self.outbreak;
        let ordered = |(a, b): (f64, f64)| a <= b;
        if !(ordered(o.r_low) && ordered(o.r_high) && ordered(o.changepoint)) {
            return Err(Error::config("outbreak ranges must be (low, high)"));
        }
        if !(o.r_low.0 >= 0.0 && o.r_low.1 < 1.0 && o.r_high.0 > 1.0) {
            return Err(Error::config("outbreak must start below 1 and end above 1"));
        }
        if !(o.transition_width > 0.0) {
            return Err(Error::config("transition_width must be positive"));
        }
        let t = &self.trend;
        if t.change_times.0 > t.change_times.1 || t.change_times.1 + 1 >= self.horizon {
            return Err(Error::config("too many change times for the horizon"));
        }
        if !(t.clamp.0 >= 0.0 && t.clamp.0 < t.clamp.1 && ordered(t.initial) && t.max_slope >= 0.0) {
            return Err(Error::config("invalid random-trend parameters"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub trajectory: RtTrajectory,
    /// Day of the logistic midpoint (outbreak only).
    pub changepoint: Option<f64>,
    /// Days on which the slope changes (random trend only).
    pub change_times: Vec<usize>,
}

fn uniform<G: Rng>(rng: &mut G, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let horizon = config.horizon;
    let gamma = config.importation_rate;
    match config.kind {
        ScenarioKind::Outbreak => {
            let p = &config.outbreak;
            let low = uniform(&mut rng, p.r_low);
            let high = uniform(&mut rng, p.r_high);
            let (a, b) = p.changepoint;
            let mid = uniform(&mut rng, (a * horizon as f64, b * horizon as f64));
            // 10%..90% of a logistic spans 2 ln 9 scale units
            let scale = p.transition_width / (2.0 * 9f64.ln());
            let logistic = |t: f64| 1.0 / (1.0 + (-(t - mid) / scale).exp());
            let (first, last) = (logistic(1.0), logistic(horizon as f64));
            let r = (1..=horizon)
                .map(|t| low + (high - low) * (logistic(t as f64) - first) / (last - first))
                .collect();
            Ok(Scenario {
                trajectory: RtTrajectory::new(r, gamma),
                changepoint: Some(mid),
                change_times: Vec::new(),
            })
        }
        ScenarioKind::RandomTrend => {
            let p = &config.trend;
            let count = rng.random_range(p.change_times.0..=p.change_times.1);
            // change days are distinct in 2..T
            let mut change_times: Vec<usize> = index::sample(&mut rng, horizon - 1, count)
                .into_iter()
                .map(|i| i + 2)
                .collect();
            change_times.sort_unstable();
            let mut level = uniform(&mut rng, p.initial);
            let mut slope = uniform(&mut rng, (-p.max_slope, p.max_slope));
            let mut r = Vec::with_capacity(horizon);
            for t in 1..=horizon {
                if t > 1 {
                    if change_times.binary_search(&t).is_ok() {
                        slope = uniform(&mut rng, (-p.max_slope, p.max_slope));
                    }
                    level += slope;
                }
                r.push(level.clamp(p.clamp.0, p.clamp.1));
            }
            Ok(Scenario {
                trajectory: RtTrajectory::new(r, gamma),
                changepoint: None,
                change_times,
            })
        }
    }
}
