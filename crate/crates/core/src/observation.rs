//! Observation models: how daily positive-test counts arise from infections.
//!
//! Three testing programs are supported:
//!
//! * **uniform undersampling** – every infected person is tested with
//!   probability `p_test`, some days after they start testing positive;
//! * **cross-sectional** – a fresh uniform sample of `s_t` people is tested
//!   each day;
//! * **longitudinal** – a fixed sample is split into `d` cohorts and each
//!   cohort is tested every `d` days; a person who tests positive leaves the
//!   program.
//!
//! Each model can simulate observations ([`ObservationModel::sample`]) and
//! produce a one-sample estimate of a lower bound on `log p(x | n)` by
//! drawing the latent per-person variables and scoring the data given them
//! ([`ObservationModel::log_likelihood`]). The longitudinal estimator reveals
//! the positives one day at a time through an [`EligibilityMatrix`].

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::disease::InfectionSeries;
use crate::error::{Error, Result};
use crate::math::{ln_binomial_pmf, sample_hypergeometric};
use crate::rng::StreamRng;
use crate::test_profile::{ConversionRecord, TestProfile};

/// Default per-day floor on log-likelihood terms.
pub const DEFAULT_LOGLIK_FLOOR: f64 = -50.0;

fn default_delay_pmf() -> Vec<(u32, f64)> {
    vec![(2, 1.0)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationScheme {
    UniformUndersampling {
        p_test: f64,
        /// Days between conversion and the test.
        #[serde(default = "default_delay_pmf")]
        delay_pmf: Vec<(u32, f64)>,
    },
    CrossSectional {
        /// People tested on each day `1..=T`.
        sample_sizes: Vec<u64>,
        /// Probability that an uninfected or non-converted person tests positive.
        #[serde(default)]
        false_positive_rate: f64,
    },
    Longitudinal {
        /// Size of each cohort; cohort `j` is tested on days `j + 1, j + 1 + d, ...`.
        sample_sizes: Vec<u64>,
        cadence: u32,
    },
}

impl ObservationScheme {
    pub fn uniform(p_test: f64) -> Self {
        Self::UniformUndersampling {
            p_test,
            delay_pmf: default_delay_pmf(),
        }
    }

    /// Tests `round(fraction * N)` people every day.
    pub fn cross_sectional_fraction(fraction: f64, population: u64, horizon: usize) -> Self {
        let daily = (fraction * population as f64).round() as u64;
        Self::CrossSectional {
            sample_sizes: vec![daily; horizon],
            false_positive_rate: 0.0,
        }
    }

    /// Enrolls `round(fraction * N)` people, split as evenly as possible into
    /// `cadence` cohorts.
    pub fn longitudinal_fraction(fraction: f64, population: u64, cadence: u32) -> Self {
        let total = (fraction * population as f64).round() as u64;
        let d = cadence as u64;
        let sample_sizes = (0..d).map(|j| total / d + u64::from(j < total % d)).collect();
        Self::Longitudinal {
            sample_sizes,
            cadence,
        }
    }

    pub fn validate(&self, horizon: usize, population: u64) -> Result<()> {
        match self {
            Self::UniformUndersampling { p_test, delay_pmf } => {
                if !(*p_test > 0.0 && *p_test <= 1.0) {
                    return Err(Error::config("p_test must lie in (0, 1]"));
                }
                let total: f64 = delay_pmf.iter().map(|&(_, p)| p).sum();
                if delay_pmf.iter().any(|&(_, p)| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config("delay_pmf must be a probability mass function"));
                }
            }
            Self::CrossSectional {
                sample_sizes,
                false_positive_rate,
            } => {
                if sample_sizes.len() != horizon {
                    return Err(Error::config(format!(
                        "cross-sectional sample_sizes has {} entries, expected {horizon}",
                        sample_sizes.len()
                    )));
                }
                if sample_sizes.iter().any(|&s| s > population) {
                    return Err(Error::config("daily sample size exceeds the population"));
                }
                if !(0.0..1.0).contains(false_positive_rate) {
                    return Err(Error::config("false_positive_rate must lie in [0, 1)"));
                }
            }
            Self::Longitudinal {
                sample_sizes,
                cadence,
            } => {
                if *cadence == 0 || sample_sizes.len() != *cadence as usize {
                    return Err(Error::config(
                        "longitudinal sample_sizes must have one entry per cohort (cadence)",
                    ));
                }
                if sample_sizes.iter().sum::<u64>() > population {
                    return Err(Error::config("longitudinal cohorts exceed the population"));
                }
            }
        }
        Ok(())
    }
}

/// Observed positive tests `x_1..x_T`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationSeries {
    pub counts: Vec<u64>,
}

impl ObservationSeries {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn horizon(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Anything that can score observations given an infection series.
///
/// Implementations return a single-sample estimate of a lower bound on
/// `log p(x | n)`; the observations are fixed inside the implementor.
pub trait Likelihood: Sync {
    fn log_likelihood(&self, n: &InfectionSeries, rng: &mut StreamRng) -> f64;
}

/// Likelihood of an empty observation: always `log 1 = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoObservations;

impl Likelihood for NoObservations {
    fn log_likelihood(&self, _n: &InfectionSeries, _rng: &mut StreamRng) -> f64 {
        0.0
    }
}

/// A testing program applied to a population.
#[derive(Clone, Debug)]
pub struct ObservationModel {
    scheme: ObservationScheme,
    profile: TestProfile,
    population: u64,
    floor: Option<f64>,
    delay_index: Option<WeightedAliasIndex<f64>>,
}

impl ObservationModel {
    pub fn new(scheme: ObservationScheme, profile: TestProfile, population: u64) -> Result<Self> {
        let delay_index = match &scheme {
            ObservationScheme::UniformUndersampling { delay_pmf, .. } => Some(
                WeightedAliasIndex::new(delay_pmf.iter().map(|&(_, p)| p).collect())
                    .map_err(|e| Error::config(format!("delay_pmf: {e}")))?,
            ),
            _ => None,
        };
        Ok(Self {
            scheme,
            profile,
            population,
            floor: Some(DEFAULT_LOGLIK_FLOOR),
            delay_index,
        })
    }

    /// Sets the per-day floor; `None` disables it so impossible days give `-inf`.
    pub fn with_floor(mut self, floor: Option<f64>) -> Self {
        self.floor = floor;
        self
    }

    pub fn scheme(&self) -> &ObservationScheme {
        &self.scheme
    }

    pub fn profile(&self) -> &TestProfile {
        &self.profile
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    fn floored(&self, term: f64) -> f64 {
        match self.floor {
            Some(floor) => term.max(floor),
            None => term,
        }
    }

    fn sample_delay<G: Rng + ?Sized>(&self, rng: &mut G) -> u32 {
        match (&self.scheme, &self.delay_index) {
            (ObservationScheme::UniformUndersampling { delay_pmf, .. }, Some(index)) => {
                delay_pmf[index.sample(rng)].0
            }
            _ => 0,
        }
    }

    /// Conversion records for every infection, seeds included, in day order.
    pub fn sample_records<G: Rng + ?Sized>(&self, n: &InfectionSeries, rng: &mut G) -> Vec<ConversionRecord> {
        n.infection_days()
            .map(|day| self.profile.sample_conversion(day, rng))
            .collect()
    }

    /// Simulates the testing program.
    pub fn sample<G: Rng + ?Sized>(&self, n: &InfectionSeries, rng: &mut G) -> ObservationSeries {
        let horizon = n.horizon();
        let mut x = vec![0u64; horizon];
        match &self.scheme {
            ObservationScheme::UniformUndersampling { p_test, .. } => {
                for day in n.infection_days() {
                    let rec = self.profile.sample_conversion(day, rng);
                    let Some(convert) = rec.convert else { continue };
                    if !rng.random_bool(*p_test) {
                        continue;
                    }
                    let tested = convert + self.sample_delay(rng);
                    if (1..=horizon as u32).contains(&tested) {
                        x[tested as usize - 1] += 1;
                    }
                }
            }
            ObservationScheme::CrossSectional {
                sample_sizes,
                false_positive_rate,
            } => {
                let records = self.sample_records(n, rng);
                let prevalence = prevalence(&records, horizon);
                for t in 0..horizon {
                    let s = sample_sizes[t];
                    // sampling without replacement from the population
                    let positive = sample_hypergeometric(self.population, prevalence[t], s, rng);
                    let false_pos = if *false_positive_rate > 0.0 {
                        Binomial::new(s - positive, *false_positive_rate)
                            .expect("valid binomial")
                            .sample(rng)
                    } else {
                        0
                    };
                    x[t] = positive + false_pos;
                }
            }
            ObservationScheme::Longitudinal {
                sample_sizes,
                cadence,
            } => {
                let infected = n.total();
                let enrolled: u64 = sample_sizes.iter().sum();
                let in_sample = sample_hypergeometric(self.population, infected, enrolled, rng);
                let chosen = index::sample(rng, infected as usize, in_sample as usize).into_vec();
                let days: Vec<u32> = n.infection_days().collect();
                let mut open_slots = sample_sizes.clone();
                let mut open_total = enrolled;
                let mut chosen = chosen;
                chosen.sort_unstable();
                for i in chosen {
                    // uniform partition of the enrolled sample into cohorts
                    let mut pick = rng.random_range(0..open_total);
                    let cohort = open_slots
                        .iter()
                        .position(|&slots| {
                            if pick < slots {
                                true
                            } else {
                                pick -= slots;
                                false
                            }
                        })
                        .expect("open slot");
                    open_slots[cohort] -= 1;
                    open_total -= 1;
                    let rec = self.profile.sample_conversion(days[i], rng);
                    if let Some(day) = first_positive_test(&rec, cohort as u32, *cadence) {
                        if day as usize <= horizon {
                            x[day as usize - 1] += 1;
                        }
                    }
                }
            }
        }
        ObservationSeries::new(x)
    }

    /// One-sample estimate of the lower bound on `log p(x | n)` for whichever
    /// scheme this model uses.
    pub fn log_likelihood<G: Rng + ?Sized>(
        &self,
        x: &ObservationSeries,
        n: &InfectionSeries,
        rng: &mut G,
    ) -> f64 {
        match &self.scheme {
            ObservationScheme::UniformUndersampling { .. } => self.loglik_uniform(x, n, rng),
            ObservationScheme::CrossSectional { .. } => self.loglik_cross_sectional(x, n, rng),
            ObservationScheme::Longitudinal { .. } => self.loglik_longitudinal(x, n, rng),
        }
    }

    /// Uniform undersampling: samples a conversion day and test delay per
    /// infection, then scores `x_t ~ Binomial(#tested on t, p_test)`.
    pub fn loglik_uniform<G: Rng + ?Sized>(&self, x: &ObservationSeries, n: &InfectionSeries, rng: &mut G) -> f64 {
        let ObservationScheme::UniformUndersampling { p_test, .. } = self.scheme else {
            panic!("loglik_uniform called on a {:?} scheme", self.scheme);
        };
        let horizon = x.horizon();
        let mut candidates = vec![0u64; horizon];
        for day in n.infection_days() {
            let rec = self.profile.sample_conversion(day, rng);
            if let Some(convert) = rec.convert {
                let tested = convert + self.sample_delay(rng);
                if (1..=horizon as u32).contains(&tested) {
                    candidates[tested as usize - 1] += 1;
                }
            }
        }
        self.uniform_given_candidates(x, &candidates, p_test)
    }

    /// Uniform-undersampling log-likelihood once the number of infections
    /// eligible for a test on each day is known.
    pub fn uniform_given_candidates(&self, x: &ObservationSeries, candidates: &[u64], p_test: f64) -> f64 {
        x.counts
            .iter()
            .zip(candidates)
            .map(|(&xt, &ct)| self.floored(ln_binomial_pmf(xt, ct, p_test)))
            .sum()
    }

    /// Cross-sectional: samples conversion records, then scores
    /// `x_t ~ Binomial(s_t, prevalence_t / N)`.
    pub fn loglik_cross_sectional<G: Rng + ?Sized>(
        &self,
        x: &ObservationSeries,
        n: &InfectionSeries,
        rng: &mut G,
    ) -> f64 {
        let records = self.sample_records(n, rng);
        self.cross_sectional_given_records(x, &records)
    }

    pub fn cross_sectional_given_records(&self, x: &ObservationSeries, records: &[ConversionRecord]) -> f64 {
        let ObservationScheme::CrossSectional {
            sample_sizes,
            false_positive_rate,
        } = &self.scheme
        else {
            panic!("cross-sectional likelihood called on a {:?} scheme", self.scheme);
        };
        let prevalence = prevalence(records, x.horizon());
        let n_pop = self.population as f64;
        x.counts
            .iter()
            .zip(sample_sizes)
            .zip(prevalence)
            .map(|((&xt, &st), prev)| {
                let frac = (prev as f64 / n_pop).min(1.0);
                let p = frac + (1.0 - frac) * false_positive_rate;
                self.floored(ln_binomial_pmf(xt, st, p))
            })
            .sum()
    }

    /// Longitudinal: samples conversion records and evaluates the sequential
    /// estimator built on the eligibility matrix.
    pub fn loglik_longitudinal<G: Rng + ?Sized>(
        &self,
        x: &ObservationSeries,
        n: &InfectionSeries,
        rng: &mut G,
    ) -> f64 {
        let records = self.sample_records(n, rng);
        self.longitudinal_given_records(x, &records, rng)
            .iter()
            .map(|day| self.floored(day.log_term))
            .sum()
    }

    /// Day-by-day trace of the sequential longitudinal estimator for fixed
    /// conversion records. Randomness only enters through which eligible
    /// individuals are removed after each day's positives.
    pub fn longitudinal_given_records<G: Rng + ?Sized>(
        &self,
        x: &ObservationSeries,
        records: &[ConversionRecord],
        rng: &mut G,
    ) -> Vec<LongitudinalDay> {
        let ObservationScheme::Longitudinal {
            sample_sizes,
            cadence,
        } = &self.scheme
        else {
            panic!("longitudinal likelihood called on a {:?} scheme", self.scheme);
        };
        let horizon = x.horizon() as u32;
        let mut matrix = EligibilityMatrix::from_records(records, horizon);
        let mut found = vec![0u64; sample_sizes.len()];
        let mut positives_so_far = 0u64;
        let mut trace = Vec::with_capacity(x.horizon());
        for t in 1..=horizon {
            let xt = x.counts[t as usize - 1];
            let cohort = ((t - 1) % cadence) as usize;
            let n_draws = sample_sizes[cohort].saturating_sub(found[cohort]);
            let n_conv = matrix.eligible(t, *cadence);
            let untested = self.population.saturating_sub(positives_so_far);
            let success_prob = if untested == 0 {
                0.0
            } else {
                n_conv as f64 / untested as f64
            };
            let mut log_term = ln_binomial_pmf(xt, n_draws, success_prob);
            if xt > n_conv {
                log_term = f64::NEG_INFINITY;
            }
            let eligible_before = matrix.total();
            let removed = matrix.remove_eligible(t, *cadence, xt.min(n_conv), rng);
            trace.push(LongitudinalDay {
                day: t,
                n_draws,
                n_conv,
                success_prob,
                log_term,
                eligible_before,
                eligible_after: matrix.total(),
                removed,
            });
            found[cohort] += xt;
            positives_so_far += xt;
        }
        trace
    }
}

impl ObservationModel {
    /// Binds observations to this model for use as a [`Likelihood`].
    pub fn bind<'a>(&'a self, x: &'a ObservationSeries) -> BoundObservations<'a> {
        BoundObservations { model: self, x }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundObservations<'a> {
    model: &'a ObservationModel,
    x: &'a ObservationSeries,
}

impl Likelihood for BoundObservations<'_> {
    fn log_likelihood(&self, n: &InfectionSeries, rng: &mut StreamRng) -> f64 {
        self.model.log_likelihood(self.x, n, rng)
    }
}

/// One day of the sequential longitudinal estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalDay {
    pub day: u32,
    /// Members of today's cohort who have not tested positive yet.
    pub n_draws: u64,
    /// Undetected people whose positive window covers today's test.
    pub n_conv: u64,
    pub success_prob: f64,
    /// `log Binomial(x_t; n_draws, success_prob)`, unfloored.
    pub log_term: f64,
    pub eligible_before: u64,
    pub eligible_after: u64,
    pub removed: u64,
}

/// Day of the first positive result for someone in `cohort`, if any.
fn first_positive_test(rec: &ConversionRecord, cohort: u32, cadence: u32) -> Option<u32> {
    let convert = rec.convert?;
    let first = cohort + 1;
    let test_day = if convert <= first {
        first
    } else {
        first + (convert - first).div_ceil(cadence) * cadence
    };
    rec.positive_on(test_day).then_some(test_day)
}

/// Number of people testing positive on each day `1..=horizon`.
pub fn prevalence(records: &[ConversionRecord], horizon: usize) -> Vec<u64> {
    let mut delta = vec![0i64; horizon + 2];
    for rec in records {
        let Some(convert) = rec.convert else { continue };
        let start = (convert as usize).max(1);
        let end = rec.revert.map_or(horizon + 1, |r| (r as usize).min(horizon + 1));
        if start < end {
            delta[start] += 1;
            delta[end] -= 1;
        }
    }
    let mut running = 0i64;
    (1..=horizon)
        .map(|t| {
            running += delta[t];
            running as u64
        })
        .collect()
}

// Sentinel key for "never reverts".
const NEVER: u32 = u32::MAX;

/// Counts of not-yet-detected people keyed by `(t_convert, t_revert)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EligibilityMatrix {
    cells: BTreeMap<(u32, u32), u64>,
    total: u64,
}

impl EligibilityMatrix {
    /// Everyone who converts by `horizon`.
    pub fn from_records(records: &[ConversionRecord], horizon: u32) -> Self {
        let mut matrix = Self::default();
        for rec in records {
            if let Some(convert) = rec.convert.filter(|&c| c <= horizon) {
                *matrix.cells.entry((convert, rec.revert.unwrap_or(NEVER))).or_default() += 1;
                matrix.total += 1;
            }
        }
        matrix
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, convert: u32, revert: Option<u32>) -> u64 {
        self.cells
            .get(&(convert, revert.unwrap_or(NEVER)))
            .copied()
            .unwrap_or(0)
    }

    fn eligible_cells(&self, day: u32, cadence: u32) -> impl Iterator<Item = (&(u32, u32), &u64)> {
        let lo = (day + 1).saturating_sub(cadence);
        self.cells
            .range((lo, 0)..=(day, NEVER))
            .filter(move |(&(_, revert), &count)| revert > day && count > 0)
    }

    /// People who converted in `(day - cadence, day]` and revert after `day`.
    pub fn eligible(&self, day: u32, cadence: u32) -> u64 {
        self.eligible_cells(day, cadence).map(|(_, &c)| c).sum()
    }

    /// Removes `count` eligible people uniformly at random (without
    /// replacement). Returns the number removed, which is `count` unless
    /// fewer are eligible.
    pub fn remove_eligible<G: Rng + ?Sized>(&mut self, day: u32, cadence: u32, count: u64, rng: &mut G) -> u64 {
        if count == 0 {
            return 0;
        }
        let cells: Vec<((u32, u32), u64)> = self
            .eligible_cells(day, cadence)
            .map(|(&k, &c)| (k, c))
            .collect();
        let mut pool: u64 = cells.iter().map(|&(_, c)| c).sum();
        let mut left = count.min(pool);
        let target = left;
        for (key, cell) in cells {
            if left == 0 {
                break;
            }
            let taken = if pool == cell {
                left
            } else {
                sample_hypergeometric(pool, cell, left, rng)
            };
            pool -= cell;
            left -= taken;
            if taken > 0 {
                let entry = self.cells.get_mut(&key).expect("cell exists");
                *entry -= taken;
                if *entry == 0 {
                    self.cells.remove(&key);
                }
                self.total -= taken;
            }
        }
        target
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(convert: u32, revert: Option<u32>) -> ConversionRecord {
        ConversionRecord {
            convert: Some(convert),
            revert,
        }
    }

    fn census_profile() -> TestProfile {
        TestProfile::new(vec![(0, 1.0)], 0.0, vec![(1000, 1.0)]).unwrap()
    }

    #[test]
    fn nothing_to_detect() {
        let n = InfectionSeries::new(vec![0; 10], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for scheme in [
            ObservationScheme::uniform(0.7),
            ObservationScheme::cross_sectional_fraction(0.1, 1000, 10),
            ObservationScheme::longitudinal_fraction(0.1, 1000, 3),
        ] {
            let model = ObservationModel::new(scheme, TestProfile::pcr(), 1000).unwrap();
            assert_eq!(model.sample(&n, &mut rng).counts, vec![0; 10]);
        }
    }

    #[test]
    fn census_counts_everyone_currently_infected() {
        let n = InfectionSeries::new(vec![1, 0, 3, 2, 0], 2);
        let scheme = ObservationScheme::CrossSectional {
            sample_sizes: vec![50; 5],
            false_positive_rate: 0.0,
        };
        let model = ObservationModel::new(scheme, census_profile(), 50).unwrap();
        let x = model.sample(&n, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(x.counts, vec![3, 3, 6, 8, 8]);
    }

    #[test]
    fn empty_process_has_zero_loglik() {
        let n = InfectionSeries::new(vec![0; 4], 0);
        let x = ObservationSeries::new(vec![0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for scheme in [
            ObservationScheme::uniform(0.5),
            ObservationScheme::cross_sectional_fraction(0.1, 100, 4),
            ObservationScheme::longitudinal_fraction(0.2, 100, 2),
        ] {
            let model = ObservationModel::new(scheme, TestProfile::pcr(), 100).unwrap();
            assert_eq!(model.log_likelihood(&x, &n, &mut rng), 0.0);
        }
    }

    #[test]
    fn uniform_day_term() {
        let model = ObservationModel::new(ObservationScheme::uniform(0.5), TestProfile::pcr(), 10).unwrap();
        let x = ObservationSeries::new(vec![2]);
        assert_relative_eq!(
            model.uniform_given_candidates(&x, &[3], 0.5),
            -0.980829,
            epsilon = 1e-6
        );
    }

    #[test]
    fn cross_sectional_day_terms() {
        let scheme = ObservationScheme::CrossSectional {
            sample_sizes: vec![10, 10],
            false_positive_rate: 0.0,
        };
        let model = ObservationModel::new(scheme, TestProfile::pcr(), 2).unwrap();
        // day 1: nobody positive and x = 0; day 2: one of two positive, x = 5 of 10
        let records = [rec(2, Some(9))];
        let x = ObservationSeries::new(vec![0, 5]);
        assert_relative_eq!(
            model.cross_sectional_given_records(&x, &records),
            -1.402043,
            epsilon = 1e-6
        );
    }

    #[test]
    fn floor_applies_per_day() {
        let scheme = ObservationScheme::CrossSectional {
            sample_sizes: vec![10, 10],
            false_positive_rate: 0.0,
        };
        let model = ObservationModel::new(scheme, TestProfile::pcr(), 20).unwrap();
        let x = ObservationSeries::new(vec![3, 3]);
        assert_eq!(model.cross_sectional_given_records(&x, &[]), 2.0 * DEFAULT_LOGLIK_FLOOR);
        let unfloored = model.with_floor(None);
        assert_eq!(unfloored.cross_sectional_given_records(&x, &[]), f64::NEG_INFINITY);
    }

    #[test]
    fn prevalence_window() {
        let records = [rec(2, Some(4)), rec(3, None), ConversionRecord::NEVER, rec(0, Some(2))];
        assert_eq!(prevalence(&records, 5), vec![1, 1, 2, 1, 1]);
    }

    #[test]
    fn first_positive_respects_cadence() {
        // cohort 0 tested on days 1, 4, 7 ...
        assert_eq!(first_positive_test(&rec(2, Some(9)), 0, 3), Some(4));
        assert_eq!(first_positive_test(&rec(4, Some(9)), 0, 3), Some(4));
        assert_eq!(first_positive_test(&rec(5, Some(7)), 0, 3), None);
        assert_eq!(first_positive_test(&rec(0, Some(2)), 0, 3), Some(1));
        assert_eq!(first_positive_test(&rec(0, Some(1)), 0, 3), None);
    }

    #[test]
    fn eligibility_window_and_removal() {
        let records = [rec(1, Some(5)), rec(2, Some(3)), rec(2, None), rec(4, Some(8))];
        let mut m = EligibilityMatrix::from_records(&records, 10);
        assert_eq!(m.total(), 4);
        assert_eq!(m.eligible(2, 2), 3);
        assert_eq!(m.eligible(3, 2), 1);
        assert_eq!(m.eligible(4, 3), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(m.remove_eligible(2, 2, 2, &mut rng), 2);
        assert_eq!(m.total(), 2);
        assert_eq!(m.eligible(2, 2), 1);
    }

    #[test]
    fn scheme_json_is_tagged() {
        let scheme = ObservationScheme::Longitudinal {
            sample_sizes: vec![3, 4],
            cadence: 2,
        };
        let json = serde_json::to_string(&scheme).unwrap();
        assert_eq!(json, r#"{"type":"longitudinal","sample_sizes":[3,4],"cadence":2}"#);
        assert_eq!(serde_json::from_str::<ObservationScheme>(&json).unwrap(), scheme);
        let x = ObservationSeries::new(vec![0, 3, 1]);
        assert_eq!(serde_json::to_string(&x).unwrap(), "[0,3,1]");
    }

    #[test]
    fn validation() {
        assert!(ObservationScheme::uniform(0.0).validate(5, 10).is_err());
        assert!(ObservationScheme::cross_sectional_fraction(0.1, 100, 4).validate(5, 100).is_err());
        assert!(ObservationScheme::Longitudinal { sample_sizes: vec![60, 60], cadence: 2 }
            .validate(5, 100)
            .is_err());
        assert!(ObservationScheme::longitudinal_fraction(0.5, 100, 3).validate(5, 100).is_ok());
    }
}
