//! Stochastic branching model of infections with a time-varying
//! reproduction number.
//!
//! Every infected individual `h` days into their infection causes
//! `Poisson(w_h * R_t)` new infections on day `t`, and `Poisson(gamma)`
//! infections arrive from outside the population every day. By Poisson
//! superposition the daily count is
//!
//! ```text
//! n_t ~ Poisson(R_t * phi_t + gamma),    phi_t = sum_s n_s * w_{t-s}
//! ```
//!
//! where `phi_t` (the total infectiousness) only depends on earlier days.
//! Days are numbered `1..=T`; the initial seeds are infected on day 0. The
//! population is closed: once everybody has been infected the series stops,
//! and [`log_density`] accounts for that cut.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{discretized_gamma, ln_factorial, ln_poisson_pmf, ln_poisson_sf};

/// Lower bound applied to every Poisson rate inside [`log_density`].
pub const RATE_FLOOR: f64 = 1e-10;

// Poisson rates above this are treated as "infect everybody who is left".
const SATURATING_RATE: f64 = 1e12;

/// Relative infectiousness `w_h` for `h = 1..=H` days since infection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InfectiousnessProfile {
    weights: Vec<f64>,
}

impl InfectiousnessProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("infectiousness_weights must not be empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config(
                "infectiousness_weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "infectiousness_weights must sum to 1 (got {total})"
            )));
        }
        Ok(Self { weights })
    }

    /// Gamma generation interval discretized onto days `1..=support`.
    pub fn discretized_gamma(mean: f64, sd: f64, support: u32) -> Self {
        Self {
            weights: discretized_gamma(mean, sd, 1, support),
        }
    }

    /// `w_h`; zero outside `1..=H`.
    #[inline]
    pub fn weight(&self, days_since_infection: usize) -> f64 {
        match days_since_infection {
            0 => 0.0,
            h => self.weights.get(h - 1).copied().unwrap_or(0.0),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> usize {
        self.weights.len()
    }

    /// Mean generation interval in days.
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| (i + 1) as f64 * w)
            .sum()
    }
}

impl Default for InfectiousnessProfile {
    /// Gamma with mean 5.5 days and sd 2 days on a 14-day support.
    fn default() -> Self {
        Self::discretized_gamma(5.5, 2.0, 14)
    }
}

impl TryFrom<Vec<f64>> for InfectiousnessProfile {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<InfectiousnessProfile> for Vec<f64> {
    fn from(profile: InfectiousnessProfile) -> Self {
        profile.weights
    }
}

fn default_initial_infected() -> u64 {
    5
}

fn default_importation_prior_mean() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiseaseConfig {
    pub population_size: u64,
    pub horizon: usize,
    #[serde(default = "default_initial_infected")]
    pub initial_infected: u64,
    #[serde(rename = "infectiousness_weights", default)]
    pub profile: InfectiousnessProfile,
    /// Prior mean of the importation rate.
    #[serde(default = "default_importation_prior_mean")]
    pub importation_prior_mean: f64,
}

impl DiseaseConfig {
    pub fn new(population_size: u64, horizon: usize) -> Self {
        Self {
            population_size,
            horizon,
            initial_infected: default_initial_infected(),
            profile: InfectiousnessProfile::default(),
            importation_prior_mean: default_importation_prior_mean(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::config("population_size must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.initial_infected > self.population_size {
            return Err(Error::config(
                "initial_infected must not exceed population_size",
            ));
        }
        if !(self.importation_prior_mean > 0.0 && self.importation_prior_mean.is_finite()) {
            return Err(Error::config("importation_prior_mean must be positive"));
        }
        Ok(())
    }
}

/// Reproduction numbers `R_1..R_T` and the importation rate `gamma`.
///
/// Values may be negative (they come from an unconstrained Gaussian); the
/// model always uses `max(value, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtTrajectory {
    pub r: Vec<f64>,
    pub gamma: f64,
}

impl RtTrajectory {
    pub fn new(r: Vec<f64>, gamma: f64) -> Self {
        Self { r, gamma }
    }

    pub fn constant(value: f64, horizon: usize, gamma: f64) -> Self {
        Self::new(vec![value; horizon], gamma)
    }

    pub fn horizon(&self) -> usize {
        self.r.len()
    }

    /// Builds a trajectory from a `(T + 1)`-vector with `gamma` last.
    pub fn from_stacked(theta: &[f64]) -> Self {
        let (gamma, r) = theta.split_last().expect("non-empty parameter vector");
        Self::new(r.to_vec(), *gamma)
    }
}

/// Daily new infections `n_1..n_T`, plus the seeds infected on day 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InfectionSeries {
    pub counts: Vec<u64>,
    pub seeds: u64,
}

impl InfectionSeries {
    pub fn new(counts: Vec<u64>, seeds: u64) -> Self {
        Self { counts, seeds }
    }

    pub fn horizon(&self) -> usize {
        self.counts.len()
    }

    /// All infections including the seeds.
    pub fn total(&self) -> u64 {
        self.seeds + self.counts.iter().sum::<u64>()
    }

    /// `(infection day, count)` for every day with at least one infection,
    /// seeds first as day 0.
    pub fn by_day(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        std::iter::once((0, self.seeds))
            .chain(
                self.counts
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| (i as u32 + 1, c)),
            )
            .filter(|&(_, c)| c > 0)
    }

    /// Infection day of every individual, in day order.
    pub fn infection_days(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_day()
            .flat_map(|(day, count)| std::iter::repeat_n(day, count as usize))
    }
}

/// Gradient of the log-density with respect to `(R, gamma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelScore {
    pub r: Vec<f64>,
    pub gamma: f64,
}

impl ModelScore {
    /// Stacks into a `(T + 1)`-vector with `gamma` last.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.r.clone();
        v.push(self.gamma);
        v
    }
}

fn phi_at(day: usize, counts: &[u64], seeds: u64, profile: &InfectiousnessProfile) -> f64 {
    let mut phi = seeds as f64 * profile.weight(day);
    let earliest = day.saturating_sub(profile.support()).max(1);
    for s in earliest..day {
        let n = counts[s - 1];
        if n > 0 {
            phi += n as f64 * profile.weight(day - s);
        }
    }
    phi
}

fn check_lengths(n: &InfectionSeries, config: &DiseaseConfig) -> Result<()> {
    if n.horizon() != config.horizon {
        return Err(Error::config(format!(
            "infection series has {} days but the horizon is {}",
            n.horizon(),
            config.horizon
        )));
    }
    Ok(())
}

fn check_trajectory(r: &RtTrajectory, config: &DiseaseConfig) -> Result<()> {
    if r.horizon() != config.horizon {
        return Err(Error::config(format!(
            "trajectory has {} days but the horizon is {}",
            r.horizon(),
            config.horizon
        )));
    }
    Ok(())
}

/// Total infectiousness `phi_t` for every day.
pub fn compute_phi(n: &InfectionSeries, config: &DiseaseConfig) -> Result<Vec<f64>> {
    check_lengths(n, config)?;
    Ok((1..=config.horizon)
        .map(|t| phi_at(t, &n.counts, n.seeds, &config.profile))
        .collect())
}

/// Draws an infection series from the branching model.
///
/// Cumulative infections (seeds included) never exceed the population size;
/// once it is reached no further infections occur.
pub fn simulate<G: Rng + ?Sized>(
    traj: &RtTrajectory,
    config: &DiseaseConfig,
    rng: &mut G,
) -> InfectionSeries {
    assert_eq!(traj.horizon(), config.horizon, "trajectory length");
    let seeds = config.initial_infected;
    let mut remaining = config.population_size - seeds;
    let gamma = traj.gamma.max(0.0);
    let mut counts = vec![0u64; config.horizon];
    for t in 1..=config.horizon {
        if remaining == 0 {
            break;
        }
        let phi = phi_at(t, &counts, seeds, &config.profile);
        let rate = traj.r[t - 1].max(0.0) * phi + gamma;
        let draw = if rate <= 0.0 {
            0
        } else if rate >= SATURATING_RATE {
            remaining
        } else {
            let poisson = Poisson::new(rate).expect("finite positive rate");
            poisson.sample(rng) as u64
        };
        let n = draw.min(remaining);
        remaining -= n;
        counts[t - 1] = n;
    }
    InfectionSeries::new(counts, seeds)
}

/// [`simulate`] with a generator seeded from `seed`.
pub fn simulate_seeded(traj: &RtTrajectory, config: &DiseaseConfig, seed: u64) -> Result<InfectionSeries> {
    config.validate()?;
    check_trajectory(traj, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate(traj, config, &mut rng))
}

fn rate(r: f64, phi: f64, gamma: f64) -> f64 {
    (r.max(0.0) * phi + gamma.max(0.0)).max(RATE_FLOOR)
}

/// How day `t` of a simulated series came about, given the population cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DayKind {
    /// Ordinary Poisson draw.
    Free,
    /// The draw reached the number of people left and was cut to it, so only
    /// `n_t >= remaining` is known.
    Capped,
    /// Nobody was left to infect.
    Exhausted,
}

fn day_kinds(n: &InfectionSeries, population: u64) -> Vec<DayKind> {
    let mut remaining = population.saturating_sub(n.seeds);
    n.counts
        .iter()
        .map(|&count| {
            let kind = if remaining == 0 {
                DayKind::Exhausted
            } else if count >= remaining {
                DayKind::Capped
            } else {
                DayKind::Free
            };
            remaining = remaining.saturating_sub(count);
            kind
        })
        .collect()
}

/// `log M(n | R, gamma)`: the probability that [`simulate`] produces `n`.
///
/// Days before the population cap is reached are Poisson; the day the cap is
/// reached contributes `P(Poisson >= people left)`, and later days contribute
/// nothing. Rates are floored at [`RATE_FLOOR`].
pub fn log_density(n: &InfectionSeries, traj: &RtTrajectory, config: &DiseaseConfig) -> Result<f64> {
    check_trajectory(traj, config)?;
    let phi = compute_phi(n, config)?;
    let kinds = day_kinds(n, config.population_size);
    Ok((0..n.counts.len())
        .map(|t| {
            let lambda = rate(traj.r[t], phi[t], traj.gamma);
            let count = n.counts[t];
            match kinds[t] {
                DayKind::Free => count as f64 * lambda.ln() - lambda - ln_factorial(count),
                DayKind::Capped => ln_poisson_sf(count, lambda),
                DayKind::Exhausted => 0.0,
            }
        })
        .sum())
}

/// Closed-form gradient of [`log_density`] with respect to `(R, gamma)`.
///
/// Coordinates whose clamp is active (`R_t <= 0`, `gamma <= 0`, or a floored
/// rate) get a zero derivative.
pub fn grad_log_density(
    n: &InfectionSeries,
    traj: &RtTrajectory,
    config: &DiseaseConfig,
) -> Result<ModelScore> {
    check_trajectory(traj, config)?;
    let phi = compute_phi(n, config)?;
    let kinds = day_kinds(n, config.population_size);
    let mut grad_r = vec![0.0; n.counts.len()];
    let mut grad_gamma = 0.0;
    for (t, (&count, &phi)) in n.counts.iter().zip(&phi).enumerate() {
        let raw = traj.r[t].max(0.0) * phi + traj.gamma.max(0.0);
        if raw < RATE_FLOOR {
            continue;
        }
        // d log p / d lambda
        let dlambda = match kinds[t] {
            DayKind::Free => count as f64 / raw - 1.0,
            DayKind::Capped => (ln_poisson_pmf(count - 1, raw) - ln_poisson_sf(count, raw)).exp(),
            DayKind::Exhausted => continue,
        };
        if traj.r[t] > 0.0 {
            grad_r[t] = phi * dlambda;
        }
        grad_gamma += dlambda;
    }
    Ok(ModelScore {
        r: grad_r,
        gamma: if traj.gamma > 0.0 { grad_gamma } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn config(weights: Vec<f64>, horizon: usize, seeds: u64) -> DiseaseConfig {
        DiseaseConfig {
            population_size: 1_000_000,
            horizon,
            initial_infected: seeds,
            profile: InfectiousnessProfile::new(weights).unwrap(),
            importation_prior_mean: 1.0,
        }
    }

    #[test]
    fn phi_of_no_infections_is_zero() {
        let cfg = config(vec![0.5, 0.5], 3, 0);
        let phi = compute_phi(&InfectionSeries::new(vec![0, 0, 0], 0), &cfg).unwrap();
        assert_eq!(phi, vec![0.0; 3]);
    }

    #[test]
    fn phi_single_day_profile() {
        let cfg = config(vec![1.0], 2, 1);
        let phi = compute_phi(&InfectionSeries::new(vec![0, 0], 1), &cfg).unwrap();
        assert_eq!(phi, vec![1.0, 0.0]);
    }

    #[test]
    fn phi_matches_per_individual_sum() {
        let cfg = config(vec![0.5, 0.5], 3, 0);
        let n = InfectionSeries::new(vec![2, 0, 0], 0);
        let phi = compute_phi(&n, &cfg).unwrap();
        // brute force: sum w_{t - day_i} over individuals
        let brute: Vec<f64> = (1..=3)
            .map(|t| {
                n.infection_days()
                    .map(|d| cfg.profile.weight(t - d as usize))
                    .sum()
            })
            .collect();
        assert_eq!(phi, brute);
        assert_eq!(phi, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn phi_rejects_length_mismatch() {
        let cfg = config(vec![1.0], 3, 0);
        let err = compute_phi(&InfectionSeries::new(vec![0, 0], 0), &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn no_source_means_no_infections() {
        let cfg = config(vec![0.5, 0.5], 20, 0);
        let traj = RtTrajectory::constant(3.0, 20, 0.0);
        let n = simulate_seeded(&traj, &cfg, 9).unwrap();
        assert_eq!(n.counts, vec![0; 20]);
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let cfg = config(InfectiousnessProfile::default().weights().to_vec(), 40, 5);
        let traj = RtTrajectory::constant(1.3, 40, 0.5);
        let a = simulate_seeded(&traj, &cfg, 123).unwrap();
        let b = simulate_seeded(&traj, &cfg, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simulation_respects_population_cap() {
        let mut cfg = config(vec![1.0], 30, 5);
        cfg.population_size = 200;
        let traj = RtTrajectory::constant(3.0, 30, 1.0);
        let n = simulate_seeded(&traj, &cfg, 4).unwrap();
        assert_eq!(n.total(), 200);
    }

    #[test]
    fn log_density_of_empty_days() {
        let cfg = config(vec![1.0], 2, 0);
        let traj = RtTrajectory::new(vec![0.7, 1.4], 2.0);
        let ld = log_density(&InfectionSeries::new(vec![0, 0], 0), &traj, &cfg).unwrap();
        assert_relative_eq!(ld, -4.0, epsilon = 1e-12);
    }

    #[test]
    fn log_density_single_poisson_term() {
        // the seed is infectious on day 2 only, so lambda = (0, 1)
        let cfg = config(vec![0.0, 1.0], 2, 1);
        let traj = RtTrajectory::new(vec![0.0, 1.0], 0.0);
        let n = InfectionSeries::new(vec![0, 1], 1);
        let ld = log_density(&n, &traj, &cfg).unwrap();
        assert_relative_eq!(ld, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn score_vanishes_at_the_mean() {
        let cfg = config(vec![0.5, 0.5], 3, 2);
        // phi = [1, 1, 1 + ...]; choose R so that lambda matches integers
        let n = InfectionSeries::new(vec![2, 2, 3], 2);
        let phi = compute_phi(&n, &cfg).unwrap();
        assert_eq!(phi, vec![1.0, 2.0, 2.0]);
        let gamma = 1.0;
        let r: Vec<f64> = n
            .counts
            .iter()
            .zip(&phi)
            .map(|(&c, &p)| (c as f64 - gamma) / p)
            .collect();
        let g = grad_log_density(&n, &RtTrajectory::new(r, gamma), &cfg).unwrap();
        assert!(g.r.iter().all(|v| v.abs() < 1e-12));
        assert!(g.gamma.abs() < 1e-12);
    }

    #[test]
    fn no_infectiousness_no_sensitivity() {
        let cfg = config(vec![1.0], 3, 0);
        let n = InfectionSeries::new(vec![0, 0, 0], 0);
        let g = grad_log_density(&n, &RtTrajectory::constant(1.0, 3, 0.0), &cfg).unwrap();
        assert_eq!(g.r, vec![0.0; 3]);
    }

    // every series the capped simulator can produce when N = 4 and T = 3
    fn capped_support(population: u64, seeds: u64, horizon: usize) -> Vec<InfectionSeries> {
        let mut out = vec![vec![]];
        for _ in 0..horizon {
            let mut next = Vec::new();
            for prefix in &out {
                let used: u64 = prefix.iter().sum::<u64>() + seeds;
                for c in 0..=population - used {
                    let mut v: Vec<u64> = prefix.clone();
                    v.push(c);
                    next.push(v);
                }
            }
            out = next;
        }
        out.into_iter().map(|c| InfectionSeries::new(c, seeds)).collect()
    }

    #[test]
    fn capped_density_normalizes_and_score_is_centred() {
        let mut cfg = config(vec![0.6, 0.4], 3, 1);
        cfg.population_size = 4;
        let traj = RtTrajectory::new(vec![1.7, 0.9, 2.5], 0.8);
        let support = capped_support(4, 1, 3);
        let mut total = 0.0;
        let mut mean_score = [0.0; 4];
        for n in &support {
            let p = log_density(n, &traj, &cfg).unwrap().exp();
            total += p;
            let g = grad_log_density(n, &traj, &cfg).unwrap().stacked();
            for (m, v) in mean_score.iter_mut().zip(g) {
                *m += p * v;
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        for m in mean_score {
            assert!(m.abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn capped_gradient_matches_finite_differences() {
        let mut cfg = config(vec![0.6, 0.4], 3, 1);
        cfg.population_size = 6;
        let n = InfectionSeries::new(vec![2, 3, 0], 1);
        let base = vec![1.3, 0.8, 1.1, 0.7];
        let g = grad_log_density(&n, &RtTrajectory::from_stacked(&base), &cfg).unwrap().stacked();
        for i in 0..4 {
            let h = 1e-5;
            let mut up = base.clone();
            up[i] += h;
            let mut down = base.clone();
            down[i] -= h;
            let fd = (log_density(&n, &RtTrajectory::from_stacked(&up), &cfg).unwrap()
                - log_density(&n, &RtTrajectory::from_stacked(&down), &cfg).unwrap())
                / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }
}
