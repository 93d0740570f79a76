//! Stochastic variational inference for `(R, gamma)`.
//!
//! The objective is the evidence lower bound with the expected
//! log-likelihood replaced by the tractable bound
//!
//! ```text
//! g(mu, L) = E_{xi ~ N(0, I)} E_{n ~ M(mu + L xi)} E_alpha [ log p(x | n, alpha) ]
//! ```
//!
//! Its gradient is estimated by sampling `xi`, simulating `n`, drawing the
//! observation latents `alpha`, and weighting the score of the disease model
//! by the sampled log-likelihood:
//!
//! ```text
//! grad ~= 1/b * sum_k  d/d(mu, L) log M(n_k | mu + L xi_k) * (l_k - baseline_k)
//! ```
//!
//! The derivative with respect to `(mu, L)` is the `(R, gamma)` score pushed
//! through `mu + L xi` (identity for `mu`, outer product with `xi` for `L`).
//! `baseline_k` is the mean log-likelihood of the *other* batch members, which
//! lowers the variance without biasing the estimate. The prior cross-entropy
//! and entropy terms are differentiated exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disease::{grad_log_density, simulate, DiseaseConfig, RtTrajectory};
use crate::error::{Error, Result};
use crate::gp_prior::{GpPrior, StateGradient, VariationalState};
use crate::observation::Likelihood;
use crate::rng::{derive_seed, stream_rng};

// stream ids for `stream_rng`
const GRADIENT_STREAM: u64 = 1;
const ELBO_STREAM: u64 = 2;

fn default_batch_size() -> usize {
    16
}
fn default_iterations() -> usize {
    4000
}
fn default_learning_rate() -> f64 {
    0.02
}
fn default_scale_learning_rate() -> f64 {
    0.001
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_elbo_eval_samples() -> usize {
    256
}
fn default_latent_draws() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SviConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Step size for the covariance factor. Its gradient is much noisier
    /// than the mean's, so it moves more slowly.
    #[serde(default = "default_scale_learning_rate")]
    pub scale_learning_rate: f64,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    /// Samples used for the final ELBO evaluation.
    #[serde(default = "default_elbo_eval_samples")]
    pub elbo_eval_samples: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Keep a checkpoint every this many iterations (0 keeps only the last).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Linear learning-rate warmup length (0 disables it).
    #[serde(default)]
    pub warmup_iterations: usize,
    /// Observation-latent draws averaged per simulated infection series.
    #[serde(default = "default_latent_draws")]
    pub latent_draws: usize,
}

impl Default for SviConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            iterations: default_iterations(),
            learning_rate: default_learning_rate(),
            scale_learning_rate: default_scale_learning_rate(),
            adam_betas: default_betas(),
            elbo_eval_samples: default_elbo_eval_samples(),
            rng_seed: 0,
            checkpoint_every: 0,
            warmup_iterations: 0,
            latent_draws: default_latent_draws(),
        }
    }
}

impl SviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2 for the control variate"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.scale_learning_rate > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return Err(Error::config("adam_betas must lie in (0, 1)"));
        }
        if self.elbo_eval_samples == 0 || self.latent_draws == 0 {
            return Err(Error::config("elbo_eval_samples and latent_draws must be positive"));
        }
        Ok(())
    }
}

/// Everything the estimator needs besides the variational state.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub disease: &'a DiseaseConfig,
    pub prior: &'a GpPrior,
    pub likelihood: &'a dyn Likelihood,
}

impl Model<'_> {
    fn check(&self) -> Result<()> {
        if self.disease.horizon != self.prior.horizon() {
            return Err(Error::config(format!(
                "disease horizon {} does not match prior horizon {}",
                self.disease.horizon,
                self.prior.horizon()
            )));
        }
        Ok(())
    }
}

/// How the score-function term is centred.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ControlVariate {
    /// Subtract the mean log-likelihood of the other batch members.
    #[default]
    LeaveOneOut,
    /// Use the raw log-likelihood.
    None,
}

#[derive(Clone, Debug)]
pub struct GradientEstimate {
    /// Likelihood-bound part plus the exact prior part.
    pub total: StateGradient,
    /// Score-function part alone.
    pub likelihood: StateGradient,
    /// Sampled log-likelihoods `l_k`.
    pub log_likelihoods: Vec<f64>,
}

struct BatchElement {
    xi: Vec<f64>,
    score: Vec<f64>,
    log_lik: f64,
}

fn sample_element(
    model: &Model<'_>,
    state: &VariationalState,
    scale_tilde: &[f64],
    latent_draws: usize,
    seed: u64,
    stream: u64,
    index: u64,
) -> BatchElement {
    let mut rng = stream_rng(seed, stream, index);
    let xi: Vec<f64> = (0..model.prior.dim())
        .map(|_| rand::Rng::sample(&mut rng, rand_distr::StandardNormal))
        .collect();
    let theta = model.prior.transform(state, scale_tilde, &xi);
    let traj = RtTrajectory::from_stacked(&theta);
    let n = simulate(&traj, model.disease, &mut rng);
    let log_lik = (0..latent_draws)
        .map(|_| model.likelihood.log_likelihood(&n, &mut rng))
        .sum::<f64>()
        / latent_draws as f64;
    let score = grad_log_density(&n, &traj, model.disease)
        .expect("simulated series matches the horizon")
        .stacked();
    BatchElement { xi, score, log_lik }
}

/// Unbiased estimate of the gradient of the bound plus the prior terms.
///
/// Batch element `k` draws from the stream `(seed, iteration, k)`, so the
/// result does not depend on the number of worker threads.
pub fn estimate_gradient(
    state: &VariationalState,
    model: &Model<'_>,
    batch_size: usize,
    control: ControlVariate,
    seed: u64,
    iteration: u64,
) -> GradientEstimate {
    estimate_gradient_with(state, model, batch_size, 1, control, seed, iteration)
}

fn estimate_gradient_with(
    state: &VariationalState,
    model: &Model<'_>,
    batch_size: usize,
    latent_draws: usize,
    control: ControlVariate,
    seed: u64,
    iteration: u64,
) -> GradientEstimate {
    assert!(batch_size >= 2, "batch_size must be at least 2");
    let scale_tilde = state.scale_tilde();
    let stream_seed = derive_seed(&[seed, GRADIENT_STREAM]);
    let batch: Vec<BatchElement> = (0..batch_size as u64)
        .into_par_iter()
        .map(|k| {
            sample_element(
                model,
                state,
                &scale_tilde,
                latent_draws,
                stream_seed,
                iteration,
                k,
            )
        })
        .collect();

    let b = batch_size as f64;
    let sum: f64 = batch.iter().map(|e| e.log_lik).sum();
    let mut likelihood = StateGradient::zeros(model.prior.dim());
    for element in &batch {
        let baseline = match control {
            ControlVariate::LeaveOneOut => (sum - element.log_lik) / (b - 1.0),
            ControlVariate::None => 0.0,
        };
        let weight = (element.log_lik - baseline) / b;
        model
            .prior
            .accumulate_pullback(&element.score, &element.xi, weight, &mut likelihood);
    }
    model.prior.finish_scale_gradient(state, &mut likelihood);

    let mut total = model.prior.grad_prior_terms(state);
    total.add_scaled(&likelihood, 1.0);
    GradientEstimate {
        total,
        likelihood,
        log_likelihoods: batch.iter().map(|e| e.log_lik).collect(),
    }
}

/// Monte Carlo estimate of the evidence lower bound.
pub fn estimate_elbo(state: &VariationalState, model: &Model<'_>, samples: usize, seed: u64) -> f64 {
    assert!(samples >= 1);
    let scale_tilde = state.scale_tilde();
    let stream_seed = derive_seed(&[seed, ELBO_STREAM]);
    let logliks: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|k| sample_element(model, state, &scale_tilde, 1, stream_seed, 0, k).log_lik)
        .collect();
    let expected = logliks.iter().sum::<f64>() / samples as f64;
    model.prior.cross_entropy(state) + model.prior.entropy(state) + expected
}

/// Adam moments, ascending the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    /// One ascent step. The first `split` parameters use `lr.0`, the rest `lr.1`.
    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: (f64, f64), split: usize, betas: (f64, f64)) {
        const EPS: f64 = 1e-8;
        let (b1, b2) = betas;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, (((p, g), m), v)) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
            .enumerate()
        {
            let rate = if i < split { lr.0 } else { lr.1 };
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p += rate * (*m / c1) / ((*v / c2).sqrt() + EPS);
        }
    }
}

/// Everything needed to resume a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: VariationalState,
    /// Index of the next iteration to run.
    pub iteration: usize,
    pub adam: AdamState,
    pub rng_seed: u64,
    pub elbo_trace: Vec<f64>,
}

fn flatten(state: &VariationalState) -> Vec<f64> {
    state.mean.iter().chain(&state.scale_raw).copied().collect()
}

fn unflatten(state: &mut VariationalState, flat: &[f64]) {
    let d = state.mean.len();
    state.mean.copy_from_slice(&flat[..d]);
    state.scale_raw.copy_from_slice(&flat[d..]);
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct Fit {
    pub summary: PosteriorSummary,
    pub checkpoint: Checkpoint,
    /// Intermediate checkpoints requested through `checkpoint_every`.
    pub history: Vec<Checkpoint>,
}

/// Maximizes the ELBO with Adam starting from the prior-based initial state.
pub fn fit(model: &Model<'_>, config: &SviConfig) -> Result<Fit> {
    let start = Checkpoint {
        state: model.prior.initial_state(),
        iteration: 0,
        adam: AdamState::new(model.prior.dim() * (model.prior.dim() + 1)),
        rng_seed: config.rng_seed,
        elbo_trace: Vec::new(),
    };
    resume(model, config, start)
}

/// Continues a fit from a checkpoint up to `config.iterations` total
/// iterations. The seed stored in the checkpoint wins over the config.
pub fn resume(model: &Model<'_>, config: &SviConfig, checkpoint: Checkpoint) -> Result<Fit> {
    config.validate()?;
    model.check()?;
    let dim = model.prior.dim();
    if checkpoint.state.dim() != dim || checkpoint.state.scale_raw.len() != dim * dim {
        return Err(Error::config("checkpoint dimensions do not match the model"));
    }
    let seed = checkpoint.rng_seed;
    let mut current = checkpoint;
    let mut params = flatten(&current.state);
    let mut history = Vec::new();
    for iteration in current.iteration..config.iterations {
        let estimate = estimate_gradient_with(
            &current.state,
            model,
            config.batch_size,
            config.latent_draws,
            ControlVariate::LeaveOneOut,
            seed,
            iteration as u64,
        );
        if !estimate.total.is_finite() {
            return Err(Error::Diverged {
                iteration,
                reason: "non-finite gradient".into(),
                last_finite: Box::new(current),
            });
        }
        let elbo = model.prior.cross_entropy(&current.state)
            + model.prior.entropy(&current.state)
            + estimate.log_likelihoods.iter().sum::<f64>() / config.batch_size as f64;

        let warmup = if config.warmup_iterations > 0 {
            ((iteration + 1) as f64 / config.warmup_iterations as f64).min(1.0)
        } else {
            1.0
        };
        let lr = (warmup * config.learning_rate, warmup * config.scale_learning_rate);
        let grad: Vec<f64> = estimate.total.iter().copied().collect();
        let mut adam = current.adam.clone();
        let mut next_params = params.clone();
        adam.update(&mut next_params, &grad, lr, dim, config.adam_betas);
        if next_params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration,
                reason: "non-finite parameters after update".into(),
                last_finite: Box::new(current),
            });
        }
        params = next_params;
        unflatten(&mut current.state, &params);
        current.adam = adam;
        current.iteration = iteration + 1;
        current.elbo_trace.push(elbo);
        if config.checkpoint_every > 0 && current.iteration.is_multiple_of(config.checkpoint_every) {
            history.push(current.clone());
        }
    }
    let summary = PosteriorSummary::from_state(model.prior, &current.state, current.elbo_trace.clone());
    Ok(Fit {
        summary,
        checkpoint: current,
        history,
    })
}

/// Trailing moving average with a window of `window` points; the first
/// `window - 1` entries average over what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Per-day Gaussian marginals of the fitted posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean_r: Vec<f64>,
    pub sd_r: Vec<f64>,
    pub mean_gamma: f64,
    pub sd_gamma: f64,
    pub elbo_trace: Vec<f64>,
}

impl PosteriorSummary {
    pub fn from_state(prior: &GpPrior, state: &VariationalState, elbo_trace: Vec<f64>) -> Self {
        let (mut mean, mut sd) = prior.marginals(state);
        let mean_gamma = mean.pop().expect("gamma entry");
        let sd_gamma = sd.pop().expect("gamma entry");
        Self {
            mean_r: mean,
            sd_r: sd,
            mean_gamma,
            sd_gamma,
            elbo_trace,
        }
    }

    pub fn horizon(&self) -> usize {
        self.mean_r.len()
    }

    /// Quantile `p` of each day's marginal.
    pub fn quantile(&self, p: f64) -> Vec<f64> {
        let z = crate::eval::standard_normal_quantile(p);
        self.mean_r
            .iter()
            .zip(&self.sd_r)
            .map(|(m, s)| m + z * s)
            .collect()
    }

    /// Central interval with the given probability for each day.
    pub fn credible_interval(&self, level: f64) -> Vec<(f64, f64)> {
        let lo = self.quantile(0.5 - level / 2.0);
        let hi = self.quantile(0.5 + level / 2.0);
        lo.into_iter().zip(hi).collect()
    }
}
