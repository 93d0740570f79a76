//! Gaussian-process prior over `R`, exponential prior over `gamma`, and the
//! Gaussian variational family over `(R, gamma)`.
//!
//! The variational parameters are stored in coordinates whitened by the
//! prior. With `P = blockdiag(chol(K), gamma_bar)` and
//! `m0 = (1, ..., 1, gamma_bar)`,
//!
//! ```text
//! mu = m0 + P * nu,      L = P * Ltilde,      Sigma = L * L^T
//! ```
//!
//! where `Ltilde` is lower triangular with a softplus-mapped diagonal. `L` is
//! therefore the lower-triangular Cholesky factor of `Sigma`, and a sample is
//! `mu + L * xi` with `xi ~ N(0, I)`. Whitening keeps the optimization well
//! conditioned: under a smooth kernel most directions of `K` have tiny
//! variance, and the prior terms are isotropic in `nu` and `Ltilde`.
//!
//! The exponential prior on `gamma` is extended to negative values as
//! `-log(gamma_bar) - |gamma| / gamma_bar`, so its expectation under a
//! Gaussian stays closed form and the variational mean cannot drift below 0.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::disease::RtTrajectory;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, softplus_inv};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    SquaredExponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpKernelConfig {
    pub kind: KernelKind,
    /// Days.
    pub lengthscale: f64,
    pub amplitude: f64,
    pub jitter: f64,
}

impl Default for GpKernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::SquaredExponential,
            lengthscale: 10.0,
            amplitude: 0.3,
            jitter: 1e-6,
        }
    }
}

impl GpKernelConfig {
    pub fn gram(&self, horizon: usize) -> DMatrix<f64> {
        let KernelKind::SquaredExponential = self.kind;
        let var = self.amplitude * self.amplitude;
        let inv_two_l2 = 0.5 / (self.lengthscale * self.lengthscale);
        DMatrix::from_fn(horizon, horizon, |i, j| {
            let d = i as f64 - j as f64;
            var * (-d * d * inv_two_l2).exp() + if i == j { self.jitter } else { 0.0 }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub kernel: GpKernelConfig,
    /// Prior mean of the importation rate.
    pub importation_mean: f64,
}

impl PriorConfig {
    pub fn new(importation_mean: f64) -> Self {
        Self {
            kernel: GpKernelConfig::default(),
            importation_mean,
        }
    }
}

/// Variational parameters in whitened coordinates (see module docs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    /// `nu`, length `T + 1`.
    #[serde(rename = "mu")]
    pub mean: Vec<f64>,
    /// `Ltilde` before the diagonal softplus, row-major `(T + 1) x (T + 1)`;
    /// entries above the diagonal are ignored.
    #[serde(rename = "l_raw")]
    pub scale_raw: Vec<f64>,
}

impl VariationalState {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Lower-triangular `Ltilde` with the positivity map applied, row-major.
    pub fn scale_tilde(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..i {
                out[i * d + j] = self.scale_raw[i * d + j];
            }
            out[i * d + i] = softplus(self.scale_raw[i * d + i]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.scale_raw).all(|v| v.is_finite())
    }
}

/// Gradient with the same layout as [`VariationalState`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateGradient {
    pub mean: Vec<f64>,
    pub scale_raw: Vec<f64>,
}

impl StateGradient {
    pub fn zeros(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale_raw: vec![0.0; dim * dim],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.mean.iter().chain(&self.scale_raw)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &StateGradient, weight: f64) {
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            *a += weight * b;
        }
        for (a, b) in self.scale_raw.iter_mut().zip(&other.scale_raw) {
            *a += weight * b;
        }
    }
}

/// Prior geometry for a fixed horizon.
#[derive(Clone, Debug)]
pub struct GpPrior {
    horizon: usize,
    // chol(K), row-major T x T
    chol_k: Vec<f64>,
    log_det_k: f64,
    importation_mean: f64,
}

impl GpPrior {
    pub fn new(config: &PriorConfig, horizon: usize) -> Result<Self> {
        if !(config.kernel.lengthscale > 0.0 && config.kernel.amplitude > 0.0 && config.kernel.jitter >= 0.0) {
            return Err(Error::config("kernel lengthscale and amplitude must be positive"));
        }
        let gram = config.kernel.gram(horizon);
        Self::from_covariance(gram, config.importation_mean)
            .map_err(|e| match e {
                Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite {
                    jitter: config.kernel.jitter,
                },
                other => other,
            })
    }

    /// Prior with an explicit covariance matrix for `R`.
    pub fn from_covariance(cov: DMatrix<f64>, importation_mean: f64) -> Result<Self> {
        if !(importation_mean > 0.0) {
            return Err(Error::config("importation prior mean must be positive"));
        }
        let horizon = cov.nrows();
        let chol = cov
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
        let l = chol.l();
        let log_det_k = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let chol_k = (0..horizon * horizon)
            .map(|k| l[(k / horizon, k % horizon)])
            .collect();
        Ok(Self {
            horizon,
            chol_k,
            log_det_k,
            importation_mean,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Dimension of `(R, gamma)`.
    pub fn dim(&self) -> usize {
        self.horizon + 1
    }

    pub fn importation_mean(&self) -> f64 {
        self.importation_mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.chol_k_matrix();
        &l * l.transpose()
    }

    fn chol_k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.horizon, self.horizon, &self.chol_k)
    }

    /// Start near the prior: `mu = m0`, `Sigma = 0.25 * prior covariance`.
    pub fn initial_state(&self) -> VariationalState {
        let d = self.dim();
        let mut scale_raw = vec![0.0; d * d];
        let diag = softplus_inv(0.5);
        for i in 0..d {
            scale_raw[i * d + i] = diag;
        }
        VariationalState {
            mean: vec![0.0; d],
            scale_raw,
        }
    }

    /// Maps whitened coordinates `z` to `(R, gamma) = m0 + P z`.
    fn unwhiten(&self, z: &[f64]) -> Vec<f64> {
        let t = self.horizon;
        let mut out = Vec::with_capacity(t + 1);
        for i in 0..t {
            let row = &self.chol_k[i * t..i * t + i + 1];
            out.push(1.0 + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>());
        }
        out.push(self.importation_mean * (1.0 + z[t]));
        out
    }

    /// `P^T g`.
    pub(crate) fn whiten_gradient(&self, g: &[f64]) -> Vec<f64> {
        let t = self.horizon;
        let mut out = vec![0.0; t + 1];
        for (i, &gi) in g[..t].iter().enumerate() {
            if gi != 0.0 {
                let row = &self.chol_k[i * t..i * t + i + 1];
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * gi;
                }
            }
        }
        out[t] = self.importation_mean * g[t];
        out
    }

    /// Variational mean `mu` of `(R, gamma)`.
    pub fn mean(&self, state: &VariationalState) -> Vec<f64> {
        self.unwhiten(&state.mean)
    }

    /// Cholesky factor `L` of the variational covariance.
    pub fn scale(&self, state: &VariationalState) -> DMatrix<f64> {
        let d = self.dim();
        let t = self.horizon;
        let lt = DMatrix::from_row_slice(d, d, &state.scale_tilde());
        let mut p = DMatrix::zeros(d, d);
        p.view_mut((0, 0), (t, t)).copy_from(&self.chol_k_matrix());
        p[(t, t)] = self.importation_mean;
        p * lt
    }

    pub fn variational_covariance(&self, state: &VariationalState) -> DMatrix<f64> {
        let l = self.scale(state);
        &l * l.transpose()
    }

    /// Marginal means and standard deviations of `(R, gamma)`.
    pub fn marginals(&self, state: &VariationalState) -> (Vec<f64>, Vec<f64>) {
        let l = self.scale(state);
        let sds = l.row_iter().map(|row| row.norm()).collect();
        (self.mean(state), sds)
    }

    /// `mu + L xi` for a given standard-normal vector, reusing a precomputed
    /// [`VariationalState::scale_tilde`].
    pub fn transform(&self, state: &VariationalState, scale_tilde: &[f64], xi: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d)
            .map(|i| {
                let row = &scale_tilde[i * d..i * d + i + 1];
                state.mean[i] + row.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.unwhiten(&z)
    }

    /// Draws `(R, gamma) ~ q` together with the standard-normal `xi` behind it.
    pub fn sample_q<G: Rng + ?Sized>(&self, state: &VariationalState, rng: &mut G) -> (RtTrajectory, Vec<f64>) {
        let xi: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let theta = self.transform(state, &state.scale_tilde(), &xi);
        (RtTrajectory::from_stacked(&theta), xi)
    }

    /// Chain rule from a gradient with respect to `(R, gamma)` at the sample
    /// `mu + L xi` to the variational parameters, added into `out` with the
    /// given weight. The diagonal softplus is *not* applied here; call
    /// [`GpPrior::finish_scale_gradient`] once after accumulating.
    pub fn accumulate_pullback(&self, g_theta: &[f64], xi: &[f64], weight: f64, out: &mut StateGradient) {
        let d = self.dim();
        let gw = self.whiten_gradient(g_theta);
        for (i, &g) in gw.iter().enumerate() {
            let gi = weight * g;
            if gi == 0.0 {
                continue;
            }
            out.mean[i] += gi;
            let row = &mut out.scale_raw[i * d..i * d + i + 1];
            for (o, x) in row.iter_mut().zip(xi) {
                *o += gi * x;
            }
        }
    }

    /// Converts an accumulated gradient with respect to `Ltilde` into one with
    /// respect to the raw parameters (softplus on the diagonal).
    pub fn finish_scale_gradient(&self, state: &VariationalState, grad: &mut StateGradient) {
        let d = self.dim();
        for i in 0..d {
            grad.scale_raw[i * d + i] *= sigmoid(state.scale_raw[i * d + i]);
            for j in i + 1..d {
                grad.scale_raw[i * d + j] = 0.0;
            }
        }
    }

    // mean and sd of gamma / gamma_bar under q
    fn importation_moments(&self, state: &VariationalState, lt: &[f64]) -> (f64, f64) {
        let d = self.dim();
        let t = self.horizon;
        let m = 1.0 + state.mean[t];
        let s = lt[t * d..t * d + d].iter().map(|v| v * v).sum::<f64>().sqrt();
        (m, s)
    }

    /// `E_q[log p(R, gamma)]`.
    pub fn cross_entropy(&self, state: &VariationalState) -> f64 {
        let d = self.dim();
        let t = self.horizon;
        let lt = state.scale_tilde();
        let mean_sq: f64 = state.mean[..t].iter().map(|v| v * v).sum();
        let trace: f64 = lt[..t * d].iter().map(|v| v * v).sum();
        let gaussian = -0.5 * (mean_sq + trace + t as f64 * LN_2PI + self.log_det_k);
        let (m, s) = self.importation_moments(state, &lt);
        gaussian - self.importation_mean.ln() - folded_normal_mean(m, s)
    }

    /// Entropy of `q`.
    pub fn entropy(&self, state: &VariationalState) -> f64 {
        let d = self.dim();
        let lt = state.scale_tilde();
        let log_diag: f64 = (0..d).map(|i| lt[i * d + i].ln()).sum();
        0.5 * d as f64 * (1.0 + LN_2PI)
            + 0.5 * self.log_det_k
            + self.importation_mean.ln()
            + log_diag
    }

    /// Exact gradient of `cross_entropy + entropy`.
    pub fn grad_prior_terms(&self, state: &VariationalState) -> StateGradient {
        let d = self.dim();
        let t = self.horizon;
        let lt = state.scale_tilde();
        let mut grad = StateGradient::zeros(d);
        for i in 0..t {
            grad.mean[i] = -state.mean[i];
            for j in 0..=i {
                grad.scale_raw[i * d + j] = -lt[i * d + j];
            }
        }
        let (m, s) = self.importation_moments(state, &lt);
        let (dm, ds) = folded_normal_mean_grad(m, s);
        grad.mean[t] = -dm;
        for j in 0..d {
            grad.scale_raw[t * d + j] = if s > 0.0 { -ds * lt[t * d + j] / s } else { 0.0 };
        }
        for i in 0..d {
            grad.scale_raw[i * d + i] += 1.0 / lt[i * d + i];
        }
        self.finish_scale_gradient(state, &mut grad);
        grad
    }

    /// `KL(q || prior)` restricted to the `R` block, where it is exact.
    pub fn kl_reproduction_block(&self, state: &VariationalState) -> f64 {
        let d = self.dim();
        let t = self.horizon;
        let lt = state.scale_tilde();
        let mean_sq: f64 = state.mean[..t].iter().map(|v| v * v).sum();
        let frob: f64 = lt[..t * d].iter().map(|v| v * v).sum();
        let log_diag: f64 = (0..t).map(|i| lt[i * d + i].ln()).sum();
        0.5 * (mean_sq + frob - t as f64) - log_diag
    }

    /// Gaussian prior density of `R` at a point (used by tests and oracles).
    pub fn log_prior_density(&self, theta: &[f64]) -> f64 {
        let t = self.horizon;
        let l = self.chol_k_matrix();
        let centered = DVector::from_iterator(t, theta[..t].iter().map(|r| r - 1.0));
        let z = l
            .solve_lower_triangular(&centered)
            .expect("non-singular Cholesky factor");
        let gaussian = -0.5 * (z.norm_squared() + t as f64 * LN_2PI + self.log_det_k);
        gaussian - self.importation_mean.ln() - theta[t].abs() / self.importation_mean
    }
}

/// `E|u|` for `u ~ N(m, s^2)`.
fn folded_normal_mean(m: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return m.abs();
    }
    s * SQRT_2_OVER_PI * (-0.5 * (m / s).powi(2)).exp() + m * erf(m / (s * std::f64::consts::SQRT_2))
}

/// Partial derivatives of [`folded_normal_mean`] in `m` and `s`.
fn folded_normal_mean_grad(m: f64, s: f64) -> (f64, f64) {
    if s <= 0.0 {
        return (m.signum(), 0.0);
    }
    (
        erf(m / (s * std::f64::consts::SQRT_2)),
        SQRT_2_OVER_PI * (-0.5 * (m / s).powi(2)).exp(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(prior: &GpPrior, seed: u64) -> VariationalState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = prior.dim();
        let mut state = prior.initial_state();
        for v in &mut state.mean {
            *v = rng.random_range(-0.8..0.8);
        }
        for i in 0..d {
            for j in 0..=i {
                state.scale_raw[i * d + j] = rng.random_range(-0.7..0.7);
            }
        }
        state
    }

    fn identity_prior(t: usize) -> GpPrior {
        GpPrior::from_covariance(DMatrix::identity(t, t), 1.0).unwrap()
    }

    #[test]
    fn identity_kernel_cross_entropy() {
        let prior = identity_prior(2);
        let d = prior.dim();
        let mut state = prior.initial_state();
        for i in 0..2 {
            state.scale_raw[i * d + i] = softplus_inv(1.0);
        }
        // gamma: mu_gamma = 0 (nu = -1) with a vanishing sd
        state.mean[2] = -1.0;
        state.scale_raw[2 * d + 2] = -40.0;
        let ce = prior.cross_entropy(&state);
        let gaussian = -1.0 - LN_2PI;
        assert_relative_eq!(ce, gaussian, epsilon = 1e-12);
    }

    #[test]
    fn entropy_of_standard_normal() {
        let prior = identity_prior(2);
        let d = prior.dim();
        let mut state = prior.initial_state();
        for i in 0..d {
            state.scale_raw[i * d + i] = softplus_inv(1.0);
        }
        assert_relative_eq!(prior.entropy(&state), 4.2568, epsilon = 1e-4);
        for i in 0..d {
            state.scale_raw[i * d + i] = softplus_inv(2.0);
        }
        assert_relative_eq!(
            prior.entropy(&state),
            1.5 * (1.0 + LN_2PI) + 3.0 * 2f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kl_stationary_at_prior() {
        let prior = GpPrior::new(&PriorConfig::new(0.5), 6).unwrap();
        let d = prior.dim();
        let mut state = prior.initial_state();
        for i in 0..6 {
            state.scale_raw[i * d + i] = softplus_inv(1.0);
        }
        assert!(prior.kl_reproduction_block(&state).abs() < 1e-12);
        let grad = prior.grad_prior_terms(&state);
        for i in 0..6 {
            assert!(grad.mean[i].abs() < 1e-12);
            assert!(grad.scale_raw[i * d + i].abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prior = GpPrior::new(&PriorConfig::new(0.7), 4).unwrap();
        let state = random_state(&prior, 11);
        let grad = prior.grad_prior_terms(&state);
        let objective = |s: &VariationalState| prior.cross_entropy(s) + prior.entropy(s);
        let h = 1e-6;
        let d = prior.dim();
        for i in 0..d {
            let mut plus = state.clone();
            let mut minus = state.clone();
            plus.mean[i] += h;
            minus.mean[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert_relative_eq!(grad.mean[i], fd, max_relative = 1e-5, epsilon = 1e-7);
        }
        for i in 0..d {
            for j in 0..=i {
                let k = i * d + j;
                let mut plus = state.clone();
                let mut minus = state.clone();
                plus.scale_raw[k] += h;
                minus.scale_raw[k] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                assert_relative_eq!(grad.scale_raw[k], fd, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn degenerate_covariance_samples_the_mean() {
        let prior = GpPrior::new(&PriorConfig::new(0.5), 5).unwrap();
        let d = prior.dim();
        let mut state = random_state(&prior, 3);
        for i in 0..d {
            for j in 0..i {
                state.scale_raw[i * d + j] = 0.0;
            }
            state.scale_raw[i * d + i] = -60.0;
        }
        let (traj, _) = prior.sample_q(&state, &mut ChaCha8Rng::seed_from_u64(1));
        let mu = prior.mean(&state);
        for (a, b) in traj.r.iter().zip(&mu) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(traj.gamma, mu[5], epsilon = 1e-12);
    }

    #[test]
    fn scale_is_lower_triangular_factor() {
        let prior = GpPrior::new(&PriorConfig::new(0.5), 5).unwrap();
        let state = random_state(&prior, 8);
        let l = prior.scale(&state);
        for i in 0..prior.dim() {
            assert!(l[(i, i)] > 0.0);
            for j in i + 1..prior.dim() {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        // transform agrees with mu + L xi
        let xi = vec![0.3, -1.2, 0.5, 2.0, -0.1, 0.9];
        let theta = prior.transform(&state, &state.scale_tilde(), &xi);
        let expected = DVector::from_vec(prior.mean(&state)) + &l * DVector::from_vec(xi);
        for (a, b) in theta.iter().zip(expected.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn tiny_jitter_failure_is_reported() {
        let mut config = PriorConfig::new(1.0);
        config.kernel.jitter = 0.0;
        config.kernel.lengthscale = 50.0;
        let err = GpPrior::new(&config, 60).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn state_json_keys() {
        let prior = identity_prior(1);
        let json = serde_json::to_value(prior.initial_state()).unwrap();
        assert!(json.get("mu").is_some() && json.get("l_raw").is_some());
    }
}
