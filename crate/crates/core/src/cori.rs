//! Sliding-window conjugate gamma estimate of R_t (Cori et al.).
//!
//! The estimator treats the observed counts as if they were incidence. It is
//! kept deliberately naive about partial observation apart from shifting the
//! estimates back by a fixed delay.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::disease::InfectiousnessProfile;
use crate::error::{Error, Result};
use crate::observation::{ObservationScheme, ObservationSeries};
use crate::test_profile::TestProfile;

fn default_window() -> usize {
    7
}
fn default_shape() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoriConfig {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_shape")]
    pub prior_shape: f64,
    #[serde(default = "default_scale")]
    pub prior_scale: f64,
    /// Days between infection and the observation it shows up in.
    #[serde(default)]
    pub mean_delay_shift: u32,
}

impl Default for CoriConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            prior_shape: default_shape(),
            prior_scale: default_scale(),
            mean_delay_shift: 0,
        }
    }
}

impl CoriConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("cori window must be at least 1"));
        }
        if !(self.prior_shape > 0.0 && self.prior_scale > 0.0) {
            return Err(Error::config("cori prior shape and scale must be positive"));
        }
        Ok(())
    }
}

/// Gamma posterior over one day's R, parameterized by shape and scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPosterior {
    pub shape: f64,
    pub scale: f64,
}

impl GammaPosterior {
    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn sd(&self) -> f64 {
        self.shape.sqrt() * self.scale
    }

    pub fn quantile(&self, p: f64) -> f64 {
        Gamma::new(self.shape, 1.0 / self.scale)
            .expect("positive gamma parameters")
            .inverse_cdf(p)
    }
}

/// Per-day posteriors; `None` where the window is incomplete, runs past the
/// data after shifting, or carries no infectiousness.
pub fn cori_posterior(
    x: &ObservationSeries,
    profile: &InfectiousnessProfile,
    config: &CoriConfig,
) -> Result<Vec<Option<GammaPosterior>>> {
    config.validate()?;
    let horizon = x.horizon();
    let shift = config.mean_delay_shift as usize;
    // shifted[s - 1] is the count attributed to infections on day s
    let shifted: Vec<Option<f64>> = (1..=horizon)
        .map(|s| x.counts.get(s + shift - 1).map(|&c| c as f64))
        .collect();
    let lambda: Vec<f64> = (1..=horizon)
        .map(|s| {
            (1..s)
                .map(|h| shifted[s - h - 1].unwrap_or(0.0) * profile.weight(h))
                .sum()
        })
        .collect();

    let inv_scale = 1.0 / config.prior_scale;
    Ok((1..=horizon)
        .map(|t| {
            if t < config.window || t + shift > horizon {
                return None;
            }
            let days = t + 1 - config.window..=t;
            let cases: f64 = days.clone().map(|s| shifted[s - 1].unwrap_or(0.0)).sum();
            let load: f64 = days.map(|s| lambda[s - 1]).sum();
            (load > 0.0).then(|| GammaPosterior {
                shape: config.prior_shape + cases,
                scale: 1.0 / (inv_scale + load),
            })
        })
        .collect())
}

/// Typical days from infection to the observation it produces, rounded.
///
/// Uniform testing reports at conversion plus the mean reporting delay;
/// cross-sectional counts track prevalence, centred half a positive episode
/// after conversion; cohorts are tested on average half a cadence after
/// conversion.
pub fn mean_detection_delay(scheme: &ObservationScheme, profile: &TestProfile) -> u32 {
    let convert = profile.mean_convert_offset();
    let extra = match scheme {
        ObservationScheme::UniformUndersampling { delay_pmf, .. } => {
            delay_pmf.iter().map(|&(d, p)| d as f64 * p).sum::<f64>()
        }
        ObservationScheme::CrossSectional { .. } => {
            let mean_duration: f64 = profile
                .duration_pmf()
                .iter()
                .map(|&(d, p)| d as f64 * p)
                .sum();
            // long-lived positives (serology) never centre; cap at two weeks
            (mean_duration / 2.0).min(14.0)
        }
        ObservationScheme::Longitudinal { cadence, .. } => *cadence as f64 / 2.0,
    };
    (convert + extra).round() as u32
}
