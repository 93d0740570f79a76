//! Estimating the time-varying reproduction number `R_t` from sparse,
//! partially observed test counts.
//!
//! The generative model has three layers:
//!
//! 1. `R_1..R_T` and a constant importation rate `gamma` drive a Poisson
//!    branching process of daily infections ([`disease`]);
//! 2. each infected person tests positive during a window drawn from a
//!    [`test_profile::TestProfile`];
//! 3. a testing program turns those windows into daily positive counts
//!    ([`observation`]).
//!
//! [`svi::fit`] approximates the posterior over `(R, gamma)` with a Gaussian
//! under a GP prior ([`gp_prior`]), using a score-function gradient through
//! the discrete infection series. [`cori`] is the sliding-window baseline and
//! [`eval`] runs synthetic benchmarks built from [`scenarios`].
//!
//! ```
//! use rtinfer::prelude::*;
//!
//! let config = DiseaseConfig::new(5_000, 30);
//! let truth = RtTrajectory::constant(1.3, 30, 0.5);
//! let n = simulate_seeded(&truth, &config, 7).unwrap();
//! assert_eq!(n.horizon(), 30);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cori;
pub mod disease;
pub mod error;
pub mod eval;
pub mod gp_prior;
pub mod io;
pub mod math;
pub mod observation;
pub mod rng;
pub mod scenarios;
pub mod svi;
pub mod test_profile;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::cori::{cori_posterior, CoriConfig, GammaPosterior};
    pub use crate::disease::{
        compute_phi, grad_log_density, log_density, simulate, simulate_seeded, DiseaseConfig, InfectionSeries,
        InfectiousnessProfile, RtTrajectory,
    };
    pub use crate::error::{Error, Result};
    pub use crate::eval::{calibration_curve, mae, run_benchmark, BenchmarkConfig, Method, MethodPosterior};
    pub use crate::gp_prior::{GpKernelConfig, GpPrior, PriorConfig, VariationalState};
    pub use crate::observation::{Likelihood, ObservationModel, ObservationScheme, ObservationSeries};
    pub use crate::rng::stream_rng;
    pub use crate::scenarios::{generate_scenario, ScenarioConfig, ScenarioKind};
    pub use crate::svi::{estimate_elbo, estimate_gradient, fit, ControlVariate, Model, PosteriorSummary, SviConfig};
    pub use crate::test_profile::{TestKind, TestProfile};
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/observation.md")]
    struct Observation;
    #[doc = include_str!("../../../book/src/inference.md")]
    struct Inference;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
}
