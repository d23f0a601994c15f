//! Learning dynamics of linear diffusion denoisers.
//!
//! A linear or affine denoiser trained by gradient flow on Gaussian data
//! learns each eigenmode of the data covariance on its own timescale,
//! roughly inversely proportional to the mode's variance. This crate gives
//! the closed-form weight trajectories for several architectures and loss
//! variants, the distributions produced by sampling with the partially
//! trained denoiser, and brute-force references that check them.
//!
//! ```
//! use lindiff::pf_sampler::{generated_variance, NoiseSchedule, PhiFactor};
//!
//! let phi = PhiFactor::Converged { lambda: 2.0 };
//! let v = generated_variance(&phi, &NoiseSchedule::default()).unwrap();
//! assert!((v - 2.0).abs() < 1e-3);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod closed_form_dynamics;
pub mod conv_dynamics;
pub mod error;
pub mod flow_matching_dynamics;
pub mod gaussian_model;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod ode;
pub mod oracle;
pub mod pf_sampler;
pub mod quad;
pub mod special_fn;

pub use analysis::{Branch, EmergenceCriterion, GrayZone, PowerLawFit};
pub use closed_form_dynamics::{Architecture, DynamicsConfig, LossVariant, ModeTrajectory, Schedule, VariantTag};
pub use error::{Error, Result};
pub use gaussian_model::{CovarianceModel, DataMoments, SpectrumSpec};
pub use metrics::ModeKL;
pub use ode::OdeSolveConfig;
pub use pf_sampler::{GeneratedDistribution, NoiseSchedule, PhiFactor};

pub use nalgebra::{DMatrix, DVector};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
