//! Constrained sampling of score-based diffusion models.
//!
//! The crate is organised around a variance-exploding diffusion process
//! ([`sde`]), a small MLP denoiser with its own reverse-mode tape ([`nn`]),
//! differentiable constraint functions ([`constraints`]) and a family of
//! samplers ([`samplers`]) including Predict-Project-Renoise, which enforces
//! a hard constraint on the denoised estimate and then restores the noise
//! level with the forward kernel.
//!
//! Ground truth for the two-dimensional studies comes from rejection sampling
//! the diffusion prior ([`oracle`]); the [`metrics`] module holds the
//! distributional and ensemble scores used to compare samplers.

pub mod cloud;
pub mod constraints;
pub mod datagen;
pub mod denoiser;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod projection;
pub mod rng;
pub mod samplers;
pub mod sde;
pub mod study;

pub use cloud::PointCloud;
pub use constraints::{AnyConstraint, Constraint};
pub use denoiser::{Denoiser, GaussianDenoiser, IdentityDenoiser};
pub use error::{Error, Result};
pub use nn::{DenoiserNet, NetConfig};
pub use projection::{LambdaSchedule, ProjectionConfig, ProjectionResult};
pub use samplers::{Method, SampleRun, SamplerConfig};
pub use study::{Data2dConfig, KsConfig};
pub use sde::{NoiseSchedule, Spacing};
