//! Semiparametric Bayesian inference for the partially linear model
//! `Y = X'β + η(W) + ε` under the Robinson parametrization `(β, m₁, m₂)` and
//! the direct parametrization `(β, η)`.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the `*F64` aliases at the crate root cover the usual
//! double-precision case.

pub mod config;
pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod frequentist;
pub mod model;
pub mod priors;
pub mod samplers;
pub mod scalar;
pub mod seeding;
pub mod special;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use scalar::Real;

pub type DatasetF64 = model::Dataset<f64>;
pub type DatasetF32 = model::Dataset<f32>;
pub type ModelConfigF64 = model::ModelConfig<f64>;
pub type TrueFunctionsF64 = dgp::TrueFunctions<f64>;
pub type GaussianReferenceF64 = frequentist::GaussianReference<f64>;
pub type PriorSpecF64 = priors::PriorSpec<f64>;
pub type PosteriorDrawsF64 = samplers::PosteriorDraws<f64>;
pub type SamplerSpecF64 = samplers::SamplerSpec<f64>;
pub type ExperimentF64 = diagnostics::Experiment<f64>;
