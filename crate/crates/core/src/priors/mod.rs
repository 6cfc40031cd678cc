//! Nuisance priors: Matérn Gaussian processes and uniform wavelet series.

mod gram;
mod matern;
mod wavelet;

use serde::{Deserialize, Serialize};

pub(crate) use gram::standard_normal_vector;
pub use gram::{
    gram_and_factor, gram_matrix, sample_gp, GramFactor, SpectralFactor, JITTER_LADDER,
};
pub use matern::{matern_kernel, MaternSpec};
pub use wavelet::{
    basis_eval, default_max_level, sample_wavelet_prior, series_eval, WaveletCoefficients,
    WaveletPriorSpec,
};
pub(crate) use wavelet::{cell_index, hat_value};

use crate::error::Result;
use crate::scalar::Real;

/// Prior for one nuisance function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NuisancePrior<T: Real> {
    Matern(MaternSpec<T>),
    Wavelet(WaveletPriorSpec<T>),
}

impl<T: Real> NuisancePrior<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            NuisancePrior::Matern(s) => s.validate(),
            NuisancePrior::Wavelet(s) => s.validate(),
        }
    }
}

/// Independent priors for `m₁` and for every coordinate of `m₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec<T: Real> {
    pub m1: NuisancePrior<T>,
    pub m2: NuisancePrior<T>,
}

impl<T: Real> PriorSpec<T> {
    pub fn matern(alpha1: T, alpha2: T) -> Self {
        Self {
            m1: NuisancePrior::Matern(MaternSpec::with_alpha(alpha1)),
            m2: NuisancePrior::Matern(MaternSpec::with_alpha(alpha2)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.m1.validate()?;
        self.m2.validate()
    }
}
