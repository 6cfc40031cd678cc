use rand::Rng;

use crate::error::{Error, Result};
use crate::priors::{WaveletCoefficients, WaveletPriorSpec};
use crate::scalar::Real;

/// Gaussian likelihood of one coefficient `c` with the others held fixed:
/// `log f(c) = −(a c² − 2 b c) / (2 noise_var)`, where `a = Σ ψ(wᵢ)²` and
/// `b = Σ ψ(wᵢ) eᵢ` over the partial residuals `eᵢ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientLikelihood {
    pub a: f64,
    pub b: f64,
    pub noise_var: f64,
}

impl CoefficientLikelihood {
    pub const FLAT: Self = Self {
        a: 0.0,
        b: 0.0,
        noise_var: 1.0,
    };

    pub fn log_density(&self, c: f64) -> f64 {
        -(self.a * c * c - 2.0 * self.b * c) / (2.0 * self.noise_var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceOutcome<T> {
    pub value: T,
    /// Likelihood evaluations spent on the shrinkage loop.
    pub evaluations: usize,
}

pub const MAX_SHRINK_STEPS: usize = 100;

/// One slice-sampling transition for `c_lk` under its uniform prior on
/// `[−M 2^(−l(α₀+1/2)), M 2^(−l(α₀+1/2))]`. The bracket starts at the whole
/// support and shrinks towards the current value.
pub fn slice_update_wavelet<T: Real, R: Rng + ?Sized>(
    coeffs: &mut WaveletCoefficients<T>,
    l: usize,
    k: usize,
    likelihood: &CoefficientLikelihood,
    spec: &WaveletPriorSpec<T>,
    rng: &mut R,
) -> Result<SliceOutcome<T>> {
    if l > coeffs.max_level() || k >= coeffs.level(l).len() {
        return Err(Error::Index(format!(
            "coefficient (l={l}, k={k}) not present"
        )));
    }
    let bound = spec.coefficient_bound(l).as_f64();
    let current = coeffs.get(l, k).as_f64();
    if current.abs() > bound {
        return Err(Error::InvalidData(format!(
            "coefficient (l={l}, k={k}) = {current} outside its support ±{bound}"
        )));
    }
    let log_level = likelihood.log_density(current) + (1.0 - rng.random::<f64>()).ln();
    let (mut lo, mut hi) = (-bound, bound);
    for step in 1..=MAX_SHRINK_STEPS {
        let cand = lo + rng.random::<f64>() * (hi - lo);
        if likelihood.log_density(cand) >= log_level {
            let value = T::lit(cand);
            coeffs.set(l, k, value);
            return Ok(SliceOutcome {
                value,
                evaluations: step,
            });
        }
        if cand < current {
            lo = cand;
        } else {
            hi = cand;
        }
    }
    Err(Error::SliceShrinkage(MAX_SHRINK_STEPS))
}
