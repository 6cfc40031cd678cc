use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::scaled_bessel_k;

/// Matérn Gaussian-process prior with smoothness `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaternSpec<T> {
    pub alpha: T,
    pub lengthscale: T,
    pub amplitude: T,
    pub jitter: T,
}

impl<T: Real> Default for MaternSpec<T> {
    fn default() -> Self {
        Self {
            alpha: T::one(),
            lengthscale: T::one(),
            amplitude: T::one(),
            jitter: T::lit(1e-8),
        }
    }
}

impl<T: Real> MaternSpec<T> {
    pub fn with_alpha(alpha: T) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha > T::zero()
            && self.lengthscale > T::zero()
            && self.amplitude > T::zero()
            && self.jitter > T::zero()
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "Matérn fields must all be positive".into(),
            ))
        }
    }
}

/// Precomputed constants of the kernel for a fixed spec and dimension.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MaternKernel {
    nu: f64,
    inv_lengthscale: f64,
    scale: f64,
}

impl MaternKernel {
    pub(crate) fn new<T: Real>(spec: &MaternSpec<T>, dw: usize) -> Self {
        let nu = spec.alpha.as_f64();
        let half_d = dw as f64 / 2.0;
        let scale =
            spec.amplitude.as_f64() * std::f64::consts::PI.powf(half_d) * 2f64.powf(1.0 - nu)
                / gamma(nu + half_d);
        Self {
            nu,
            inv_lengthscale: 1.0 / spec.lengthscale.as_f64(),
            scale,
        }
    }

    #[inline]
    pub(crate) fn at_distance(&self, h: f64) -> f64 {
        self.scale * scaled_bessel_k(self.nu, h * self.inv_lengthscale)
    }
}

/// Matérn covariance `κ_α(w_s, w_t)`, normalized to equal the spectral
/// integral `∫ exp(−iλ'(w_s − w_t)) (1 + ‖λ‖²)^(−α − d/2) dλ` at unit
/// lengthscale and amplitude:
///
/// ```text
/// κ(h) = amplitude · π^(d/2) 2^(1−α) / Γ(α + d/2) · (h/ℓ)^α K_α(h/ℓ)
/// ```
///
/// so that `d = 1, α = 1/2` gives `π e^(−|h|)`.
pub fn matern_kernel<T: Real>(ws: &[T], wt: &[T], spec: &MaternSpec<T>) -> T {
    debug_assert_eq!(ws.len(), wt.len());
    let h = ws
        .iter()
        .zip(wt)
        .map(|(a, b)| {
            let d = (*a - *b).as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    T::lit(MaternKernel::new(spec, ws.len()).at_distance(h))
}
