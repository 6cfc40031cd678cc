//! Hierarchical Faber–Schauder series on `[0, 1]`.
//!
//! Level 0 holds the constant scaling function `ψ₀₀ ≡ 1`. Level `l ≥ 1`
//! holds `2^l` hats, `ψ_lk` supported on `[k 2^-l, (k+1) 2^-l]` with apex
//! value `2^(l/2)` at the midpoint and zero at both endpoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Coefficients `c_lk`, `levels[l].len() == 2^l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletCoefficients<T> {
    levels: Vec<Vec<T>>,
}

impl<T: Real> WaveletCoefficients<T> {
    pub fn zeros(max_level: usize) -> Self {
        Self {
            levels: (0..=max_level).map(|l| vec![T::zero(); 1 << l]).collect(),
        }
    }

    pub fn from_levels(levels: Vec<Vec<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidData("at least one level required".into()));
        }
        for (l, lv) in levels.iter().enumerate() {
            if lv.len() != 1 << l {
                return Err(Error::Dimension(format!(
                    "level {l} has {} coefficients, expected {}",
                    lv.len(),
                    1 << l
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, l: usize) -> &[T] {
        &self.levels[l]
    }

    pub fn get(&self, l: usize, k: usize) -> T {
        self.levels[l][k]
    }

    pub fn set(&mut self, l: usize, k: usize, v: T) {
        self.levels[l][k] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(l, lv)| lv.iter().enumerate().map(move |(k, c)| (l, k, *c)))
    }

    /// `sup_l max_k 2^(l(α+1/2)) |c_lk|`.
    pub fn weighted_sup_norm(&self, alpha: T) -> T {
        self.iter().fold(T::zero(), |acc, (l, _, c)| {
            let w = T::lit(2f64.powf(l as f64 * (alpha.as_f64() + 0.5)));
            acc.max(w * c.abs())
        })
    }
}

/// Index of the level-`l` hat whose support contains `w`.
#[inline]
pub(crate) fn cell_index(l: usize, w: f64) -> usize {
    let cells = 1usize << l;
    ((w * cells as f64).floor() as usize).min(cells - 1)
}

#[inline]
pub(crate) fn hat_value(l: usize, k: usize, w: f64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let scale = (1u64 << l) as f64;
    let t = (scale * w - k as f64 - 0.5).abs();
    if t >= 0.5 {
        0.0
    } else {
        scale.sqrt() * (1.0 - 2.0 * t)
    }
}

/// `ψ_lk(w)`.
pub fn basis_eval<T: Real>(l: usize, k: usize, w: T) -> Result<T> {
    if l >= 63 || k >= 1 << l {
        return Err(Error::Index(format!("(l={l}, k={k}) requires k < 2^l")));
    }
    let w = w.as_f64();
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Index(format!("w={w} outside [0, 1]")));
    }
    Ok(T::lit(hat_value(l, k, w)))
}

/// `Σ_l Σ_k c_lk ψ_lk(w)`; only one hat per level is non-zero at `w`.
pub fn series_eval<T: Real>(coeffs: &WaveletCoefficients<T>, w: T) -> T {
    let w = w.as_f64().clamp(0.0, 1.0);
    let mut acc = 0.0;
    for (l, lv) in coeffs.levels.iter().enumerate() {
        let k = cell_index(l, w);
        acc += lv[k].as_f64() * hat_value(l, k, w);
    }
    T::lit(acc)
}

/// Uniform wavelet-series prior: `c_lk = 2^(−l(α₀+1/2)) ν_lk`,
/// `ν_lk ~ Uniform[−M, M]`, truncated at `max_level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveletPriorSpec<T> {
    pub alpha0: T,
    #[serde(rename = "M")]
    pub bound: T,
    /// Defaults to `⌈log₂ n⌉` when absent.
    #[serde(default)]
    pub max_level: Option<usize>,
}

impl<T: Real> WaveletPriorSpec<T> {
    pub fn new(alpha0: T, bound: T, max_level: Option<usize>) -> Self {
        Self {
            alpha0,
            bound,
            max_level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > T::zero()) || !(self.bound > T::zero()) {
            return Err(Error::InvalidConfig(
                "wavelet prior needs alpha0 > 0 and M > 0".into(),
            ));
        }
        Ok(())
    }

    /// The Hölder-ball theory needs `α₀ > 1/2`; smaller values still run.
    pub fn below_smoothness_threshold(&self) -> bool {
        self.alpha0 <= T::lit(0.5)
    }

    pub fn resolved_max_level(&self, n: usize) -> usize {
        self.max_level.unwrap_or_else(|| default_max_level(n))
    }

    /// Support half-width `M 2^(−l(α₀+1/2))` of coefficient `c_lk`.
    pub fn coefficient_bound(&self, l: usize) -> T {
        self.bound * T::lit(2f64.powf(-(l as f64) * (self.alpha0.as_f64() + 0.5)))
    }
}

/// `⌈log₂ n⌉`.
pub fn default_max_level(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

pub fn sample_wavelet_prior<T: Real, R: Rng + ?Sized>(
    spec: &WaveletPriorSpec<T>,
    max_level: usize,
    rng: &mut R,
) -> WaveletCoefficients<T> {
    let m = spec.bound.as_f64();
    let levels = (0..=max_level)
        .map(|l| {
            let decay = 2f64.powf(-(l as f64) * (spec.alpha0.as_f64() + 0.5));
            (0..1usize << l)
                .map(|_| {
                    let raw = T::lit(decay * rng.random_range(-m..=m));
                    let cap = spec.coefficient_bound(l);
                    raw.min(cap).max(-cap)
                })
                .collect()
        })
        .collect();
    WaveletCoefficients { levels }
}
