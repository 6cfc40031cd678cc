//! Distance between posterior draws and the Gaussian limit.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::frequentist::GaussianReference;
use crate::samplers::{empirical_quantile, PosteriorDraws};
use crate::scalar::Real;
use crate::special::{std_normal_cdf, std_normal_quantile};

pub const MIN_BVM_DRAWS: usize = 500;
pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
pub const SCHEMA_VERSION: u32 = 1;
pub const TV_PROXY_NOTE: &str = "total variation is not estimable from draws without smoothing; \
     Kolmogorov-Smirnov and Wasserstein-1 distances are reported as proxies";

/// One-sample Kolmogorov–Smirnov statistic against an arbitrary CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

pub fn ks_statistic_normal(sample: &[f64], mean: f64, sd: f64) -> f64 {
    ks_statistic(sample, |x| std_normal_cdf((x - mean) / sd))
}

/// Asymptotic Kolmogorov tail probability `P(D_n ≥ d)` with Stephens'
/// small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let x = (sn + 0.12 + 0.11 / sn) * d;
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `W₁` between the empirical law of `sample` and `N(mean, sd²)`, using the
/// reference quantiles at the plotting positions `(i − 1/2)/N`.
pub fn wasserstein1_normal(sample: &[f64], mean: f64, sd: f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (x - (mean + sd * std_normal_quantile((i as f64 + 0.5) / n))).abs())
        .sum::<f64>()
        / n
}

/// `W₁ = ∫ |F_a − F_b|` between two empirical laws.
pub fn wasserstein1_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - last);
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        last = next;
    }
    total
}

/// Per-coordinate comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateBvm {
    pub name: String,
    pub ks: f64,
    pub ks_p_value: f64,
    pub wasserstein1: f64,
    /// `|c_n(q) − (center + Φ⁻¹(q) sd)| / sd`, keyed by `q`.
    pub quantile_gaps: BTreeMap<String, f64>,
    pub posterior_mean: f64,
    pub posterior_median: f64,
    pub reference_center: f64,
    pub reference_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvmReport {
    pub schema_version: u32,
    pub n: usize,
    pub draws: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Largest per-coordinate KS statistic.
    pub ks: f64,
    /// Largest per-coordinate Wasserstein-1 distance.
    pub wasserstein1: f64,
    /// Largest gap per quantile level across coordinates.
    pub quantile_gaps: BTreeMap<String, f64>,
    pub coordinates: Vec<CoordinateBvm>,
    /// KS of the Mahalanobis distances against `χ²_d` when `d > 1`.
    pub mahalanobis_ks: Option<f64>,
    pub note: String,
}

impl BvmReport {
    pub fn with_provenance(mut self, seed: u64, config_hash: impl Into<String>) -> Self {
        self.seed = seed;
        self.config_hash = config_hash.into();
        self
    }
}

fn quantile_key(q: f64) -> String {
    format!("{q:.2}")
}

/// Compares the rows of `theta` (draws × d) with `reference`.
pub fn bvm_from_matrix(
    theta: &DMatrix<f64>,
    names: &[String],
    reference: &GaussianReference<f64>,
) -> Result<BvmReport> {
    let draws = theta.nrows();
    let d = reference.dim();
    if draws < MIN_BVM_DRAWS {
        return Err(Error::TooFewDraws {
            needed: MIN_BVM_DRAWS,
            got: draws,
        });
    }
    if theta.ncols() != d || names.len() != d {
        return Err(Error::Dimension(format!(
            "draws have {} columns, reference has {d}",
            theta.ncols()
        )));
    }
    let mut coordinates = Vec::with_capacity(d);
    for k in 0..d {
        let col: Vec<f64> = theta.column(k).iter().copied().collect();
        let (center, sd) = (reference.center[k], reference.sd(k));
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        let quantile_gaps = QUANTILE_LEVELS
            .iter()
            .map(|&q| {
                let gap = (empirical_quantile(&sorted, q) - reference.reference_quantile(k, q))
                    .abs()
                    / sd;
                (quantile_key(q), gap)
            })
            .collect();
        let ks = ks_statistic_normal(&col, center, sd);
        coordinates.push(CoordinateBvm {
            name: names[k].clone(),
            ks,
            ks_p_value: kolmogorov_p_value(ks, draws),
            wasserstein1: wasserstein1_normal(&col, center, sd),
            quantile_gaps,
            posterior_mean: col.iter().sum::<f64>() / draws as f64,
            posterior_median: empirical_quantile(&sorted, 0.5),
            reference_center: center,
            reference_sd: sd,
        });
    }
    let mahalanobis_ks = if d > 1 {
        let chol = reference
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("reference covariance".into()))?;
        let dist: Vec<f64> = (0..draws)
            .map(|i| {
                let dev = theta.row(i).transpose() - &reference.center;
                dev.dot(&chol.solve(&dev))
            })
            .collect();
        let chi2 = ChiSquared::new(d as f64).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Some(ks_statistic(&dist, |x| chi2.cdf(x)))
    } else {
        None
    };
    let mut quantile_gaps = BTreeMap::new();
    for c in &coordinates {
        for (q, g) in &c.quantile_gaps {
            let e = quantile_gaps.entry(q.clone()).or_insert(0.0f64);
            *e = e.max(*g);
        }
    }
    Ok(BvmReport {
        schema_version: SCHEMA_VERSION,
        n: reference.n,
        draws,
        seed: 0,
        config_hash: String::new(),
        ks: coordinates.iter().map(|c| c.ks).fold(0.0, f64::max),
        wasserstein1: coordinates
            .iter()
            .map(|c| c.wasserstein1)
            .fold(0.0, f64::max),
        quantile_gaps,
        coordinates,
        mahalanobis_ks,
        note: TV_PROXY_NOTE.to_string(),
    })
}

/// Compares posterior draws with the reference. A reference of dimension
/// `dx + 1` is matched against `(β, ξ)` draws, one of dimension `dx` against β.
pub fn bvm_distance<T: Real>(
    draws: &PosteriorDraws<T>,
    reference: &GaussianReference<T>,
) -> Result<BvmReport> {
    let dx = draws.dx();
    let d = reference.dim();
    let with_xi = d == dx + 1;
    if d != dx && !with_xi {
        return Err(Error::Dimension(format!(
            "reference dimension {d} does not match dx={dx}"
        )));
    }
    let xi = match (with_xi, &draws.xi) {
        (true, Some(xi)) => Some(xi),
        (true, None) => {
            return Err(Error::Dimension(
                "reference has a precision coordinate but the chain has none".into(),
            ))
        }
        (false, _) => None,
    };
    let theta = DMatrix::from_fn(draws.n_draws(), d, |i, k| {
        if k < dx {
            draws.beta[(i, k)].as_f64()
        } else {
            xi.expect("checked")[i].as_f64()
        }
    });
    let mut names: Vec<String> = (1..=dx).map(|k| format!("beta{k}")).collect();
    if with_xi {
        names.push("xi".into());
    }
    let reference = GaussianReference::new(
        reference.center.map(|v| v.as_f64()),
        reference.covariance.map(|v| v.as_f64()),
        reference.n,
    )?;
    Ok(bvm_from_matrix(&theta, &names, &reference)?
        .with_provenance(draws.meta.config.seed, String::new()))
}
