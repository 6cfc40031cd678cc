//! Conditional updates used by the Gibbs samplers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::priors::{
    cell_index, hat_value, sample_wavelet_prior, standard_normal_vector, SpectralFactor,
    WaveletCoefficients, WaveletPriorSpec,
};
use crate::scalar::Real;
use crate::special::{std_normal_cdf, std_normal_quantile};

use super::slice::{slice_update_wavelet, CoefficientLikelihood};

/// A nuisance function represented by its values at the design points,
/// updated from the Gaussian pseudo-regression `obs = f + e`,
/// `e ~ N(0, noise_var · I)`.
pub trait FunctionBlock<T: Real>: Send {
    fn values(&self) -> &DVector<T>;

    fn draw_prior(&mut self, rng: &mut ChaCha8Rng) -> Result<()>;

    fn set_zero(&mut self);

    /// One draw (or one invariant transition) from the conditional posterior.
    fn update(&mut self, obs: &DVector<T>, noise_var: T, rng: &mut ChaCha8Rng) -> Result<()>;

    /// Fraction of accepted proposals for non-conjugate updates.
    fn acceptance_rate(&self) -> Option<f64> {
        None
    }

    /// `Cov(obs)⁻¹ rhs` with the function integrated out, for Gaussian blocks.
    fn marginal_solve(&self, _rhs: &DMatrix<T>, _noise_var: T) -> Option<DMatrix<T>> {
        None
    }
}

/// Conjugate Gaussian-process block.
#[derive(Debug, Clone)]
pub struct GpBlock<T: Real> {
    factor: Arc<SpectralFactor<T>>,
    values: DVector<T>,
}

impl<T: Real> GpBlock<T> {
    pub fn new(factor: Arc<SpectralFactor<T>>) -> Self {
        let n = factor.n();
        Self {
            factor,
            values: DVector::zeros(n),
        }
    }
}

impl<T: Real> FunctionBlock<T> for GpBlock<T> {
    fn values(&self) -> &DVector<T> {
        &self.values
    }

    fn draw_prior(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.values = self.factor.sample_prior(rng);
        Ok(())
    }

    fn set_zero(&mut self) {
        self.values.fill(T::zero());
    }

    fn update(&mut self, obs: &DVector<T>, noise_var: T, rng: &mut ChaCha8Rng) -> Result<()> {
        self.values = self.factor.sample_posterior(obs, noise_var, rng);
        Ok(())
    }

    fn marginal_solve(&self, rhs: &DMatrix<T>, noise_var: T) -> Option<DMatrix<T>> {
        Some(self.factor.marginal_solve(rhs, noise_var))
    }
}

/// Uniform wavelet-series block updated by coordinatewise slice sampling,
/// coarse levels first. Controls must be one-dimensional.
#[derive(Debug, Clone)]
pub struct WaveletBlock<T: Real> {
    spec: WaveletPriorSpec<T>,
    coeffs: WaveletCoefficients<T>,
    /// `support[l][k]` lists `(i, ψ_lk(w_i))` for the points where the hat is non-zero.
    support: Vec<Vec<Vec<(usize, f64)>>>,
    values: DVector<T>,
    evaluations: u64,
    steps: u64,
}

impl<T: Real> WaveletBlock<T> {
    pub fn new(w: &DMatrix<T>, spec: WaveletPriorSpec<T>) -> Result<Self> {
        spec.validate()?;
        if w.ncols() != 1 {
            return Err(Error::InvalidConfig(format!(
                "wavelet priors need one control coordinate, data has {}",
                w.ncols()
            )));
        }
        let n = w.nrows();
        let max_level = spec.resolved_max_level(n);
        let mut support: Vec<Vec<Vec<(usize, f64)>>> =
            (0..=max_level).map(|l| vec![Vec::new(); 1 << l]).collect();
        for i in 0..n {
            let wi = w[(i, 0)].as_f64();
            for (l, level) in support.iter_mut().enumerate() {
                let k = cell_index(l, wi);
                let psi = hat_value(l, k, wi);
                if psi != 0.0 {
                    level[k].push((i, psi));
                }
            }
        }
        Ok(Self {
            spec,
            coeffs: WaveletCoefficients::zeros(max_level),
            support,
            values: DVector::zeros(n),
            evaluations: 0,
            steps: 0,
        })
    }

    pub fn coefficients(&self) -> &WaveletCoefficients<T> {
        &self.coeffs
    }

    fn refresh_values(&mut self) {
        self.values.fill(T::zero());
        for (l, level) in self.support.iter().enumerate() {
            for (k, pts) in level.iter().enumerate() {
                let c = self.coeffs.get(l, k);
                for &(i, psi) in pts {
                    self.values[i] += c * T::lit(psi);
                }
            }
        }
    }
}

impl<T: Real> FunctionBlock<T> for WaveletBlock<T> {
    fn values(&self) -> &DVector<T> {
        &self.values
    }

    fn draw_prior(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.coeffs = sample_wavelet_prior(&self.spec, self.coeffs.max_level(), rng);
        self.refresh_values();
        Ok(())
    }

    fn set_zero(&mut self) {
        self.coeffs = WaveletCoefficients::zeros(self.coeffs.max_level());
        self.values.fill(T::zero());
    }

    fn update(&mut self, obs: &DVector<T>, noise_var: T, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut resid: Vec<f64> = obs
            .iter()
            .zip(self.values.iter())
            .map(|(o, v)| (*o - *v).as_f64())
            .collect();
        let noise_var = noise_var.as_f64();
        for l in 0..self.support.len() {
            for k in 0..self.support[l].len() {
                let pts = &self.support[l][k];
                let old = self.coeffs.get(l, k).as_f64();
                let (mut a, mut b) = (0.0, 0.0);
                for &(i, psi) in pts {
                    a += psi * psi;
                    b += psi * (resid[i] + old * psi);
                }
                let lik = CoefficientLikelihood { a, b, noise_var };
                let outcome = slice_update_wavelet(&mut self.coeffs, l, k, &lik, &self.spec, rng)?;
                self.evaluations += outcome.evaluations as u64;
                self.steps += 1;
                let delta = self.coeffs.get(l, k).as_f64() - old;
                if delta != 0.0 {
                    for &(i, psi) in pts {
                        resid[i] -= delta * psi;
                    }
                }
            }
        }
        self.values = DVector::from_fn(obs.len(), |i, _| obs[i] - T::lit(resid[i]));
        Ok(())
    }

    fn acceptance_rate(&self) -> Option<f64> {
        (self.evaluations > 0).then(|| self.steps as f64 / self.evaluations as f64)
    }
}

/// Function restricted to a finite set of values at every design point with
/// independent categorical priors; its conditional is enumerated exactly.
#[derive(Debug, Clone)]
pub struct GridBlock<T: Real> {
    /// `grid[i]` holds the admissible values at point `i`.
    grid: Vec<Vec<T>>,
    /// Prior log-weights, same shape as `grid`.
    log_prior: Vec<Vec<f64>>,
    values: DVector<T>,
}

impl<T: Real> GridBlock<T> {
    /// Uniform prior over each point's grid.
    pub fn uniform(grid: Vec<Vec<T>>) -> Result<Self> {
        let log_prior = grid.iter().map(|g| vec![0.0; g.len()]).collect();
        Self::new(grid, log_prior)
    }

    pub fn new(grid: Vec<Vec<T>>, log_prior: Vec<Vec<f64>>) -> Result<Self> {
        if grid.is_empty() || grid.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig(
                "every point needs at least one grid value".into(),
            ));
        }
        if log_prior.len() != grid.len()
            || log_prior.iter().zip(&grid).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Dimension("prior weights must match the grid".into()));
        }
        let values = DVector::from_fn(grid.len(), |i, _| grid[i][0]);
        Ok(Self {
            grid,
            log_prior,
            values,
        })
    }

    pub fn grid(&self) -> &[Vec<T>] {
        &self.grid
    }

    pub fn log_prior(&self) -> &[Vec<f64>] {
        &self.log_prior
    }
}

fn sample_categorical(logw: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (j, wj) in w.iter().enumerate() {
        if u < *wj {
            return j;
        }
        u -= wj;
    }
    w.len() - 1
}

impl<T: Real> FunctionBlock<T> for GridBlock<T> {
    fn values(&self) -> &DVector<T> {
        &self.values
    }

    fn draw_prior(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        for i in 0..self.grid.len() {
            let j = sample_categorical(&self.log_prior[i], rng);
            self.values[i] = self.grid[i][j];
        }
        Ok(())
    }

    fn set_zero(&mut self) {
        for i in 0..self.grid.len() {
            let j = (0..self.grid[i].len())
                .min_by(|&a, &b| {
                    self.grid[i][a]
                        .abs()
                        .partial_cmp(&self.grid[i][b].abs())
                        .unwrap()
                })
                .unwrap_or(0);
            self.values[i] = self.grid[i][j];
        }
    }

    fn update(&mut self, obs: &DVector<T>, noise_var: T, rng: &mut ChaCha8Rng) -> Result<()> {
        let s2 = noise_var.as_f64();
        for i in 0..self.grid.len() {
            let o = obs[i].as_f64();
            let logw: Vec<f64> = self.grid[i]
                .iter()
                .zip(&self.log_prior[i])
                .map(|(v, lp)| lp - (o - v.as_f64()).powi(2) / (2.0 * s2))
                .collect();
            self.values[i] = self.grid[i][sample_categorical(&logw, rng)];
        }
        Ok(())
    }
}

/// `N(mean, sd²)` restricted to `[lo, hi]` by inversion.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let mut a = (lo - mean) / sd;
    let mut b = (hi - mean) / sd;
    // invert in the lower tail, where Φ keeps relative precision
    let flip = a > 0.0;
    if flip {
        (a, b) = (-b, -a);
    }
    let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
    let z = if pb - pa > 1e-300 {
        let u = pa + rng.random::<f64>() * (pb - pa);
        std_normal_quantile(u).clamp(a, b)
    } else {
        // all mass sits at the near end
        b
    };
    let z = if flip { -z } else { z };
    (mean + sd * z).clamp(lo, hi)
}

/// Result of one coefficient draw.
pub struct BetaStep<T: Real> {
    pub beta: DVector<T>,
    pub used_rejection: bool,
}

const REJECTION_THRESHOLD: f64 = 0.1;
const MAX_REJECTIONS: usize = 1000;

/// Coefficient update: the conjugate Gaussian `N(μ, (ξ S'S)⁻¹)` with
/// `μ = (S'S)⁻¹ S'r`, optionally restricted to `[−B, B]^dx`.
pub fn update_beta<T: Real>(
    s: &DMatrix<T>,
    r: &DVector<T>,
    xi: T,
    current: &DVector<T>,
    bound: Option<T>,
    rng: &mut ChaCha8Rng,
) -> Result<BetaStep<T>> {
    let sts = s.tr_mul(s);
    let chol = sts
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("projection errors are collinear".into()))?;
    let mean = chol.solve(&s.tr_mul(r));
    draw_gaussian_in_box(&mean, sts * xi, current, bound, rng)
}

/// Coefficient update with a Gaussian nuisance integrated out: given
/// `A = Cov(r)⁻¹` applied to the columns of `[S | r]`, the conditional is
/// `N(P⁻¹ S'A r, P⁻¹)` with `P = S'A S`.
pub fn update_beta_marginal<T: Real>(
    s: &DMatrix<T>,
    a_s: &DMatrix<T>,
    a_r: &DVector<T>,
    current: &DVector<T>,
    bound: Option<T>,
    rng: &mut ChaCha8Rng,
) -> Result<BetaStep<T>> {
    let precision = s.tr_mul(a_s);
    let precision = (&precision + precision.transpose()) * T::lit(0.5);
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("coefficient precision is not positive definite".into()))?;
    let mean = chol.solve(&s.tr_mul(a_r));
    draw_gaussian_in_box(&mean, precision, current, bound, rng)
}

fn draw_gaussian_in_box<T: Real>(
    mean: &DVector<T>,
    precision: DMatrix<T>,
    current: &DVector<T>,
    bound: Option<T>,
    rng: &mut ChaCha8Rng,
) -> Result<BetaStep<T>> {
    let dx = mean.len();
    let pchol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("coefficient precision is not positive definite".into()))?;
    let draw_free = |rng: &mut ChaCha8Rng| {
        let z: DVector<T> = standard_normal_vector(dx, rng);
        let dev = pchol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular factor is invertible");
        mean + dev
    };
    let Some(b) = bound else {
        return Ok(BetaStep {
            beta: draw_free(rng),
            used_rejection: false,
        });
    };
    let cov = pchol.inverse();
    let bf = b.as_f64();
    let box_mass: f64 = (0..dx)
        .map(|k| {
            let sd = cov[(k, k)].as_f64().sqrt();
            let m = mean[k].as_f64();
            std_normal_cdf((bf - m) / sd) - std_normal_cdf((-bf - m) / sd)
        })
        .product();
    if box_mass >= REJECTION_THRESHOLD {
        for _ in 0..MAX_REJECTIONS {
            let cand = draw_free(rng);
            if cand.iter().all(|v| v.abs() <= b) {
                return Ok(BetaStep {
                    beta: cand,
                    used_rejection: true,
                });
            }
        }
    }
    // coordinatewise conditionals of the truncated Gaussian
    let mut beta = current.map(|v| v.max(-b).min(b));
    for k in 0..dx {
        let pkk = precision[(k, k)];
        let mut shift = T::zero();
        for j in 0..dx {
            if j != k {
                shift += precision[(k, j)] * (beta[j] - mean[j]);
            }
        }
        let cmean = (mean[k] - shift / pkk).as_f64();
        let csd = (T::one() / pkk).sqrt().as_f64();
        beta[k] = T::lit(truncated_normal(cmean, csd, -bf, bf, rng));
    }
    Ok(BetaStep {
        beta,
        used_rejection: false,
    })
}

/// Pseudo-regression for `m₂ₖ` given the other blocks: the conditional law
/// of `x_k` given `y`, with `ỹ = y − m₁ − Σ_{j≠k} s_j β_j`, is Gaussian with
/// mean `m₂ₖ + β_k σ₂² ỹ / (σ₁² + β_k² σ₂²)` and variance
/// `σ₂² σ₁² / (σ₁² + β_k² σ₂²)`. Returns `(obs, noise_var)`.
pub fn m2_pseudo_observation<T: Real>(
    x_k: &DVector<T>,
    ytilde: &DVector<T>,
    beta_k: T,
    sigma1_sq: T,
    sigma2_sq: T,
) -> (DVector<T>, T) {
    let denom = sigma1_sq + beta_k * beta_k * sigma2_sq;
    (
        x_k - ytilde * (beta_k * sigma2_sq / denom),
        sigma2_sq * sigma1_sq / denom,
    )
}

/// Result of one precision step.
pub struct XiStep {
    pub xi: f64,
    pub accepted: bool,
}

fn log_xi_target(xi: f64, n: usize, ssr: f64) -> f64 {
    0.5 * n as f64 * xi.ln() - 0.5 * xi * ssr
}

const MAX_GAMMA_PROPOSALS: usize = 10_000;

/// Precision update under a flat prior on `[lo, hi]`: the conditional is
/// `Gamma(n/2 + 1, rate = SSR/2)` restricted to the interval, proposed
/// directly by rejection with a log random-walk fallback.
pub fn update_xi(
    current: f64,
    n: usize,
    ssr: f64,
    bounds: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<XiStep> {
    if !ssr.is_finite() {
        return Err(Error::NonFinite("residual sum of squares".into()));
    }
    let (lo, hi) = bounds;
    let shape = 0.5 * n as f64 + 1.0;
    let rate = (0.5 * ssr).max(f64::MIN_POSITIVE);
    let log_proposal = |xi: f64| (shape - 1.0) * xi.ln() - rate * xi;
    if let Ok(gamma) = Gamma::new(shape, 1.0 / rate) {
        for _ in 0..MAX_GAMMA_PROPOSALS {
            let cand: f64 = gamma.sample(rng);
            if cand < lo || cand > hi {
                continue;
            }
            let log_ratio = (log_xi_target(cand, n, ssr) - log_proposal(cand))
                - (log_xi_target(current, n, ssr) - log_proposal(current));
            let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
            return Ok(XiStep {
                xi: if accepted { cand } else { current },
                accepted,
            });
        }
    }
    // the interval carries negligible proposal mass: random walk on log ξ
    let step: f64 = rng.sample(StandardNormal);
    let cand = current * (0.1 * step).exp();
    if cand < lo || cand > hi {
        return Ok(XiStep {
            xi: current,
            accepted: false,
        });
    }
    let log_ratio =
        log_xi_target(cand, n, ssr) + cand.ln() - log_xi_target(current, n, ssr) - current.ln();
    let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    Ok(XiStep {
        xi: if accepted { cand } else { current },
        accepted,
    })
}
