use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::matern::{MaternKernel, MaternSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Jitter values tried, in order, after the spec's own jitter fails.
pub const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// A factorization counts as failed when a squared pivot falls below this
/// fraction of the largest diagonal entry.
const MIN_RELATIVE_PIVOT: f64 = 1e-12;

/// Kernel Gram matrix at the design points together with a Cholesky factor
/// of `gram + jitter·I`.
#[derive(Debug, Clone)]
pub struct GramFactor<T: Real> {
    pub gram: DMatrix<T>,
    /// Lower-triangular.
    pub chol: DMatrix<T>,
    /// Jitter that made the factorization succeed.
    pub jitter: T,
    /// Every jitter value tried, in order; more than one entry means the
    /// design forced an escalation.
    pub attempts: Vec<f64>,
}

impl<T: Real> GramFactor<T> {
    pub fn escalated(&self) -> bool {
        self.attempts.len() > 1
    }
}

pub fn gram_matrix<T: Real>(points: &DMatrix<T>, spec: &MaternSpec<T>) -> DMatrix<T> {
    let n = points.nrows();
    let dw = points.ncols();
    let kernel = MaternKernel::new(spec, dw);
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..dw).map(|j| points[(i, j)].as_f64()).collect())
        .collect();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let h = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let v = T::lit(kernel.at_distance(h));
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    gram
}

/// Builds the Gram matrix and factors it, escalating jitter along
/// [`JITTER_LADDER`] when the plain factorization fails.
pub fn gram_and_factor<T: Real>(
    points: &DMatrix<T>,
    spec: &MaternSpec<T>,
) -> Result<GramFactor<T>> {
    if points.nrows() == 0 {
        return Err(Error::InvalidData("no design points".into()));
    }
    if !points.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidData("non-finite design point".into()));
    }
    spec.validate()?;
    let gram = gram_matrix(points, spec);
    let first = spec.jitter.as_f64();
    let ladder = std::iter::once(first).chain(JITTER_LADDER.iter().copied().filter(|j| *j > first));
    let mut attempts = Vec::new();
    for jitter in ladder {
        attempts.push(jitter);
        let j = T::lit(jitter);
        let mut shifted = gram.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += j;
        }
        let diag_max = shifted.diagonal().max();
        if let Some(chol) = shifted.cholesky() {
            let l = chol.unpack();
            let floor = T::lit(MIN_RELATIVE_PIVOT) * diag_max;
            if l.diagonal().iter().all(|p| *p * *p >= floor) {
                return Ok(GramFactor {
                    gram,
                    chol: l,
                    jitter: j,
                    attempts,
                });
            }
        }
    }
    Err(Error::Factorization { attempts })
}

pub(crate) fn standard_normal_vector<T: Real, R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> DVector<T> {
    DVector::from_fn(n, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Draw `chol · z`, `z ~ N(0, I)`: a centered normal with covariance
/// `gram + jitter·I`.
pub fn sample_gp<T: Real, R: Rng + ?Sized>(factor: &GramFactor<T>, rng: &mut R) -> DVector<T> {
    let z = standard_normal_vector(factor.chol.nrows(), rng);
    &factor.chol * z
}

/// Eigendecomposition `gram + jitter·I = Q diag(λ) Q'` used for conjugate
/// Gaussian-process regression with a noise level that changes between
/// sweeps.
#[derive(Debug, Clone)]
pub struct SpectralFactor<T: Real> {
    pub eigenvectors: DMatrix<T>,
    /// Clamped to be non-negative before the jitter is added.
    pub eigenvalues: DVector<T>,
}

impl<T: Real> SpectralFactor<T> {
    pub fn new(points: &DMatrix<T>, spec: &MaternSpec<T>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidData("no design points".into()));
        }
        spec.validate()?;
        Ok(Self::from_gram(gram_matrix(points, spec), spec.jitter))
    }

    pub fn from_gram(gram: DMatrix<T>, jitter: T) -> Self {
        let eig = gram.symmetric_eigen();
        let eigenvalues = eig.eigenvalues.map(|l| l.max(T::zero()) + jitter);
        Self {
            eigenvectors: eig.eigenvectors,
            eigenvalues,
        }
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Prior draw `Q diag(√λ) z`.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let z: DVector<T> = standard_normal_vector(self.n(), rng);
        let scaled = z.zip_map(&self.eigenvalues, |z, l| z * l.sqrt());
        &self.eigenvectors * scaled
    }

    /// Posterior of `f ~ N(0, K)` given `obs = f + e`, `e ~ N(0, noise_var·I)`:
    /// returns one draw. In the eigenbasis the posterior is independent with
    /// mean `λ/(λ+s²)·(Q'obs)` and variance `λs²/(λ+s²)`.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        obs: &DVector<T>,
        noise_var: T,
        rng: &mut R,
    ) -> DVector<T> {
        let proj = self.eigenvectors.tr_mul(obs);
        let z: DVector<T> = standard_normal_vector(self.n(), rng);
        let coef = DVector::from_fn(self.n(), |k, _| {
            let l = self.eigenvalues[k];
            let denom = l + noise_var;
            l / denom * proj[k] + (l * noise_var / denom).sqrt() * z[k]
        });
        &self.eigenvectors * coef
    }

    /// `(K + noise_var·I)⁻¹ rhs`, the precision of `obs` with `f` integrated out.
    pub fn marginal_solve(&self, rhs: &DMatrix<T>, noise_var: T) -> DMatrix<T> {
        let mut proj = self.eigenvectors.tr_mul(rhs);
        for (k, mut row) in proj.row_iter_mut().enumerate() {
            row /= self.eigenvalues[k] + noise_var;
        }
        &self.eigenvectors * proj
    }

    /// Posterior mean and covariance of the same regression (dense; for tests
    /// and small problems).
    pub fn posterior_moments(&self, obs: &DVector<T>, noise_var: T) -> (DVector<T>, DMatrix<T>) {
        let proj = self.eigenvectors.tr_mul(obs);
        let n = self.n();
        let shrink = DVector::from_fn(n, |k, _| {
            self.eigenvalues[k] / (self.eigenvalues[k] + noise_var)
        });
        let mean = &self.eigenvectors * proj.component_mul(&shrink);
        let var = DVector::from_fn(n, |k, _| {
            let l = self.eigenvalues[k];
            l * noise_var / (l + noise_var)
        });
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&var);
        (mean, scaled * self.eigenvectors.transpose())
    }
}
