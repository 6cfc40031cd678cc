//! Partially linear model under the Robinson (β, m) parametrization.
//!
//! The working likelihood for one observation is the bivariate Gaussian
//! `(Y, X) | W ~ N(m(W), V(β))`, evaluated here in factorized form
//!
//! ```text
//! Y | X, W ~ N(m1(W) + (X - m2(W))'β, 1/ξ)
//! X | W    ~ N(m2(W), σ₀₂² I)
//! ```
//!
//! In known-variance mode the precision is pinned to `ξ = 1/σ₀₁²` and the
//! ξ coordinates are dropped from score and information.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Observed sample `(y_i, x_i, w_i)`, `i = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    y: DVector<T>,
    x: DMatrix<T>,
    w: DMatrix<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(y: DVector<T>, x: DMatrix<T>, w: DMatrix<T>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidData(format!(
                "need n >= 2 observations, got {n}"
            )));
        }
        if x.nrows() != n || w.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, x has {}, w has {}",
                x.nrows(),
                w.nrows()
            )));
        }
        if x.ncols() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidData(
                "x and w need at least one column".into(),
            ));
        }
        let finite = |v: &T| v.is_finite();
        if !y.iter().all(finite) || !x.iter().all(finite) || !w.iter().all(finite) {
            return Err(Error::InvalidData("non-finite entry in dataset".into()));
        }
        if let Some((i, v)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| **v < T::zero() || **v > T::one())
        {
            return Err(Error::InvalidData(format!(
                "control value {} at flat index {i} outside [0, 1]",
                v.as_f64()
            )));
        }
        Ok(Self { y, x, w })
    }

    /// Builds a dataset after mapping each control column affinely onto `[0, 1]`.
    pub fn with_rescaled_controls(y: DVector<T>, x: DMatrix<T>, mut w: DMatrix<T>) -> Result<Self> {
        for mut col in w.column_iter_mut() {
            let lo = col.min();
            let hi = col.max();
            let span = hi - lo;
            if span > T::zero() {
                col.apply(|v| *v = (*v - lo) / span);
            } else {
                col.fill(T::lit(0.5));
            }
        }
        Self::new(y, x, w)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    pub fn dw(&self) -> usize {
        self.w.ncols()
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn w(&self) -> &DMatrix<T> {
        &self.w
    }
}

/// Fixed model constants and parameter supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig<T> {
    /// Outcome residual variance (used as-is in known-variance mode).
    pub sigma01_sq: T,
    /// Variance of the auxiliary X-equation; `Σ₀₂ = sigma02_sq · I`.
    pub sigma02_sq: T,
    pub variance_known: bool,
    /// Precision support `[lower, upper]` in unknown-variance mode.
    pub xi_bounds: (T, T),
    /// Half-width `B` of the coefficient box `[-B, B]^dx`.
    pub beta_bound: T,
}

impl<T: Real> Default for ModelConfig<T> {
    fn default() -> Self {
        Self {
            sigma01_sq: T::one(),
            sigma02_sq: T::one(),
            variance_known: true,
            xi_bounds: (T::lit(0.01), T::lit(100.0)),
            beta_bound: T::lit(10.0),
        }
    }
}

impl<T: Real> ModelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.sigma01_sq > T::zero()) {
            return bad("sigma01_sq must be positive");
        }
        if !(self.sigma02_sq > T::zero()) {
            return bad("sigma02_sq must be positive");
        }
        let (lo, hi) = self.xi_bounds;
        if !(lo > T::zero() && hi > lo) {
            return bad("xi_bounds must satisfy 0 < lower < upper");
        }
        if !(self.beta_bound > T::zero()) {
            return bad("beta_bound must be positive");
        }
        Ok(())
    }

    /// Precision actually used by the likelihood for the given state.
    pub fn precision(&self, theta: &ThetaState<T>) -> T {
        if self.variance_known {
            T::one() / self.sigma01_sq
        } else {
            theta.xi
        }
    }

    /// Dimension of the finite-dimensional parameter (`dx` or `dx + 1`).
    pub fn theta_dim(&self, dx: usize) -> usize {
        if self.variance_known {
            dx
        } else {
            dx + 1
        }
    }
}

/// Nuisance functions represented by their values at the design points.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues<T: Real> {
    pub m1: DVector<T>,
    /// `n × dx`, column `k` holds `m2_k(w_i)`.
    pub m2: DMatrix<T>,
}

impl<T: Real> NuisanceValues<T> {
    pub fn new(m1: DVector<T>, m2: DMatrix<T>) -> Result<Self> {
        if m1.len() != m2.nrows() {
            return Err(Error::Dimension(format!(
                "m1 has {} values, m2 has {} rows",
                m1.len(),
                m2.nrows()
            )));
        }
        if !m1.iter().chain(m2.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite nuisance value".into()));
        }
        Ok(Self { m1, m2 })
    }

    pub fn zeros(n: usize, dx: usize) -> Self {
        Self {
            m1: DVector::zeros(n),
            m2: DMatrix::zeros(n, dx),
        }
    }

    fn check(&self, data: &Dataset<T>) -> Result<()> {
        if self.m1.len() != data.n() || self.m2.nrows() != data.n() || self.m2.ncols() != data.dx()
        {
            return Err(Error::Dimension(format!(
                "nuisance is {}/{}x{}, data is n={} dx={}",
                self.m1.len(),
                self.m2.nrows(),
                self.m2.ncols(),
                data.n(),
                data.dx()
            )));
        }
        Ok(())
    }
}

/// Finite-dimensional parameter `θ = (β', ξ)'`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaState<T: Real> {
    pub beta: DVector<T>,
    pub xi: T,
}

impl<T: Real> ThetaState<T> {
    pub fn new(beta: DVector<T>, xi: T) -> Self {
        Self { beta, xi }
    }

    /// State for known-variance mode, with `ξ = 1/σ₀₁²`.
    pub fn known(beta: DVector<T>, config: &ModelConfig<T>) -> Self {
        Self {
            beta,
            xi: T::one() / config.sigma01_sq,
        }
    }

    /// Whether the state lies in the prior support `[-B,B]^dx × Ξ`.
    pub fn in_support(&self, config: &ModelConfig<T>) -> bool {
        let b = config.beta_bound;
        let beta_ok = self.beta.iter().all(|v| v.abs() <= b);
        let (lo, hi) = config.xi_bounds;
        beta_ok && (config.variance_known || (self.xi >= lo && self.xi <= hi))
    }
}

/// `V(β)` for scalar β.
pub fn cov_matrix<T: Real>(beta: T, config: &ModelConfig<T>) -> Matrix2<T> {
    let s1 = config.sigma01_sq;
    let s2 = config.sigma02_sq;
    let off = beta * s2;
    Matrix2::new(s1 + s2 * beta * beta, off, off, s2)
}

/// Joint covariance of `(Y, X')'` given `W` for vector β:
/// `[[σ₀₁² + σ₀₂²‖β‖², σ₀₂²β'], [σ₀₂²β, σ₀₂² I]]`.
pub fn joint_cov_matrix<T: Real>(beta: &DVector<T>, sigma01_sq: T, sigma02_sq: T) -> DMatrix<T> {
    let dx = beta.len();
    let mut v = DMatrix::zeros(dx + 1, dx + 1);
    v[(0, 0)] = sigma01_sq + sigma02_sq * beta.norm_squared();
    for k in 0..dx {
        v[(0, k + 1)] = sigma02_sq * beta[k];
        v[(k + 1, 0)] = sigma02_sq * beta[k];
        v[(k + 1, k + 1)] = sigma02_sq;
    }
    v
}

/// `m₀₁(w_i) = η₀(w_i) + m₀₂(w_i)'β₀`.
pub fn robinson_decompose<T: Real>(
    eta0: &DVector<T>,
    beta0: &DVector<T>,
    m02: &DMatrix<T>,
) -> Result<DVector<T>> {
    if eta0.len() != m02.nrows() || beta0.len() != m02.ncols() {
        return Err(Error::Dimension(format!(
            "eta0 len {}, m02 {}x{}, beta0 len {}",
            eta0.len(),
            m02.nrows(),
            m02.ncols(),
            beta0.len()
        )));
    }
    Ok(eta0 + m02 * beta0)
}

/// Inverse of [`robinson_decompose`]: `η = m₁ − m₂'β`.
pub fn eta_from_nuisance<T: Real>(
    m1: &DVector<T>,
    m2: &DMatrix<T>,
    beta: &DVector<T>,
) -> Result<DVector<T>> {
    if m1.len() != m2.nrows() || beta.len() != m2.ncols() {
        return Err(Error::Dimension("m1/m2/beta not conformable".into()));
    }
    Ok(m1 - m2 * beta)
}

/// Projection errors `s_i = x_i − m₂(w_i)` and outcome residuals
/// `r_i = y_i − m₁(w_i) − s_i'β`.
pub(crate) fn residuals<T: Real>(
    data: &Dataset<T>,
    beta: &DVector<T>,
    m: &NuisanceValues<T>,
) -> (DMatrix<T>, DVector<T>) {
    let s = data.x() - &m.m2;
    let r = data.y() - &m.m1 - &s * beta;
    (s, r)
}

fn check_all<T: Real>(
    data: &Dataset<T>,
    theta: &ThetaState<T>,
    m: &NuisanceValues<T>,
) -> Result<()> {
    m.check(data)?;
    if theta.beta.len() != data.dx() {
        return Err(Error::Dimension(format!(
            "beta has {} entries, data has dx={}",
            theta.beta.len(),
            data.dx()
        )));
    }
    Ok(())
}

/// Log quasi-likelihood `ℓₙ(β, ξ, m)` in factorized conditional × marginal form.
pub fn log_quasi_likelihood<T: Real>(
    data: &Dataset<T>,
    theta: &ThetaState<T>,
    m: &NuisanceValues<T>,
    config: &ModelConfig<T>,
) -> Result<T> {
    check_all(data, theta, m)?;
    let xi = config.precision(theta);
    if !(xi > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "precision must be positive, got {}",
            xi.as_f64()
        )));
    }
    let n = T::from_usize_lossy(data.n());
    let dx = T::from_usize_lossy(data.dx());
    let two_pi = T::two_pi();
    let half = T::lit(0.5);
    let (s, r) = residuals(data, &theta.beta, m);
    let y_part = -half * n * (two_pi / xi).ln() - half * xi * r.norm_squared();
    let x_part = -half * n * dx * (two_pi * config.sigma02_sq).ln()
        - half * s.norm_squared() / config.sigma02_sq;
    Ok(y_part + x_part)
}

/// Score `ℓ̃ₙ(β, ξ, m)`: the β-block, followed by the ξ-coordinate in
/// unknown-variance mode.
pub fn score<T: Real>(
    data: &Dataset<T>,
    theta: &ThetaState<T>,
    m: &NuisanceValues<T>,
    config: &ModelConfig<T>,
) -> Result<DVector<T>> {
    check_all(data, theta, m)?;
    let xi = config.precision(theta);
    let (s, r) = residuals(data, &theta.beta, m);
    let beta_block = s.tr_mul(&r) * xi;
    if config.variance_known {
        return Ok(beta_block);
    }
    let dx = data.dx();
    let n = T::from_usize_lossy(data.n());
    let half = T::lit(0.5);
    let mut out = DVector::zeros(dx + 1);
    out.rows_mut(0, dx).copy_from(&beta_block);
    out[dx] = n / (T::lit(2.0) * xi) - half * r.norm_squared();
    Ok(out)
}

/// Normalized information `Ĩₙ(β, ξ, m) = −(1/n) ∂²ℓₙ`.
pub fn information<T: Real>(
    data: &Dataset<T>,
    theta: &ThetaState<T>,
    m: &NuisanceValues<T>,
    config: &ModelConfig<T>,
) -> Result<DMatrix<T>> {
    check_all(data, theta, m)?;
    let xi = config.precision(theta);
    let n = T::from_usize_lossy(data.n());
    let (s, r) = residuals(data, &theta.beta, m);
    let beta_block = s.tr_mul(&s) * (xi / n);
    if config.variance_known {
        return Ok(beta_block);
    }
    let dx = data.dx();
    let cross = -(s.tr_mul(&r) / n);
    let mut info = DMatrix::zeros(dx + 1, dx + 1);
    info.view_mut((0, 0), (dx, dx)).copy_from(&beta_block);
    for k in 0..dx {
        info[(k, dx)] = cross[k];
        info[(dx, k)] = cross[k];
    }
    info[(dx, dx)] = T::one() / (T::lit(2.0) * xi * xi);
    Ok(info)
}

/// Population law of `(Y, X, W)` with `W` on a finite grid.
///
/// Only the first two conditional moments of `(Y, X)` given each grid
/// point enter the expected Gaussian log-density, so a cell stores those.
#[derive(Debug, Clone)]
pub struct Population<T: Real> {
    cells: Vec<PopulationCell<T>>,
}

#[derive(Debug, Clone)]
pub struct PopulationCell<T: Real> {
    pub weight: T,
    /// `E[(Y, X')' | W = w]`, length `1 + dx`.
    pub mean: DVector<T>,
    /// `Cov[(Y, X')' | W = w]`.
    pub cov: DMatrix<T>,
}

impl<T: Real> Population<T> {
    pub fn new(cells: Vec<PopulationCell<T>>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidData("population has empty support".into()));
        }
        let dim = cells[0].mean.len();
        for c in &cells {
            if !(c.weight > T::zero()) {
                return Err(Error::InvalidData(
                    "W-marginal weights must be positive".into(),
                ));
            }
            if c.mean.len() != dim || c.cov.nrows() != dim || c.cov.ncols() != dim {
                return Err(Error::Dimension(
                    "inconsistent population cell dimensions".into(),
                ));
            }
        }
        Ok(Self { cells })
    }

    /// Finite joint law: `atoms[g]` lists `(prob, y, x)` at grid point `g`;
    /// `w_weights[g]` is the marginal mass of that grid point.
    pub fn from_atoms(w_weights: &[T], atoms: &[Vec<(T, T, DVector<T>)>]) -> Result<Self> {
        if w_weights.len() != atoms.len() {
            return Err(Error::Dimension(
                "one atom list per grid point required".into(),
            ));
        }
        let mut cells = Vec::with_capacity(atoms.len());
        for (&weight, list) in w_weights.iter().zip(atoms) {
            if list.is_empty() {
                return Err(Error::InvalidData("empty conditional support".into()));
            }
            let dim = 1 + list[0].2.len();
            let total: T = list.iter().fold(T::zero(), |a, (p, _, _)| a + *p);
            let stack = |y: T, x: &DVector<T>| {
                let mut z = DVector::zeros(dim);
                z[0] = y;
                z.rows_mut(1, dim - 1).copy_from(x);
                z
            };
            let mut mean = DVector::zeros(dim);
            for (p, y, x) in list {
                mean += stack(*y, x) * (*p / total);
            }
            let mut cov = DMatrix::zeros(dim, dim);
            for (p, y, x) in list {
                let d = stack(*y, x) - &mean;
                cov += &d * d.transpose() * (*p / total);
            }
            cells.push(PopulationCell { weight, mean, cov });
        }
        Self::new(cells)
    }

    /// The model law `p_{β₀,m₀}` itself on a grid.
    pub fn gaussian_model(
        w_weights: &[T],
        m0: &NuisanceValues<T>,
        beta0: &DVector<T>,
        config: &ModelConfig<T>,
    ) -> Result<Self> {
        if w_weights.len() != m0.m1.len() || m0.m2.ncols() != beta0.len() {
            return Err(Error::Dimension(
                "grid weights, nuisance and beta disagree".into(),
            ));
        }
        let cov = joint_cov_matrix(beta0, config.sigma01_sq, config.sigma02_sq);
        let dx = beta0.len();
        let cells = w_weights
            .iter()
            .enumerate()
            .map(|(g, &weight)| {
                let mut mean = DVector::zeros(dx + 1);
                mean[0] = m0.m1[g];
                for k in 0..dx {
                    mean[k + 1] = m0.m2[(g, k)];
                }
                PopulationCell {
                    weight,
                    mean,
                    cov: cov.clone(),
                }
            })
            .collect();
        Self::new(cells)
    }

    pub fn grid_size(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[PopulationCell<T>] {
        &self.cells
    }
}

/// `−E[log p_{β,m}(Y, X | W)]`, i.e. the expected Kullback–Leibler divergence
/// from the population up to the constant `E[log p₀]`.
pub fn kl_objective<T: Real>(
    pop: &Population<T>,
    beta: &DVector<T>,
    m: &NuisanceValues<T>,
    config: &ModelConfig<T>,
) -> Result<T> {
    if m.m1.len() != pop.grid_size() || m.m2.ncols() != beta.len() {
        return Err(Error::Dimension(
            "nuisance grid does not match population".into(),
        ));
    }
    let dim = beta.len() + 1;
    if pop.cells[0].mean.len() != dim {
        return Err(Error::Dimension(
            "population dimension does not match beta".into(),
        ));
    }
    let v = joint_cov_matrix(beta, config.sigma01_sq, config.sigma02_sq);
    let chol = v
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("V(beta) not positive definite".into()))?;
    let v_inv = chol.inverse();
    let log_det = chol
        .l()
        .diagonal()
        .iter()
        .fold(T::zero(), |a, d| a + d.ln())
        * T::lit(2.0);
    let half = T::lit(0.5);
    let const_term = half * (T::from_usize_lossy(dim) * T::two_pi().ln() + log_det);

    let total_weight = pop.cells.iter().fold(T::zero(), |a, c| a + c.weight);
    let mut acc = T::zero();
    for (g, cell) in pop.cells.iter().enumerate() {
        let mut mu = DVector::zeros(dim);
        mu[0] = m.m1[g];
        for k in 0..beta.len() {
            mu[k + 1] = m.m2[(g, k)];
        }
        let d = &cell.mean - mu;
        let quad = (d.transpose() * &v_inv * &d)[(0, 0)];
        let trace = (&v_inv * &cell.cov).trace();
        acc += cell.weight / total_weight * (const_term + half * (trace + quad));
    }
    Ok(acc)
}
