//! Gaussian limit objects for the coefficient posterior and the feasible
//! partialling-out estimator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::TrueFunctions;
use crate::error::{Error, Result};
use crate::model::{information, score, Dataset, ModelConfig, ThetaState};
use crate::priors::standard_normal_vector;
use crate::scalar::Real;
use crate::special::std_normal_quantile;

/// `N(center, covariance)`; in unknown-variance mode the last coordinate is ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianReference<T: Real> {
    pub center: DVector<T>,
    pub covariance: DMatrix<T>,
    pub n: usize,
}

impl<T: Real> GaussianReference<T> {
    pub fn new(center: DVector<T>, covariance: DMatrix<T>, n: usize) -> Result<Self> {
        let d = center.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension(format!(
                "center has {d} entries, covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if covariance.clone().cholesky().is_none() {
            return Err(Error::Singular(
                "reference covariance is not positive definite".into(),
            ));
        }
        Ok(Self {
            center,
            covariance,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn sd(&self, k: usize) -> T {
        self.covariance[(k, k)].sqrt()
    }

    /// `center_k + Φ⁻¹(q) sd_k`.
    pub fn reference_quantile(&self, k: usize, q: f64) -> T {
        self.center[k] + T::lit(std_normal_quantile(q)) * self.sd(k)
    }

    /// Equitailed interval of the given coverage for every coordinate.
    pub fn wald_interval(&self, level: f64) -> Result<Vec<(T, T)>> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "interval level must lie in (0, 1), got {level}"
            )));
        }
        let z = T::lit(std_normal_quantile(0.5 + level / 2.0));
        Ok((0..self.dim())
            .map(|k| {
                (
                    self.center[k] - z * self.sd(k),
                    self.center[k] + z * self.sd(k),
                )
            })
            .collect())
    }

    /// Restriction to the coefficient coordinates.
    pub fn beta_marginal(&self, dx: usize) -> Self {
        Self {
            center: self.center.rows(0, dx).into_owned(),
            covariance: self.covariance.view((0, 0), (dx, dx)).into_owned(),
            n: self.n,
        }
    }

    /// `draws × dim` matrix of iid reference draws.
    pub fn sample<R: Rng + ?Sized>(&self, draws: usize, rng: &mut R) -> DMatrix<T> {
        let chol = self
            .covariance
            .clone()
            .cholesky()
            .expect("validated at construction")
            .unpack();
        let d = self.dim();
        let mut out = DMatrix::zeros(draws, d);
        for i in 0..draws {
            let z: DVector<T> = standard_normal_vector(d, rng);
            let v = &self.center + &chol * z;
            out.set_row(i, &v.transpose());
        }
        out
    }
}

/// The limit law at the truth: `center = θ₀ + Ĩₙ(m₀)⁻¹ ℓ̃ₙ(θ₀, m₀)/n`,
/// `covariance = Ĩₙ(m₀)⁻¹/n`. In known-variance mode the center is the OLS
/// slope of `y − m₀₁` on `x − m₀₂`.
pub fn oracle_reference<T: Real>(
    data: &Dataset<T>,
    truth: &TrueFunctions<T>,
    config: &ModelConfig<T>,
) -> Result<GaussianReference<T>> {
    if truth.dx() != data.dx() {
        return Err(Error::Dimension("truth and data disagree on dx".into()));
    }
    let m0 = truth.nuisance_at(data.w());
    let theta0 = ThetaState::new(truth.beta0.clone(), T::one() / truth.sigma01_sq);
    let l = score(data, &theta0, &m0, config)?;
    let info = information(data, &theta0, &m0, config)?;
    let n = T::from_usize_lossy(data.n());
    let inv = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("information at the truth is not positive definite".into()))?
        .inverse();
    let mut base = truth.beta0.clone();
    if !config.variance_known {
        base = base.push(theta0.xi);
    }
    let center = base + &inv * l / n;
    let covariance = (&inv + inv.transpose()) * T::lit(0.5) / n;
    GaussianReference::new(center, covariance, data.n())
}

/// Nonparametric regression of a response on the controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Smoother {
    /// Additive piecewise-linear series at dyadic resolution `2^-level`.
    Series {
        level: usize,
    },
    NearestNeighbor {
        k: usize,
    },
    SampleMean,
}

impl Smoother {
    /// Series smoother at level `⌈log₂(n)/3⌉`.
    pub fn default_for(n: usize) -> Self {
        let level = ((n.max(2) as f64).log2() / 3.0).ceil().max(1.0) as usize;
        Smoother::Series { level }
    }

    pub fn label(&self) -> String {
        match self {
            Smoother::Series { level } => format!("series(level={level})"),
            Smoother::NearestNeighbor { k } => format!("nearest-neighbor(k={k})"),
            Smoother::SampleMean => "sample-mean".to_string(),
        }
    }
}

/// Nodal hats on the grid `{j 2^-level}`; they span the same space as the
/// hierarchical hats up to `level` together with the linear function.
fn nodal_hat(level: usize, node: usize, w: f64) -> f64 {
    let h = (1u64 << level) as f64;
    (1.0 - (w * h - node as f64).abs()).max(0.0)
}

fn series_design<T: Real>(w: &DMatrix<T>, level: usize) -> DMatrix<T> {
    let nodes = (1usize << level) + 1;
    // node 0 of each coordinate is dropped: the hats of a coordinate sum to one
    let cols = 1 + w.ncols() * (nodes - 1);
    DMatrix::from_fn(w.nrows(), cols, |i, c| {
        if c == 0 {
            return T::one();
        }
        let j = (c - 1) / (nodes - 1);
        let node = 1 + (c - 1) % (nodes - 1);
        T::lit(nodal_hat(level, node, w[(i, j)].as_f64()))
    })
}

/// Fitted values of each column of `responses` regressed on `w`.
pub fn smooth_columns<T: Real>(
    w: &DMatrix<T>,
    responses: &DMatrix<T>,
    smoother: &Smoother,
) -> Result<DMatrix<T>> {
    let n = w.nrows();
    if responses.nrows() != n {
        return Err(Error::Dimension(
            "responses and controls differ in length".into(),
        ));
    }
    match *smoother {
        Smoother::SampleMean => {
            let means = responses.row_mean();
            Ok(DMatrix::from_fn(n, responses.ncols(), |_, c| means[c]))
        }
        Smoother::NearestNeighbor { k } => {
            if k == 0 || k >= n {
                return Err(Error::InvalidConfig(format!(
                    "nearest-neighbor smoother needs 0 < k < n, got k={k}, n={n}"
                )));
            }
            let mut out = DMatrix::zeros(n, responses.ncols());
            let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
            for i in 0..n {
                dist.clear();
                dist.extend((0..n).map(|j| ((w.row(i) - w.row(j)).norm_squared().as_f64(), j)));
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in &dist[..k] {
                    for c in 0..responses.ncols() {
                        out[(i, c)] += responses[(j, c)];
                    }
                }
            }
            Ok(out / T::from_usize_lossy(k))
        }
        Smoother::Series { level } => {
            let design = series_design(w, level);
            if design.ncols() >= n {
                return Err(Error::InvalidConfig(format!(
                    "series smoother has {} basis functions for n={n}",
                    design.ncols()
                )));
            }
            let svd = design.clone().svd(true, true);
            let coef = svd
                .solve(responses, T::lit(1e-10) * svd.singular_values.max())
                .map_err(|e| Error::Singular(e.to_string()))?;
            Ok(design * coef)
        }
    }
}

/// Partialling-out estimate with its homoskedastic variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleEstimate<T: Real> {
    pub beta_hat: DVector<T>,
    /// `σ̂² (Σ sᵢsᵢ')⁻¹`.
    pub covariance: DMatrix<T>,
    /// Residual mean square of the partialled-out regression.
    pub sigma2_hat: T,
    pub smoother: Smoother,
}

pub fn feasible_robinson<T: Real>(
    data: &Dataset<T>,
    smoother: &Smoother,
) -> Result<FeasibleEstimate<T>> {
    let n = data.n();
    let dx = data.dx();
    let mut stacked = DMatrix::zeros(n, 1 + dx);
    stacked.set_column(0, data.y());
    stacked.view_mut((0, 1), (n, dx)).copy_from(data.x());
    let fitted = smooth_columns(data.w(), &stacked, smoother)?;
    let resid = stacked - fitted;
    let ry = resid.column(0).into_owned();
    let s = resid.columns(1, dx).into_owned();
    let sts = s.tr_mul(&s);
    let chol = sts
        .cholesky()
        .ok_or_else(|| Error::Singular("partialled-out design is singular".into()))?;
    let beta_hat = chol.solve(&s.tr_mul(&ry));
    let e = &ry - &s * &beta_hat;
    let dof = n.saturating_sub(dx).max(1);
    let sigma2_hat = e.norm_squared() / T::from_usize_lossy(dof);
    let covariance = chol.inverse() * sigma2_hat;
    Ok(FeasibleEstimate {
        beta_hat,
        covariance,
        sigma2_hat,
        smoother: *smoother,
    })
}
