//! Synthetic data with controlled nuisance smoothness, plus checks of the
//! distributional assumptions on any dataset.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequentist::{smooth_columns, Smoother};
use crate::model::{Dataset, NuisanceValues};
use crate::priors::{sample_wavelet_prior, series_eval, WaveletCoefficients, WaveletPriorSpec};
use crate::scalar::Real;
use crate::seeding::rng_from_seed;

/// Truth function of the controls.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthFunction<T: Real> {
    Constant(T),
    /// `amplitude · sin(2π · frequency · w_coordinate + phase)`.
    Sine {
        amplitude: T,
        frequency: T,
        phase: T,
        coordinate: usize,
    },
    /// Faber–Schauder series in one coordinate.
    Series {
        coeffs: WaveletCoefficients<T>,
        coordinate: usize,
    },
    Sum(Vec<TruthFunction<T>>),
    Scaled(T, Box<TruthFunction<T>>),
}

impl<T: Real> TruthFunction<T> {
    pub fn eval(&self, w: &[T]) -> T {
        match self {
            TruthFunction::Constant(c) => *c,
            TruthFunction::Sine {
                amplitude,
                frequency,
                phase,
                coordinate,
            } => *amplitude * (T::two_pi() * *frequency * w[*coordinate] + *phase).sin(),
            TruthFunction::Series { coeffs, coordinate } => series_eval(coeffs, w[*coordinate]),
            TruthFunction::Sum(terms) => terms.iter().fold(T::zero(), |a, t| a + t.eval(w)),
            TruthFunction::Scaled(c, inner) => *c * inner.eval(w),
        }
    }

    /// Values at every row of the design.
    pub fn eval_design(&self, w: &DMatrix<T>) -> DVector<T> {
        let mut row = vec![T::zero(); w.ncols()];
        DVector::from_fn(w.nrows(), |i, _| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = w[(i, j)];
            }
            self.eval(&row)
        })
    }

    fn max_coordinate(&self) -> usize {
        match self {
            TruthFunction::Constant(_) => 0,
            TruthFunction::Sine { coordinate, .. } | TruthFunction::Series { coordinate, .. } => {
                *coordinate
            }
            TruthFunction::Sum(t) => t.iter().map(Self::max_coordinate).max().unwrap_or(0),
            TruthFunction::Scaled(_, inner) => inner.max_coordinate(),
        }
    }
}

/// Serializable description of a truth function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionSpec {
    Zero,
    Constant {
        value: f64,
    },
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        coordinate: usize,
    },
    /// Random Hölder-class series from [`make_holder_function`].
    Holder {
        alpha0: f64,
        #[serde(rename = "M")]
        bound: f64,
        levels: usize,
        seed: u64,
        #[serde(default)]
        coordinate: usize,
    },
    Sum {
        terms: Vec<FunctionSpec>,
    },
    Scaled {
        factor: f64,
        inner: Box<FunctionSpec>,
    },
}

impl FunctionSpec {
    pub fn build<T: Real>(&self) -> TruthFunction<T> {
        match self {
            FunctionSpec::Zero => TruthFunction::Constant(T::zero()),
            FunctionSpec::Constant { value } => TruthFunction::Constant(T::lit(*value)),
            FunctionSpec::Sine {
                amplitude,
                frequency,
                phase,
                coordinate,
            } => TruthFunction::Sine {
                amplitude: T::lit(*amplitude),
                frequency: T::lit(*frequency),
                phase: T::lit(*phase),
                coordinate: *coordinate,
            },
            FunctionSpec::Holder {
                alpha0,
                bound,
                levels,
                seed,
                coordinate,
            } => TruthFunction::Series {
                coeffs: make_holder_function(T::lit(*alpha0), T::lit(*bound), *levels, *seed),
                coordinate: *coordinate,
            },
            FunctionSpec::Sum { terms } => {
                TruthFunction::Sum(terms.iter().map(|t| t.build()).collect())
            }
            FunctionSpec::Scaled { factor, inner } => {
                TruthFunction::Scaled(T::lit(*factor), Box::new(inner.build()))
            }
        }
    }
}

/// Declared Hölder smoothness of the truth, used by the regularity checks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSmoothness {
    pub alpha01: Option<f64>,
    pub alpha02: Option<f64>,
    pub alpha0_eta: Option<f64>,
}

/// Serializable truth: either `m01` or `eta0` must be given, the other is
/// derived through the Robinson identity `m₀₁ = η₀ + m₀₂'β₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    #[serde(default)]
    pub m01: Option<FunctionSpec>,
    #[serde(default)]
    pub eta0: Option<FunctionSpec>,
    pub m02: Vec<FunctionSpec>,
    pub beta0: Vec<f64>,
    pub sigma01_sq: f64,
    #[serde(default = "one")]
    pub sigma02_sq: f64,
    #[serde(default)]
    pub smoothness: TruthSmoothness,
}

fn one() -> f64 {
    1.0
}

impl TruthSpec {
    pub fn build<T: Real>(&self) -> Result<TrueFunctions<T>> {
        if self.m02.len() != self.beta0.len() || self.beta0.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "truth has {} m02 components but {} beta0 entries",
                self.m02.len(),
                self.beta0.len()
            )));
        }
        if !(self.sigma01_sq > 0.0 && self.sigma02_sq > 0.0) {
            return Err(Error::InvalidConfig(
                "truth variances must be positive".into(),
            ));
        }
        let m02: Vec<TruthFunction<T>> = self.m02.iter().map(|f| f.build()).collect();
        let beta0 = DVector::from_iterator(self.beta0.len(), self.beta0.iter().map(|b| T::lit(*b)));
        let m01 = match (&self.m01, &self.eta0) {
            (Some(m01), None) => m01.build(),
            (None, Some(eta0)) => {
                let mut terms = vec![eta0.build()];
                for (f, b) in m02.iter().zip(beta0.iter()) {
                    terms.push(TruthFunction::Scaled(*b, Box::new(f.clone())));
                }
                TruthFunction::Sum(terms)
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "give exactly one of m01 and eta0".into(),
                ))
            }
        };
        Ok(TrueFunctions {
            m01,
            m02,
            beta0,
            sigma01_sq: T::lit(self.sigma01_sq),
            sigma02_sq: T::lit(self.sigma02_sq),
        })
    }
}

/// Data-generating truth `(m₀₁, m₀₂, β₀, σ₀₁², σ₀₂²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueFunctions<T: Real> {
    pub m01: TruthFunction<T>,
    pub m02: Vec<TruthFunction<T>>,
    pub beta0: DVector<T>,
    pub sigma01_sq: T,
    pub sigma02_sq: T,
}

impl<T: Real> TrueFunctions<T> {
    pub fn dx(&self) -> usize {
        self.beta0.len()
    }

    pub fn nuisance_at(&self, w: &DMatrix<T>) -> NuisanceValues<T> {
        let m1 = self.m01.eval_design(w);
        let mut m2 = DMatrix::zeros(w.nrows(), self.dx());
        for (k, f) in self.m02.iter().enumerate() {
            m2.set_column(k, &f.eval_design(w));
        }
        NuisanceValues { m1, m2 }
    }

    /// `η₀ = m₀₁ − m₀₂'β₀` at the design.
    pub fn eta0_at(&self, w: &DMatrix<T>) -> DVector<T> {
        let m = self.nuisance_at(w);
        m.m1 - m.m2 * &self.beta0
    }

    /// `(ε₂, U)` at the data: `ε₂ = x − m₀₂(w)`, `U = y − m₀₁(w) − ε₂'β₀`.
    pub fn latent_errors(&self, data: &Dataset<T>) -> (DMatrix<T>, DVector<T>) {
        let m = self.nuisance_at(data.w());
        let eps2 = data.x() - &m.m2;
        let u = data.y() - &m.m1 - &eps2 * &self.beta0;
        (eps2, u)
    }
}

/// Random Hölder-class series `c_lk = 2^(−l(α₀+1/2)) u_lk`,
/// `u_lk ~ Uniform[−M, M]`, levels `0..=max_level`, deterministic in `seed`.
pub fn make_holder_function<T: Real>(
    alpha0: T,
    bound: T,
    max_level: usize,
    seed: u64,
) -> WaveletCoefficients<T> {
    let spec = WaveletPriorSpec::new(alpha0, bound, Some(max_level));
    sample_wavelet_prior(&spec, max_level, &mut rng_from_seed(seed))
}

/// Mean-zero, unit-variance error laws, all sub-Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorFamily {
    #[default]
    Gaussian,
    /// Uniform on `[−√3, √3]`.
    ScaledUniform,
    /// Laplace truncated at three scale units, rescaled to unit variance.
    ScaledLaplaceTruncated,
}

const LAPLACE_TRUNCATION: f64 = 3.0;

impl ErrorFamily {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ErrorFamily::Gaussian => rng.sample(StandardNormal),
            ErrorFamily::ScaledUniform => 3f64.sqrt() * rng.random_range(-1.0..1.0),
            ErrorFamily::ScaledLaplaceTruncated => {
                let c = LAPLACE_TRUNCATION;
                let tail = 1.0 - (-c).exp();
                let var = (2.0 - (-c).exp() * (c * c + 2.0 * c + 2.0)) / tail;
                let u: f64 = rng.random();
                let magnitude = -(1.0 - u * tail).ln();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * magnitude / var.sqrt()
            }
        }
    }
}

/// Marginal law of each control coordinate on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WLaw {
    #[default]
    Uniform,
    /// Density `(1 − tilt) + tilt · 2w`, bounded in `[1 − tilt, 1 + tilt]`.
    Tilted { tilt: f64 },
}

impl WLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WLaw::Uniform => rng.random(),
            WLaw::Tilted { tilt } => {
                if rng.random::<f64>() < *tilt {
                    rng.random::<f64>().sqrt()
                } else {
                    rng.random()
                }
            }
        }
    }

    pub fn density(&self, w: f64) -> f64 {
        match self {
            WLaw::Uniform => 1.0,
            WLaw::Tilted { tilt } => (1.0 - tilt) + tilt * 2.0 * w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    #[serde(default = "one_usize")]
    pub d_x: usize,
    #[serde(default = "one_usize")]
    pub d_w: usize,
    #[serde(default)]
    pub error_family: ErrorFamily,
    #[serde(default)]
    pub w_law: WLaw,
    #[serde(default)]
    pub seed: u64,
}

fn one_usize() -> usize {
    1
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d_x == 0 || self.d_w == 0 {
            return Err(Error::InvalidConfig(
                "dgp needs n >= 2, d_x >= 1, d_w >= 1".into(),
            ));
        }
        if let WLaw::Tilted { tilt } = self.w_law {
            if !(0.0..1.0).contains(&tilt) {
                return Err(Error::InvalidConfig("tilt must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Draws `W_i ~ w_law`, `X_i = m₀₂(W_i) + σ₀₂ e₂ᵢ`,
/// `Y_i = m₀₁(W_i) + (X_i − m₀₂(W_i))'β₀ + σ₀₁ e₁ᵢ`.
pub fn simulate<T: Real>(spec: &DgpSpec, truth: &TrueFunctions<T>) -> Result<Dataset<T>> {
    spec.validate()?;
    if truth.dx() != spec.d_x {
        return Err(Error::Dimension(format!(
            "truth has dx={}, spec has d_x={}",
            truth.dx(),
            spec.d_x
        )));
    }
    let coord_needed = truth
        .m02
        .iter()
        .map(TruthFunction::max_coordinate)
        .chain(std::iter::once(truth.m01.max_coordinate()))
        .max()
        .unwrap_or(0);
    if coord_needed >= spec.d_w {
        return Err(Error::Dimension(format!(
            "truth reads control coordinate {coord_needed}, spec has d_w={}",
            spec.d_w
        )));
    }
    let mut rng = rng_from_seed(spec.seed);
    let n = spec.n;
    let w = DMatrix::from_fn(n, spec.d_w, |_, _| T::lit(spec.w_law.sample(&mut rng)));
    let m = truth.nuisance_at(&w);
    let sd1 = truth.sigma01_sq.sqrt();
    let sd2 = truth.sigma02_sq.sqrt();
    let mut x = DMatrix::zeros(n, spec.d_x);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut lin = T::zero();
        for k in 0..spec.d_x {
            let e2 = sd2 * T::lit(spec.error_family.sample(&mut rng));
            x[(i, k)] = m.m2[(i, k)] + e2;
            lin += e2 * truth.beta0[k];
        }
        let u = sd1 * T::lit(spec.error_family.sample(&mut rng));
        y[i] = m.m1[i] + lin + u;
    }
    Dataset::new(y, x, w)
}

/// Outcome of [`validate_assumptions`]; failures are flags, never errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n: usize,
    /// `"truth"` or the smoother used to estimate `E[X|W]`.
    pub projection_source: String,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub eigenvalue_bounds: (f64, f64),
    pub eigenvalues_within_bounds: bool,
    pub fourth_moment_y: f64,
    pub fourth_moment_x: f64,
    pub fourth_moments_finite: bool,
    /// X is a function of W up to numerical tolerance.
    pub degenerate_design: bool,
    /// Conditions that cannot be checked from a sample.
    pub untestable: Vec<String>,
}

/// Default `[c_lower, c_upper]` for the projection-error second moment.
pub const DEFAULT_EIGEN_BOUNDS: (f64, f64) = (1e-3, 1e3);

const DEGENERACY_TOLERANCE: f64 = 1e-10;

pub fn validate_assumptions<T: Real>(
    data: &Dataset<T>,
    truth: Option<&TrueFunctions<T>>,
    eigen_bounds: (f64, f64),
) -> AssumptionReport {
    let n = data.n();
    let (m1, m2, source) = match truth {
        Some(t) => {
            let m = t.nuisance_at(data.w());
            (m.m1, m.m2, "truth".to_string())
        }
        None => {
            let smoother = Smoother::default_for(n);
            let fitted_y = smooth_columns(
                data.w(),
                &DMatrix::from_column_slice(n, 1, data.y().as_slice()),
                &smoother,
            )
            .map(|f| f.column(0).into_owned())
            .unwrap_or_else(|_| DVector::from_element(n, data.y().mean()));
            let fitted_x = smooth_columns(data.w(), data.x(), &smoother).unwrap_or_else(|_| {
                let means = data.x().row_mean();
                DMatrix::from_fn(n, data.dx(), |_, k| means[k])
            });
            (fitted_y, fitted_x, smoother.label())
        }
    };
    let s = data.x() - &m2;
    let gram = s.tr_mul(&s) / T::from_usize_lossy(n);
    let eig = gram.symmetric_eigen().eigenvalues;
    let min_eig = eig.min().as_f64();
    let max_eig = eig.max().as_f64();
    let scale = data.x().iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / (n * data.dx()) as f64;
    let degenerate = min_eig <= DEGENERACY_TOLERANCE * scale.max(1.0);
    let ey = data.y() - &m1;
    let fourth_y = ey.iter().map(|v| v.as_f64().powi(4)).sum::<f64>() / n as f64;
    let fourth_x = s
        .row_iter()
        .map(|r| r.norm_squared().as_f64().powi(2))
        .sum::<f64>()
        / n as f64;
    AssumptionReport {
        n,
        projection_source: source,
        min_eigenvalue: min_eig,
        max_eigenvalue: max_eig,
        eigenvalue_bounds: eigen_bounds,
        eigenvalues_within_bounds: min_eig >= eigen_bounds.0 && max_eig <= eigen_bounds.1,
        fourth_moment_y: fourth_y,
        fourth_moment_x: fourth_x,
        fourth_moments_finite: fourth_y.is_finite() && fourth_x.is_finite(),
        degenerate_design: degenerate,
        untestable: vec![
            "conditional density of (Y, X) given W and finiteness of its log-moment".to_string(),
        ],
    }
}

/// Writes `y, x1..x_dx, w1..w_dw` with a header row.
pub fn write_dataset_csv<T: Real, W: Write>(data: &Dataset<T>, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.dx()).map(|k| format!("x{k}")));
    header.extend((1..=data.dw()).map(|j| format!("w{j}")));
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![data.y()[i].as_f64().to_string()];
        rec.extend((0..data.dx()).map(|k| data.x()[(i, k)].as_f64().to_string()));
        rec.extend((0..data.dw()).map(|j| data.w()[(i, j)].as_f64().to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the CSV layout of [`write_dataset_csv`]. With `rescale_controls`
/// each `w` column is mapped affinely onto `[0, 1]` instead of range-checked.
pub fn read_dataset_csv<T: Real, R: Read>(input: R, rescale_controls: bool) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let dx = header.iter().filter(|h| h.starts_with('x')).count();
    let dw = header.iter().filter(|h| h.starts_with('w')).count();
    let mut expected = vec!["y".to_string()];
    expected.extend((1..=dx).map(|k| format!("x{k}")));
    expected.extend((1..=dw).map(|j| format!("w{j}")));
    if dx == 0 || dw == 0 || header != expected {
        return Err(Error::InvalidData(format!(
            "CSV header {header:?} does not match the schema y, x1..x<dx>, w1..w<dw>"
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::InvalidData(format!(
                "row {} has {} fields, expected {}",
                r + 1,
                rec.len(),
                header.len()
            )));
        }
        let mut row = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidData(format!(
                    "row {}, column '{}': cannot parse '{field}'",
                    r + 1,
                    header[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {}, column '{}': non-finite value {v}",
                    r + 1,
                    header[c]
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    let n = rows.len();
    let y = DVector::from_fn(n, |i, _| T::lit(rows[i][0]));
    let x = DMatrix::from_fn(n, dx, |i, k| T::lit(rows[i][1 + k]));
    let w = DMatrix::from_fn(n, dw, |i, j| T::lit(rows[i][1 + dx + j]));
    if rescale_controls {
        Dataset::with_rescaled_controls(y, x, w)
    } else {
        Dataset::new(y, x, w)
    }
}
