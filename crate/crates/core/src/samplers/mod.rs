//! Gibbs samplers for the `(β, m)` and `(β, η)` parametrizations.

mod blocks;
mod slice;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{
    m2_pseudo_observation, truncated_normal, update_beta, update_beta_marginal, update_xi,
    BetaStep, FunctionBlock, GpBlock, GridBlock, WaveletBlock, XiStep,
};
pub use slice::{slice_update_wavelet, CoefficientLikelihood, SliceOutcome, MAX_SHRINK_STEPS};

use crate::diagnostics::{effective_sample_size, split_rhat};
use crate::error::{Error, Result};
use crate::frequentist::{feasible_robinson, Smoother};
use crate::model::{Dataset, ModelConfig};
use crate::priors::{NuisancePrior, PriorSpec, SpectralFactor};
use crate::scalar::Real;
use crate::seeding::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Init {
    /// Nuisance functions and β drawn from their priors.
    #[default]
    PriorDraw,
    /// Prior draws for the nuisances; β at the partialling-out estimate
    /// shifted by two standard errors in a random direction per coordinate.
    Overdispersed,
    Zero,
    User {
        beta: Vec<f64>,
        #[serde(default)]
        xi: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaUpdate {
    /// Conjugate Gaussian restricted to `[−B, B]^dx`.
    #[default]
    ConjugateTruncated,
    /// Conjugate Gaussian under a flat prior on all of `ℝ^dx`.
    ConjugateFlat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub beta_update: BetaUpdate,
    /// Store the nuisance values of every retained draw.
    #[serde(default)]
    pub keep_nuisance: bool,
}

fn one() -> usize {
    1
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 2500,
            burn_in: 500,
            thin: 1,
            seed: 0,
            init: Init::default(),
            beta_update: BetaUpdate::default(),
            keep_nuisance: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// `⌈(n_iter − burn_in) / thin⌉`.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerId {
    BetaM,
    BetaEta,
}

/// Which sampler to run, with its nuisance priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec<T: Real> {
    BetaM { priors: PriorSpec<T> },
    BetaEta { eta: NuisancePrior<T> },
}

impl<T: Real> SamplerSpec<T> {
    pub fn id(&self) -> SamplerId {
        match self {
            SamplerSpec::BetaM { .. } => SamplerId::BetaM,
            SamplerSpec::BetaEta { .. } => SamplerId::BetaEta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerSpec::BetaM { priors } => priors.validate(),
            SamplerSpec::BetaEta { eta } => eta.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub sampler: SamplerId,
    pub config: ChainConfig,
    /// Acceptance rates of the non-conjugate blocks, keyed by block name.
    pub acceptance: BTreeMap<String, f64>,
    /// Split-chain potential scale reduction per β coordinate.
    pub split_rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws<T: Real> {
    /// `draws × dx`.
    pub beta: DMatrix<T>,
    /// Precision draws in unknown-variance mode.
    pub xi: Option<DVector<T>>,
    pub m1: Option<Vec<DVector<T>>>,
    pub m2: Option<Vec<DMatrix<T>>>,
    pub eta: Option<Vec<DVector<T>>>,
    pub meta: ChainMeta,
}

/// Empirical `q`-quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl<T: Real> PosteriorDraws<T> {
    pub fn n_draws(&self) -> usize {
        self.beta.nrows()
    }

    pub fn dx(&self) -> usize {
        self.beta.ncols()
    }

    pub fn beta_column(&self, k: usize) -> Vec<f64> {
        self.beta.column(k).iter().map(|v| v.as_f64()).collect()
    }

    pub fn beta_mean(&self) -> DVector<T> {
        self.beta.row_mean().transpose()
    }

    pub fn beta_quantile(&self, k: usize, q: f64) -> f64 {
        let mut col = self.beta_column(k);
        col.sort_by(f64::total_cmp);
        empirical_quantile(&col, q)
    }

    /// Equitailed credible interval `[c(α/2), c(1−α/2)]` for `level = 1 − α`.
    pub fn credible_interval(&self, k: usize, level: f64) -> (f64, f64) {
        let mut col = self.beta_column(k);
        col.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        (
            empirical_quantile(&col, a),
            empirical_quantile(&col, 1.0 - a),
        )
    }

    /// Rows `beta1..betadx[, xi]` with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dx()).map(|k| format!("beta{k}")).collect();
        if self.xi.is_some() {
            header.push("xi".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.n_draws() {
            let mut rec: Vec<String> = (0..self.dx())
                .map(|k| self.beta[(i, k)].as_f64().to_string())
                .collect();
            if let Some(xi) = &self.xi {
                rec.push(xi[i].as_f64().to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON metadata sidecar for [`write_csv`](Self::write_csv).
    pub fn write_sidecar<W: Write>(&self, config_hash: &str, out: W) -> Result<()> {
        let doc = serde_json::json!({
            "schema_version": 1,
            "config_hash": config_hash,
            "seed": self.meta.config.seed,
            "draws": self.n_draws(),
            "meta": self.meta,
        });
        serde_json::to_writer_pretty(out, &doc)?;
        Ok(())
    }
}

struct Chain<'a, T: Real> {
    data: &'a Dataset<T>,
    model: &'a ModelConfig<T>,
    bound: Option<T>,
    beta: DVector<T>,
    xi: T,
    rng: ChaCha8Rng,
    xi_accepted: u64,
    xi_steps: u64,
}

impl<'a, T: Real> Chain<'a, T> {
    fn new(data: &'a Dataset<T>, model: &'a ModelConfig<T>, chain: &ChainConfig) -> Self {
        let bound = match chain.beta_update {
            BetaUpdate::ConjugateTruncated => Some(model.beta_bound),
            BetaUpdate::ConjugateFlat => None,
        };
        let (lo, hi) = model.xi_bounds;
        Self {
            data,
            model,
            bound,
            beta: DVector::zeros(data.dx()),
            xi: (T::one() / model.sigma01_sq).max(lo).min(hi),
            rng: rng_from_seed(chain.seed),
            xi_accepted: 0,
            xi_steps: 0,
        }
    }

    fn precision(&self) -> T {
        if self.model.variance_known {
            T::one() / self.model.sigma01_sq
        } else {
            self.xi
        }
    }

    fn init_theta(&mut self, init: &Init) -> Result<()> {
        let dx = self.data.dx();
        let b = self.model.beta_bound.as_f64();
        match init {
            Init::PriorDraw => {
                self.beta = DVector::from_fn(dx, |_, _| T::lit(self.rng.random_range(-b..=b)));
            }
            Init::Overdispersed => {
                let est = feasible_robinson(self.data, &Smoother::default_for(self.data.n()))?;
                self.beta = DVector::from_fn(dx, |k, _| {
                    let sign = if self.rng.random::<bool>() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    let v = est.beta_hat[k] + sign * T::lit(2.0) * est.covariance[(k, k)].sqrt();
                    v.max(-self.model.beta_bound).min(self.model.beta_bound)
                });
            }
            Init::Zero => self.beta = DVector::zeros(dx),
            Init::User { beta, xi } => {
                if beta.len() != dx {
                    return Err(Error::Dimension(format!(
                        "initial beta has {} entries, data has dx={dx}",
                        beta.len()
                    )));
                }
                self.beta = DVector::from_iterator(dx, beta.iter().map(|v| T::lit(*v)));
                if let Some(xi) = xi {
                    let (lo, hi) = self.model.xi_bounds;
                    self.xi = T::lit(*xi).max(lo).min(hi);
                }
            }
        }
        Ok(())
    }

    fn step_beta(&mut self, s: &DMatrix<T>, r: &DVector<T>) -> Result<()> {
        self.beta = update_beta(
            s,
            r,
            self.precision(),
            &self.beta,
            self.bound,
            &mut self.rng,
        )?
        .beta;
        Ok(())
    }

    /// β drawn with the Gaussian nuisance block `f` integrated out of
    /// `r = Sβ + f + e`. Returns `false` when the block is not Gaussian.
    fn step_beta_marginal(
        &mut self,
        f: &dyn FunctionBlock<T>,
        s: &DMatrix<T>,
        r: &DVector<T>,
    ) -> Result<bool> {
        let dx = s.ncols();
        let mut rhs = DMatrix::zeros(s.nrows(), dx + 1);
        rhs.view_mut((0, 0), (s.nrows(), dx)).copy_from(s);
        rhs.set_column(dx, r);
        let Some(solved) = f.marginal_solve(&rhs, T::one() / self.precision()) else {
            return Ok(false);
        };
        let a_s = solved.columns(0, dx).into_owned();
        let a_r = solved.column(dx).into_owned();
        self.beta =
            update_beta_marginal(s, &a_s, &a_r, &self.beta, self.bound, &mut self.rng)?.beta;
        Ok(true)
    }

    fn step_xi(&mut self, resid: &DVector<T>) -> Result<()> {
        if self.model.variance_known {
            return Ok(());
        }
        let (lo, hi) = self.model.xi_bounds;
        let ssr = resid.norm_squared().as_f64();
        let step = update_xi(
            self.xi.as_f64(),
            self.data.n(),
            ssr,
            (lo.as_f64(), hi.as_f64()),
            &mut self.rng,
        )?;
        self.xi_steps += 1;
        self.xi_accepted += step.accepted as u64;
        self.xi = T::lit(step.xi);
        Ok(())
    }

    fn acceptance(&self, named: Vec<(String, Option<f64>)>) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = named
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect();
        if self.xi_steps > 0 {
            out.insert("xi".into(), self.xi_accepted as f64 / self.xi_steps as f64);
        }
        out
    }
}

struct Recorder<T: Real> {
    beta: Vec<DVector<T>>,
    xi: Vec<T>,
    m1: Vec<DVector<T>>,
    m2: Vec<DMatrix<T>>,
}

impl<T: Real> Recorder<T> {
    fn new() -> Self {
        Self {
            beta: Vec::new(),
            xi: Vec::new(),
            m1: Vec::new(),
            m2: Vec::new(),
        }
    }
}

fn keep(iter: usize, cfg: &ChainConfig) -> bool {
    iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0
}

fn finish<T: Real>(
    rec: Recorder<T>,
    cfg: &ChainConfig,
    sampler: SamplerId,
    acceptance: BTreeMap<String, f64>,
    variance_known: bool,
) -> PosteriorDraws<T> {
    let draws = rec.beta.len();
    let dx = rec.beta.first().map_or(0, |b| b.len());
    let beta = DMatrix::from_fn(draws, dx, |i, k| rec.beta[i][k]);
    let cols: Vec<Vec<f64>> = (0..dx)
        .map(|k| beta.column(k).iter().map(|v| v.as_f64()).collect())
        .collect();
    let meta = ChainMeta {
        sampler,
        config: cfg.clone(),
        acceptance,
        split_rhat: cols.iter().map(|c| split_rhat(c)).collect(),
        ess: cols.iter().map(|c| effective_sample_size(c)).collect(),
    };
    let nuisance = cfg.keep_nuisance;
    let (m1, m2, eta) = match sampler {
        SamplerId::BetaM => (nuisance.then_some(rec.m1), nuisance.then_some(rec.m2), None),
        SamplerId::BetaEta => (None, None, nuisance.then_some(rec.m1)),
    };
    PosteriorDraws {
        beta,
        xi: (!variance_known).then(|| DVector::from_vec(rec.xi)),
        m1,
        m2,
        eta,
        meta,
    }
}

fn check_finite<T: Real>(beta: &DVector<T>, resid: &DVector<T>) -> Result<()> {
    if beta.iter().chain(resid.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(
            "likelihood residuals or coefficient draw".into(),
        ))
    }
}

fn build_block<T: Real>(
    prior: &NuisancePrior<T>,
    data: &Dataset<T>,
    cache: &mut Vec<(crate::priors::MaternSpec<T>, Arc<SpectralFactor<T>>)>,
) -> Result<Box<dyn FunctionBlock<T>>> {
    prior.validate()?;
    match prior {
        NuisancePrior::Matern(spec) => {
            let factor = match cache.iter().find(|(s, _)| s == spec) {
                Some((_, f)) => f.clone(),
                None => {
                    let f = Arc::new(SpectralFactor::new(data.w(), spec)?);
                    cache.push((*spec, f.clone()));
                    f
                }
            };
            Ok(Box::new(GpBlock::new(factor)))
        }
        NuisancePrior::Wavelet(spec) => Ok(Box::new(WaveletBlock::new(data.w(), *spec)?)),
    }
}

/// Gibbs sampler for `(β, m₁, m₂[, ξ])`. Each sweep updates `m₁`, then every
/// coordinate of `m₂`, then β, then ξ in unknown-variance mode.
///
/// When `m₁` is a Gaussian-process block, `(β, m₁)` form one block that
/// opens the sweep: β is drawn with `m₁` integrated out, then `m₁` given β.
/// Otherwise the two pin each other when the noise is small.
pub fn gibbs_beta_m<T: Real>(
    data: &Dataset<T>,
    priors: &PriorSpec<T>,
    chain: &ChainConfig,
    model: &ModelConfig<T>,
) -> Result<PosteriorDraws<T>> {
    let mut cache = Vec::new();
    let m1 = build_block(&priors.m1, data, &mut cache)?;
    let m2 = (0..data.dx())
        .map(|_| build_block(&priors.m2, data, &mut cache))
        .collect::<Result<Vec<_>>>()?;
    gibbs_beta_m_with_blocks(data, m1, m2, chain, model)
}

/// [`gibbs_beta_m`] with caller-supplied nuisance blocks.
pub fn gibbs_beta_m_with_blocks<T: Real>(
    data: &Dataset<T>,
    mut m1: Box<dyn FunctionBlock<T>>,
    mut m2: Vec<Box<dyn FunctionBlock<T>>>,
    cfg: &ChainConfig,
    model: &ModelConfig<T>,
) -> Result<PosteriorDraws<T>> {
    cfg.validate()?;
    model.validate()?;
    let n = data.n();
    let dx = data.dx();
    if m2.len() != dx || m1.values().len() != n || m2.iter().any(|b| b.values().len() != n) {
        return Err(Error::Dimension(
            "nuisance blocks do not match the data".into(),
        ));
    }
    let mut st = Chain::new(data, model, cfg);
    match cfg.init {
        Init::Zero | Init::User { .. } => {
            m1.set_zero();
            m2.iter_mut().for_each(|b| b.set_zero());
        }
        Init::PriorDraw | Init::Overdispersed => {
            m1.draw_prior(&mut st.rng)?;
            for b in m2.iter_mut() {
                b.draw_prior(&mut st.rng)?;
            }
        }
    }
    st.init_theta(&cfg.init)?;

    let y = data.y();
    let x = data.x();
    let sigma2_sq = model.sigma02_sq;
    let mut s = DMatrix::zeros(n, dx);
    let refresh_s = |s: &mut DMatrix<T>, m2: &[Box<dyn FunctionBlock<T>>]| {
        for (k, b) in m2.iter().enumerate() {
            s.set_column(k, &(x.column(k) - b.values()));
        }
    };
    refresh_s(&mut s, &m2);
    let joint = m1.marginal_solve(&DMatrix::zeros(n, 0), T::one()).is_some();
    let mut rec = Recorder::new();
    for iter in 0..cfg.n_iter {
        let sweep = (|| -> Result<()> {
            let xi = st.precision();
            let sigma1_sq = T::one() / xi;
            if joint {
                st.step_beta_marginal(m1.as_ref(), &s, y)?;
            }
            let obs1 = y - &s * &st.beta;
            m1.update(&obs1, sigma1_sq, &mut st.rng)?;
            for k in 0..dx {
                let bk = st.beta[k];
                let mut ytilde = y - m1.values();
                for j in 0..dx {
                    if j != k {
                        ytilde -= s.column(j) * st.beta[j];
                    }
                }
                let (obs, noise) = m2_pseudo_observation(
                    &x.column(k).into_owned(),
                    &ytilde,
                    bk,
                    sigma1_sq,
                    sigma2_sq,
                );
                m2[k].update(&obs, noise, &mut st.rng)?;
                s.set_column(k, &(x.column(k) - m2[k].values()));
            }
            if !joint {
                st.step_beta(&s, &(y - m1.values()))?;
            }
            let resid = y - m1.values() - &s * &st.beta;
            check_finite(&st.beta, &resid)?;
            st.step_xi(&resid)
        })();
        sweep.map_err(|e| e.at_iteration(iter))?;
        if keep(iter, cfg) {
            rec.beta.push(st.beta.clone());
            rec.xi.push(st.xi);
            if cfg.keep_nuisance {
                rec.m1.push(m1.values().clone());
                let mut m = DMatrix::zeros(n, dx);
                for (k, b) in m2.iter().enumerate() {
                    m.set_column(k, b.values());
                }
                rec.m2.push(m);
            }
        }
    }
    let mut named = vec![("m1".to_string(), m1.acceptance_rate())];
    named.extend(
        m2.iter()
            .enumerate()
            .map(|(k, b)| (format!("m2_{}", k + 1), b.acceptance_rate())),
    );
    let acceptance = st.acceptance(named);
    Ok(finish(
        rec,
        cfg,
        SamplerId::BetaM,
        acceptance,
        model.variance_known,
    ))
}

/// Two-block Gibbs sampler for `(β, η[, ξ])`: η is a regression of `y − xβ`
/// on the controls, β a conjugate regression of `y − η` on `x`. A Gaussian
/// η is integrated out of the β draw, which makes each sweep an exact draw
/// of `(β, η)` given ξ.
pub fn gibbs_beta_eta<T: Real>(
    data: &Dataset<T>,
    eta_prior: &NuisancePrior<T>,
    cfg: &ChainConfig,
    model: &ModelConfig<T>,
) -> Result<PosteriorDraws<T>> {
    let mut cache = Vec::new();
    let eta = build_block(eta_prior, data, &mut cache)?;
    gibbs_beta_eta_with_block(data, eta, cfg, model)
}

pub fn gibbs_beta_eta_with_block<T: Real>(
    data: &Dataset<T>,
    mut eta: Box<dyn FunctionBlock<T>>,
    cfg: &ChainConfig,
    model: &ModelConfig<T>,
) -> Result<PosteriorDraws<T>> {
    cfg.validate()?;
    model.validate()?;
    if eta.values().len() != data.n() {
        return Err(Error::Dimension(
            "nuisance block does not match the data".into(),
        ));
    }
    let mut st = Chain::new(data, model, cfg);
    match cfg.init {
        Init::Zero | Init::User { .. } => eta.set_zero(),
        Init::PriorDraw | Init::Overdispersed => eta.draw_prior(&mut st.rng)?,
    }
    st.init_theta(&cfg.init)?;
    let y = data.y();
    let x = data.x();
    let mut rec = Recorder::new();
    for iter in 0..cfg.n_iter {
        let sweep = (|| -> Result<()> {
            let joint = st.step_beta_marginal(eta.as_ref(), x, y)?;
            let obs = y - x * &st.beta;
            eta.update(&obs, T::one() / st.precision(), &mut st.rng)?;
            if !joint {
                st.step_beta(x, &(y - eta.values()))?;
            }
            let resid = y - eta.values() - x * &st.beta;
            check_finite(&st.beta, &resid)?;
            st.step_xi(&resid)
        })();
        sweep.map_err(|e| e.at_iteration(iter))?;
        if keep(iter, cfg) {
            rec.beta.push(st.beta.clone());
            rec.xi.push(st.xi);
            if cfg.keep_nuisance {
                rec.m1.push(eta.values().clone());
            }
        }
    }
    let acceptance = st.acceptance(vec![("eta".to_string(), eta.acceptance_rate())]);
    Ok(finish(
        rec,
        cfg,
        SamplerId::BetaEta,
        acceptance,
        model.variance_known,
    ))
}

/// Runs the requested sampler.
pub fn run_chain<T: Real>(
    sampler: &SamplerSpec<T>,
    data: &Dataset<T>,
    chain: &ChainConfig,
    model: &ModelConfig<T>,
) -> Result<PosteriorDraws<T>> {
    sampler.validate()?;
    match sampler {
        SamplerSpec::BetaM { priors } => gibbs_beta_m(data, priors, chain, model),
        SamplerSpec::BetaEta { eta } => gibbs_beta_eta(data, eta, chain, model),
    }
}
