//! Serializable description of a complete study, plus the bundled regimes.

use serde::{Deserialize, Serialize};

use crate::dgp::{DgpSpec, ErrorFamily, FunctionSpec, TruthSmoothness, TruthSpec, WLaw};
use crate::diagnostics::{Experiment, Regime};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::priors::{MaternSpec, NuisancePrior, PriorSpec, WaveletPriorSpec};
use crate::samplers::{ChainConfig, SamplerId, SamplerSpec};
use crate::seeding::config_hash;

/// Monte Carlo settings shared by the study commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub replications: usize,
    pub level: f64,
    pub n_grid: Vec<usize>,
    pub contraction_replications: usize,
    pub master_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            replications: 200,
            level: 0.9,
            n_grid: vec![100, 400, 1600],
            contraction_replications: 2,
            master_seed: 20240611,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dgp: DgpSpec,
    pub truth: TruthSpec,
    #[serde(default)]
    pub model: ModelConfig<f64>,
    #[serde(default)]
    pub chain: ChainConfig,
    /// Priors of the `(β, m)` sampler.
    pub priors: PriorSpec<f64>,
    /// Prior of the `(β, η)` sampler.
    pub eta_prior: NuisancePrior<f64>,
    #[serde(default)]
    pub study: StudyConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.model.validate()?;
        self.chain.validate()?;
        self.priors.validate()?;
        self.eta_prior.validate()?;
        if self.truth.beta0.len() != self.dgp.d_x {
            return Err(Error::InvalidConfig(format!(
                "truth has {} coefficients but d_x = {}",
                self.truth.beta0.len(),
                self.dgp.d_x
            )));
        }
        if !(self.study.level > 0.0 && self.study.level < 1.0) {
            return Err(Error::InvalidConfig(
                "study.level must lie in (0, 1)".into(),
            ));
        }
        self.truth.build::<f64>().map(|_| ())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    pub fn experiment(&self) -> Result<Experiment<f64>> {
        self.validate()?;
        Ok(Experiment {
            dgp: self.dgp,
            truth: self.truth.build()?,
            model: self.model,
            chain: self.chain.clone(),
        })
    }

    pub fn sampler(&self, id: SamplerId) -> SamplerSpec<f64> {
        match id {
            SamplerId::BetaM => SamplerSpec::BetaM {
                priors: self.priors,
            },
            SamplerId::BetaEta => SamplerSpec::BetaEta {
                eta: self.eta_prior,
            },
        }
    }

    pub fn regime(&self) -> Result<Regime<f64>> {
        Ok(Regime {
            name: self.name.clone(),
            experiment: self.experiment()?,
            beta_m: self.sampler(SamplerId::BetaM),
            beta_eta: self.sampler(SamplerId::BetaEta),
            smoothness: self.truth.smoothness,
        })
    }

    /// Bundled regime by name: `smooth`, `rough-m02` or `misspecified`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "smooth" => Some(Self::smooth()),
            "rough-m02" | "rough_m02" => Some(Self::rough_m02()),
            "misspecified" => Some(Self::misspecified()),
            _ => None,
        }
    }

    /// Smooth trigonometric truths with Matérn(α = 1) priors; every
    /// regularity condition holds for both parametrizations.
    pub fn smooth() -> Self {
        let sine = |amplitude: f64, frequency: f64, phase: f64| FunctionSpec::Sine {
            amplitude,
            frequency,
            phase,
            coordinate: 0,
        };
        let matern = MaternSpec {
            lengthscale: 0.3,
            ..MaternSpec::with_alpha(1.0)
        };
        Self {
            name: "smooth".into(),
            dgp: DgpSpec {
                n: 500,
                d_x: 1,
                d_w: 1,
                error_family: ErrorFamily::Gaussian,
                w_law: WLaw::Uniform,
                seed: 7,
            },
            truth: TruthSpec {
                m01: None,
                eta0: Some(sine(1.0, 1.0, 0.3)),
                m02: vec![sine(0.8, 1.0, 0.0)],
                beta0: vec![0.5],
                sigma01_sq: 1.0,
                sigma02_sq: 1.0,
                smoothness: TruthSmoothness {
                    alpha01: Some(3.0),
                    alpha02: Some(3.0),
                    alpha0_eta: Some(3.0),
                },
            },
            model: ModelConfig::default(),
            chain: ChainConfig {
                n_iter: 1200,
                burn_in: 200,
                ..ChainConfig::default()
            },
            priors: PriorSpec {
                m1: NuisancePrior::Matern(matern),
                m2: NuisancePrior::Matern(matern),
            },
            eta_prior: NuisancePrior::Matern(matern),
            study: StudyConfig::default(),
        }
    }

    /// `m₀₂` a rough Hölder series (α₀ = 0.6). The `(β, m)` priors are
    /// Matérn(0.55); the `(β, η)` prior is Matérn(2), too smooth for `m₀₂`.
    pub fn rough_m02() -> Self {
        let mut cfg = Self::smooth();
        cfg.name = "rough-m02".into();
        cfg.truth.m02 = vec![FunctionSpec::Holder {
            alpha0: 0.6,
            bound: 2.0,
            levels: 10,
            seed: 11,
            coordinate: 0,
        }];
        cfg.truth.smoothness = TruthSmoothness {
            alpha01: Some(0.6),
            alpha02: Some(0.6),
            alpha0_eta: Some(3.0),
        };
        let rough = MaternSpec {
            lengthscale: 0.3,
            ..MaternSpec::with_alpha(0.55)
        };
        cfg.priors = PriorSpec {
            m1: NuisancePrior::Matern(rough),
            m2: NuisancePrior::Matern(rough),
        };
        cfg.eta_prior = NuisancePrior::Matern(MaternSpec {
            lengthscale: 0.3,
            ..MaternSpec::with_alpha(2.0)
        });
        cfg
    }

    /// Scaled-uniform errors, tilted controls and uniform wavelet priors
    /// whose support contains the (series) truths.
    pub fn misspecified() -> Self {
        let mut cfg = Self::smooth();
        cfg.name = "misspecified".into();
        cfg.dgp.error_family = ErrorFamily::ScaledUniform;
        cfg.dgp.w_law = WLaw::Tilted { tilt: 0.3 };
        let holder = |seed: u64| FunctionSpec::Holder {
            alpha0: 0.9,
            bound: 1.0,
            levels: 6,
            seed,
            coordinate: 0,
        };
        cfg.truth = TruthSpec {
            m01: Some(holder(21)),
            eta0: None,
            m02: vec![holder(22)],
            beta0: vec![0.5],
            sigma01_sq: 1.0,
            sigma02_sq: 1.0,
            smoothness: TruthSmoothness {
                alpha01: Some(0.9),
                alpha02: Some(0.9),
                alpha0_eta: None,
            },
        };
        let wavelet = NuisancePrior::Wavelet(WaveletPriorSpec::new(0.8, 1.5, None));
        cfg.priors = PriorSpec {
            m1: wavelet,
            m2: wavelet,
        };
        cfg.eta_prior = wavelet;
        cfg
    }
}
