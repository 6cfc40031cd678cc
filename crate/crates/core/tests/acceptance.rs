//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criteria can be selected by number:
//! `cargo test --test acceptance -- 3 4`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

use plr_bvm::dgp::simulate;
use plr_bvm::diagnostics::{
    bvm_distance, compare_parametrizations, contraction_curve, coverage_experiment, CoverageSampler,
};
use plr_bvm::frequentist::oracle_reference;
use plr_bvm::model::{
    information, kl_objective, score, Dataset, ModelConfig, NuisanceValues, Population, ThetaState,
};
use plr_bvm::priors::{matern_kernel, MaternSpec, SpectralFactor, WaveletPriorSpec};
use plr_bvm::samplers::{
    gibbs_beta_eta_with_block, gibbs_beta_m_with_blocks, m2_pseudo_observation, update_beta,
    update_xi, BetaUpdate, ChainConfig, FunctionBlock, GpBlock, GridBlock, SamplerId, WaveletBlock,
};
use plr_bvm::seeding::rng_from_seed;
use plr_bvm::{ExperimentConfig, Result};

/// Kolmogorov critical value at level 1e-3, asymptotic in the sample size.
const KS_CRIT_1E3: f64 = 1.9495;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn ks_against<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_critical(n: usize) -> f64 {
    KS_CRIT_1E3 / (n as f64).sqrt()
}

fn normal_cdf(mean: f64, sd: f64) -> impl Fn(f64) -> f64 {
    let d = Normal::new(mean, sd).unwrap();
    move |x| d.cdf(x)
}

fn truncated_normal_cdf(mean: f64, sd: f64, lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
    let d = Normal::new(mean, sd).unwrap();
    let (a, b) = (d.cdf(lo), d.cdf(hi));
    move |x| ((d.cdf(x.clamp(lo, hi)) - a) / (b - a)).clamp(0.0, 1.0)
}

/// A nuisance block held fixed at given values.
struct Fixed(DVector<f64>);

impl FunctionBlock<f64> for Fixed {
    fn values(&self) -> &DVector<f64> {
        &self.0
    }
    fn draw_prior(&mut self, _: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }
    fn set_zero(&mut self) {}
    fn update(&mut self, _: &DVector<f64>, _: f64, _: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }
}

fn dense_gram(w: &[f64], spec: &MaternSpec<f64>) -> DMatrix<f64> {
    let n = w.len();
    DMatrix::from_fn(n, n, |i, j| matern_kernel(&[w[i]], &[w[j]], spec))
        + DMatrix::identity(n, n) * spec.jitter
}

fn tiny_data(n: usize, seed: u64) -> Dataset<f64> {
    let mut rng = rng_from_seed(seed);
    let w = DMatrix::from_fn(n, 1, |i, _| {
        (i as f64 + 0.2 + 0.6 * rng.random::<f64>()) / n as f64
    });
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.5..1.5));
    let y = DVector::from_fn(n, |i, _| 0.7 * x[(i, 0)] + rng.random_range(-1.0..1.0));
    Dataset::new(y, x, w).unwrap()
}

const ORACLE_DRAWS: usize = 100_000;

/// Each block against its closed-form conditional.
fn c1_block_oracles() -> Outcome {
    let crit = ks_critical(ORACLE_DRAWS);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let spec = MaternSpec {
        lengthscale: 0.5,
        ..MaternSpec::with_alpha(1.0)
    };

    // Gaussian-process block (m1 and eta) at n = 2 against 2x2 linear algebra.
    {
        let w = [0.2, 0.7];
        let k = dense_gram(&w, &spec);
        let noise = 0.4;
        let obs = DVector::from_vec(vec![0.9, -0.3]);
        let a = k[(0, 0)] + noise;
        let d = k[(1, 1)] + noise;
        let b = k[(0, 1)];
        let det = a * d - b * b;
        let inv = DMatrix::from_row_slice(2, 2, &[d / det, -b / det, -b / det, a / det]);
        let mean = &k * &inv * &obs;
        let cov = &k - &k * &inv * &k;
        let factor = SpectralFactor::new(&DMatrix::from_column_slice(2, 1, &w), &spec).unwrap();
        let mut block = GpBlock::new(std::sync::Arc::new(factor));
        let mut rng = rng_from_seed(101);
        let mut f = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..ORACLE_DRAWS {
            block.update(&obs, noise, &mut rng).unwrap();
            let v = block.values();
            f[0].push(v[0]);
            f[1].push(v[1]);
            f[2].push(v[0] + v[1]);
        }
        let sum_sd = (cov[(0, 0)] + cov[(1, 1)] + 2.0 * cov[(0, 1)]).sqrt();
        worst.push((
            "gp f1".into(),
            ks_against(&f[0], normal_cdf(mean[0], cov[(0, 0)].sqrt())),
        ));
        worst.push((
            "gp f2".into(),
            ks_against(&f[1], normal_cdf(mean[1], cov[(1, 1)].sqrt())),
        ));
        worst.push((
            "gp f1+f2".into(),
            ks_against(&f[2], normal_cdf(mean[0] + mean[1], sum_sd)),
        ));
    }

    // m2 block at n = 3: conditional derived from the full likelihood
    // N(m2; 0, K) N(x; m2, s2) N(y; m1 + (x - m2) b, s1).
    {
        let data = tiny_data(3, 3);
        let w: Vec<f64> = data.w().column(0).iter().copied().collect();
        let (s1, s2, beta) = (0.6, 1.3, 0.8);
        let m1 = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let x = data.x().column(0).into_owned();
        let y = data.y().clone();
        let k = dense_gram(&w, &spec);
        let e = &y - &m1 - &x * beta;
        let q = k.clone().try_inverse().unwrap()
            + DMatrix::identity(3, 3) * (1.0 / s2 + beta * beta / s1);
        let h = &x / s2 - &e * (beta / s1);
        let cov = q.try_inverse().unwrap();
        let mean = &cov * h;
        let ytilde = &y - &m1;
        let (obs, noise) = m2_pseudo_observation(&x, &ytilde, beta, s1, s2);
        let factor = SpectralFactor::new(data.w(), &spec).unwrap();
        let mut block = GpBlock::new(std::sync::Arc::new(factor));
        let mut rng = rng_from_seed(102);
        let mut f = vec![Vec::new(); 3];
        for _ in 0..ORACLE_DRAWS {
            block.update(&obs, noise, &mut rng).unwrap();
            for i in 0..3 {
                f[i].push(block.values()[i]);
            }
        }
        for i in 0..3 {
            worst.push((
                format!("m2 f{}", i + 1),
                ks_against(&f[i], normal_cdf(mean[i], cov[(i, i)].sqrt())),
            ));
        }
    }

    // beta block at n = 3 with m at the truth: free, rejection and inverse-CDF paths.
    {
        let s = DMatrix::from_vec(3, 1, vec![0.9, -0.4, 1.2]);
        let r = DVector::from_vec(vec![0.5, -0.1, 1.0]);
        let xi = 2.0;
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sr: f64 = s.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        let (mean, sd) = (sr / ss, (1.0 / (xi * ss)).sqrt());
        for (label, bound) in [
            ("beta free", None),
            ("beta box wide", Some(mean + 0.5 * sd)),
            ("beta box narrow", Some(0.05)),
        ] {
            let mut rng = rng_from_seed(103);
            let mut cur = DVector::from_element(1, 0.0);
            let draws: Vec<f64> = (0..ORACLE_DRAWS)
                .map(|_| {
                    cur = update_beta(&s, &r, xi, &cur, bound, &mut rng).unwrap().beta;
                    cur[0]
                })
                .collect();
            let d = match bound {
                None => ks_against(&draws, normal_cdf(mean, sd)),
                Some(b) => ks_against(&draws, truncated_normal_cdf(mean, sd, -b, b)),
            };
            worst.push((label.into(), d));
        }
    }

    // xi block: truncated Gamma(n/2 + 1, rate SSR/2).
    {
        let (n, ssr, lo, hi) = (3usize, 2.5, 0.2, 3.0);
        let g = Gamma::new(n as f64 / 2.0 + 1.0, ssr / 2.0).unwrap();
        let (a, b) = (g.cdf(lo), g.cdf(hi));
        let mut rng = rng_from_seed(104);
        let mut xi = 1.0;
        let draws: Vec<f64> = (0..ORACLE_DRAWS)
            .map(|_| {
                xi = update_xi(xi, n, ssr, (lo, hi), &mut rng).unwrap().xi;
                xi
            })
            .collect();
        worst.push((
            "xi".into(),
            ks_against(&draws, |v| {
                ((g.cdf(v.clamp(lo, hi)) - a) / (b - a)).clamp(0.0, 1.0)
            }),
        ));
    }

    // wavelet block with a single (constant) coefficient: truncated normal
    // N(Σobs/n, s²/n) on [−M, M]; slice transitions thinned by 10.
    {
        let w = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 0.8]);
        let spec = WaveletPriorSpec::new(0.8, 0.6, Some(0));
        let mut block = WaveletBlock::new(&w, spec).unwrap();
        let obs = DVector::from_vec(vec![0.7, 0.2, 0.9]);
        let noise = 0.5;
        let mut rng = rng_from_seed(105);
        let mut draws = Vec::with_capacity(ORACLE_DRAWS);
        for it in 0..ORACLE_DRAWS * 10 {
            block.update(&obs, noise, &mut rng).unwrap();
            if it % 10 == 9 {
                draws.push(block.coefficients().get(0, 0));
            }
        }
        let mean = obs.sum() / 3.0;
        worst.push((
            "wavelet".into(),
            ks_against(
                &draws,
                truncated_normal_cdf(mean, (noise / 3.0f64).sqrt(), -0.6, 0.6),
            ),
        ));
    }

    // grid block: exact categorical conditional at each point.
    {
        let grid: Vec<Vec<f64>> = vec![vec![-1.0, 0.0, 1.0], vec![0.5, 1.5, 2.5]];
        let mut block = GridBlock::uniform(grid.clone()).unwrap();
        let obs = DVector::from_vec(vec![0.3, 1.2]);
        let noise = 0.8;
        let mut rng = rng_from_seed(106);
        let mut draws = vec![Vec::new(); 2];
        for _ in 0..ORACLE_DRAWS {
            block.update(&obs, noise, &mut rng).unwrap();
            draws[0].push(block.values()[0]);
            draws[1].push(block.values()[1]);
        }
        for i in 0..2 {
            let logw: Vec<f64> = grid[i]
                .iter()
                .map(|v| -(obs[i] - v).powi(2) / (2.0 * noise))
                .collect();
            let z: f64 = logw.iter().map(|l| l.exp()).sum();
            let probs: Vec<f64> = logw.iter().map(|l| l.exp() / z).collect();
            let g = grid[i].clone();
            let cdf = move |v: f64| {
                g.iter()
                    .zip(&probs)
                    .filter(|(gv, _)| **gv <= v + 1e-12)
                    .map(|(_, p)| p)
                    .sum::<f64>()
            };
            let mut s = draws[i].clone();
            s.sort_by(f64::total_cmp);
            // discrete KS: compare at the atoms only
            let n = s.len() as f64;
            let d = grid[i]
                .iter()
                .map(|v| (s.partition_point(|x| *x <= *v) as f64 / n - cdf(*v)).abs())
                .fold(0.0, f64::max);
            worst.push((format!("grid point {}", i + 1), d));
        }
    }

    // joint (beta, eta) sweep at n = 3: every sweep is an exact draw, compared
    // with the joint Gaussian posterior under a flat coefficient prior.
    {
        let data = tiny_data(3, 5);
        let s1 = 0.5;
        let model = ModelConfig {
            sigma01_sq: s1,
            ..ModelConfig::default()
        };
        let cfg = ChainConfig {
            n_iter: ORACLE_DRAWS + 10,
            burn_in: 10,
            seed: 107,
            beta_update: BetaUpdate::ConjugateFlat,
            keep_nuisance: true,
            ..ChainConfig::default()
        };
        let w: Vec<f64> = data.w().column(0).iter().copied().collect();
        let (mean, cov) = joint_beta_f_posterior(
            &dense_gram(&w, &spec),
            &data.x().column(0).into_owned(),
            data.y(),
            s1,
        );
        let block = Box::new(GpBlock::new(std::sync::Arc::new(
            SpectralFactor::new(data.w(), &spec).unwrap(),
        )));
        let draws = gibbs_beta_eta_with_block(&data, block, &cfg, &model).unwrap();
        worst.push((
            "(beta,eta) beta".into(),
            ks_against(
                &draws.beta_column(0),
                normal_cdf(mean[0], cov[(0, 0)].sqrt()),
            ),
        ));
        let eta1: Vec<f64> = draws.eta.as_ref().unwrap().iter().map(|e| e[0]).collect();
        worst.push((
            "(beta,eta) eta1".into(),
            ks_against(&eta1, normal_cdf(mean[1], cov[(1, 1)].sqrt())),
        ));

        // (beta, m1) given a fixed m2 in the (beta, m) sweep: same structure with s = x − m2.
        let m2 = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let s = data.x().column(0) - &m2;
        let (mean, cov) = joint_beta_f_posterior(&dense_gram(&w, &spec), &s, data.y(), s1);
        let m1 = Box::new(GpBlock::new(std::sync::Arc::new(
            SpectralFactor::new(data.w(), &spec).unwrap(),
        )));
        let draws =
            gibbs_beta_m_with_blocks(&data, m1, vec![Box::new(Fixed(m2))], &cfg, &model).unwrap();
        worst.push((
            "(beta,m) beta".into(),
            ks_against(
                &draws.beta_column(0),
                normal_cdf(mean[0], cov[(0, 0)].sqrt()),
            ),
        ));
        let m11: Vec<f64> = draws.m1.as_ref().unwrap().iter().map(|e| e[0]).collect();
        worst.push((
            "(beta,m) m1_1".into(),
            ks_against(&m11, normal_cdf(mean[1], cov[(1, 1)].sqrt())),
        ));
    }

    let (label, d) =
        worst
            .iter()
            .cloned()
            .fold(("".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    outcome(
        d <= crit,
        format!(
            "{} blocks, worst KS {d:.5} ({label}) vs critical {crit:.5}",
            worst.len()
        ),
    )
}

/// Posterior of `(β, f)` for `y = sβ + f + e`, `f ~ N(0, K)`, `e ~ N(0, s1 I)`,
/// flat on β, from the dense joint precision.
fn joint_beta_f_posterior(
    k: &DMatrix<f64>,
    s: &DVector<f64>,
    y: &DVector<f64>,
    s1: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = y.len();
    let mut prec = DMatrix::zeros(n + 1, n + 1);
    prec[(0, 0)] = s.dot(s) / s1;
    let kinv = k.clone().try_inverse().unwrap();
    for i in 0..n {
        prec[(0, i + 1)] = s[i] / s1;
        prec[(i + 1, 0)] = s[i] / s1;
        for j in 0..n {
            prec[(i + 1, j + 1)] = kinv[(i, j)] + if i == j { 1.0 / s1 } else { 0.0 };
        }
    }
    let mut lin = DVector::zeros(n + 1);
    lin[0] = s.dot(y) / s1;
    for i in 0..n {
        lin[i + 1] = y[i] / s1;
    }
    let cov = prec.try_inverse().unwrap();
    (&cov * lin, cov)
}

/// Chain on an n = 4 instance with three admissible values per nuisance
/// point, against the exhaustively enumerated posterior of β.
fn c2_brute_force() -> Outcome {
    let w = DMatrix::from_column_slice(4, 1, &[0.1, 0.4, 0.6, 0.9]);
    let x = DMatrix::from_column_slice(4, 1, &[0.8, -0.6, 0.3, 1.1]);
    let y = DVector::from_vec(vec![0.9, -0.2, 0.6, 1.0]);
    let data = Dataset::new(y.clone(), x.clone(), w).unwrap();
    let (s1, s2, bound) = (0.5, 1.0, 3.0);
    let model = ModelConfig {
        sigma01_sq: s1,
        sigma02_sq: s2,
        beta_bound: bound,
        ..ModelConfig::default()
    };
    let g1: Vec<Vec<f64>> = vec![vec![-0.3, 0.0, 0.3]; 4];
    let g2: Vec<Vec<f64>> = vec![vec![-0.4, 0.0, 0.4]; 4];

    // enumeration
    let xi = 1.0 / s1;
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut comps: Vec<(f64, f64, f64)> = Vec::new(); // (log weight, mean, sd)
    for a in 0..81usize {
        for b in 0..81usize {
            let (mut ia, mut ib) = (a, b);
            let mut ss = 0.0;
            let mut sr = 0.0;
            let mut rr = 0.0;
            let mut xpart = 0.0;
            for i in 0..4 {
                let m1 = g1[i][ia % 3];
                let m2 = g2[i][ib % 3];
                ia /= 3;
                ib /= 3;
                let s = x[(i, 0)] - m2;
                let r = y[i] - m1;
                ss += s * s;
                sr += s * r;
                rr += r * r;
                xpart += s * s / (2.0 * s2);
            }
            let mean = sr / ss;
            let sd = (1.0 / (xi * ss)).sqrt();
            let mass = std.cdf((bound - mean) / sd) - std.cdf((-bound - mean) / sd);
            let logw = -xpart - 0.5 * xi * (rr - sr * sr / ss)
                + (2.0 * std::f64::consts::PI / (xi * ss)).sqrt().ln()
                + mass.ln();
            comps.push((logw, mean, sd));
        }
    }
    let max = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = comps.iter().map(|c| (c.0 - max).exp()).sum();
    let mix_cdf = |v: f64| -> f64 {
        comps
            .iter()
            .map(|&(lw, m, sd)| {
                let lo = std.cdf((-bound - m) / sd);
                let hi = std.cdf((bound - m) / sd);
                let c = std.cdf((v.clamp(-bound, bound) - m) / sd);
                (lw - max).exp() / z * (c - lo) / (hi - lo)
            })
            .sum()
    };
    let post_mean: f64 = comps
        .iter()
        .map(|&(lw, m, _)| (lw - max).exp() / z * m)
        .sum();
    let edges: Vec<f64> = (0..=24)
        .map(|j| post_mean - 2.0 + 4.0 * j as f64 / 24.0)
        .collect();
    let mut exact = vec![mix_cdf(edges[0])];
    for j in 1..edges.len() {
        exact.push(mix_cdf(edges[j]) - mix_cdf(edges[j - 1]));
    }
    exact.push(1.0 - mix_cdf(edges[edges.len() - 1]));

    let cfg = ChainConfig {
        n_iter: 301_000,
        burn_in: 1_000,
        seed: 202,
        ..ChainConfig::default()
    };
    let m1 = Box::new(GridBlock::uniform(g1).unwrap());
    let m2: Vec<Box<dyn FunctionBlock<f64>>> = vec![Box::new(GridBlock::uniform(g2).unwrap())];
    let draws = gibbs_beta_m_with_blocks(&data, m1, m2, &cfg, &model).unwrap();
    let beta = draws.beta_column(0);
    let mut counts = vec![0usize; exact.len()];
    for b in &beta {
        let j = edges.partition_point(|e| e <= b);
        counts[j] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&exact)
            .map(|(c, p)| (*c as f64 / beta.len() as f64 - p).abs())
            .sum::<f64>();
    outcome(
        tv <= 0.05,
        format!(
            "TV {tv:.4} over {} bins, {} draws (limit 0.05)",
            exact.len(),
            beta.len()
        ),
    )
}

struct BvmRun {
    ks: f64,
    median_gap: f64,
    eta_ks: f64,
}

fn bvm_run(cfg: &ExperimentConfig) -> BvmRun {
    let exp = cfg.experiment().unwrap();
    let data = simulate(&exp.dgp, &exp.truth).unwrap();
    let reference = oracle_reference(&data, &exp.truth, &exp.model).unwrap();
    let chain = ChainConfig {
        n_iter: 2300,
        burn_in: 300,
        ..exp.chain.clone()
    };
    let run = |id| {
        let draws =
            plr_bvm::samplers::run_chain(&cfg.sampler(id), &data, &chain, &exp.model).unwrap();
        assert_eq!(draws.n_draws(), 2000);
        bvm_distance(&draws, &reference).unwrap()
    };
    let m = run(SamplerId::BetaM);
    let e = run(SamplerId::BetaEta);
    let c = &m.coordinates[0];
    BvmRun {
        ks: m.ks,
        median_gap: (c.posterior_median - c.reference_center).abs() / c.reference_sd,
        eta_ks: e.ks,
    }
}

fn c3_c4(smooth: &BvmRun) -> (Outcome, Outcome) {
    (
        outcome(
            smooth.ks <= 0.08,
            format!(
                "KS {:.4} (limit 0.08); (beta,eta) sampler KS {:.4} for reference",
                smooth.ks, smooth.eta_ks
            ),
        ),
        outcome(
            smooth.median_gap <= 0.2,
            format!(
                "|median - center| / sd = {:.4} (limit 0.2)",
                smooth.median_gap
            ),
        ),
    )
}

fn c5_coverage() -> Outcome {
    let cfg = ExperimentConfig::smooth();
    let exp = cfg.experiment().unwrap();
    let rep = coverage_experiment(
        &exp,
        &CoverageSampler::Chain(cfg.sampler(SamplerId::BetaM)),
        200,
        0.9,
        cfg.study.master_seed,
    )
    .unwrap();
    outcome(
        rep.within((0.84, 0.96)),
        format!(
            "coverage {:.3} ± {:.3} over {} replications, {} failures (band [0.84, 0.96])",
            rep.empirical, rep.mc_se, rep.replications, rep.failures
        ),
    )
}

fn c6_misspecified() -> Outcome {
    let run = bvm_run(&ExperimentConfig::misspecified());
    outcome(
        run.ks <= 0.10,
        format!(
            "KS {:.4} with scaled-uniform errors and wavelet priors (limit 0.10)",
            run.ks
        ),
    )
}

fn c7_contraction() -> Outcome {
    let cfg = ExperimentConfig::smooth();
    let exp = cfg.experiment().unwrap();
    let rep = contraction_curve(
        &exp,
        &cfg.sampler(SamplerId::BetaM),
        &[100, 400, 1600],
        2,
        cfg.study.master_seed,
    )
    .unwrap();
    outcome(
        (-0.55..=-0.18).contains(&rep.slope),
        format!(
            "risk {:?}, slope {:.3} (range [-0.55, -0.18])",
            rep.risk
                .iter()
                .map(|r| format!("{r:.4}"))
                .collect::<Vec<_>>(),
            rep.slope
        ),
    )
}

/// `2 ∫₀^∞ cos(λh) (1 + λ²)^(−α−1/2) dλ` by panel Gauss–Legendre on
/// `[0, L]` plus the leading asymptotic terms of the tail.
fn spectral_quadrature(alpha: f64, h: f64) -> f64 {
    let p = alpha + 0.5;
    let f = |l: f64| (1.0 + l * l).powf(-p);
    let gl = GaussLegendre::new(20).unwrap();
    let upper = 10_000.0;
    let mut body = 0.0;
    let mut a = 0.0;
    while a < upper {
        let b = a + 1.0;
        body += gl.integrate(a, b, |l| (l * h).cos() * f(l));
        a = b;
    }
    let tail = if h == 0.0 {
        // (1+λ²)^(−p) = Σ_j C(−p, j) λ^(−2p−2j)
        let mut coef = 1.0;
        let mut acc = 0.0;
        for j in 0..4 {
            let e = 2.0 * p + 2.0 * j as f64 - 1.0;
            acc += coef * upper.powf(-e) / e;
            coef *= -(p + j as f64) / (j as f64 + 1.0);
        }
        acc
    } else {
        let df = -2.0 * p * upper * (1.0 + upper * upper).powf(-p - 1.0);
        -(upper * h).sin() * f(upper) / h - (upper * h).cos() * df / (h * h)
    };
    2.0 * (body + tail)
}

fn c8_matern_quadrature() -> Outcome {
    let mut rng = rng_from_seed(808);
    let exact_point = matern_kernel(&[0.0], &[0.0], &MaternSpec::with_alpha(0.5));
    let mut worst = ((exact_point - std::f64::consts::PI) / std::f64::consts::PI).abs();
    let mut at = (0.5, 0.0);
    for i in 0..100 {
        let alpha = rng.random_range(0.5..3.0);
        let h = if i % 10 == 0 {
            0.0
        } else {
            rng.random_range(0.05..3.0)
        };
        let spec = MaternSpec::with_alpha(alpha);
        let k = matern_kernel(&[0.2], &[0.2 + h], &spec);
        let q = spectral_quadrature(alpha, h);
        let rel = ((k - q) / q).abs();
        if rel > worst {
            worst = rel;
            at = (alpha, h);
        }
    }
    outcome(
        worst <= 1e-6,
        format!(
            "kappa(0) at alpha=1/2: {exact_point:.12}; worst relative error {worst:.2e} at alpha={:.3}, h={:.3} (limit 1e-6)",
            at.0, at.1
        ),
    )
}

/// Log-likelihood written out directly, independent of the crate.
fn loglik_oracle(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    m1: &DVector<f64>,
    m2: &DMatrix<f64>,
    beta: &[f64],
    xi: f64,
    s2: f64,
) -> f64 {
    let n = y.len();
    let dx = x.ncols();
    let mut acc = 0.0;
    for i in 0..n {
        let mut r = y[i] - m1[i];
        for k in 0..dx {
            let s = x[(i, k)] - m2[(i, k)];
            r -= s * beta[k];
            acc += -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - s * s / (2.0 * s2);
        }
        acc += -0.5 * (2.0 * std::f64::consts::PI / xi).ln() - 0.5 * xi * r * r;
    }
    acc
}

fn c9_finite_differences() -> Outcome {
    let mut rng = rng_from_seed(909);
    let (mut worst_score, mut worst_info) = (0.0f64, 0.0f64);
    for inst in 0..100 {
        let n = rng.random_range(2..7);
        let dx = rng.random_range(1..4);
        let known = inst % 2 == 0;
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let x = DMatrix::from_fn(n, dx, |_, _| rng.random_range(-2.0..2.0));
        let w = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let m1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let m2 = DMatrix::from_fn(n, dx, |_, _| rng.random_range(-1.0..1.0));
        let beta: Vec<f64> = (0..dx).map(|_| rng.random_range(-1.5..1.5)).collect();
        let config = ModelConfig {
            sigma01_sq: rng.random_range(0.5..2.0),
            sigma02_sq: rng.random_range(0.5..2.0),
            variance_known: known,
            ..ModelConfig::default()
        };
        let xi = if known {
            1.0 / config.sigma01_sq
        } else {
            rng.random_range(0.5..2.0)
        };
        let data = Dataset::new(y.clone(), x.clone(), w).unwrap();
        let m = NuisanceValues::new(m1.clone(), m2.clone()).unwrap();
        let theta = ThetaState::new(DVector::from_vec(beta.clone()), xi);
        let dim = if known { dx } else { dx + 1 };
        let ll = |t: &[f64]| {
            let xi_t = if known { xi } else { t[dx] };
            loglik_oracle(&y, &x, &m1, &m2, &t[..dx], xi_t, config.sigma02_sq)
        };
        let mut t0 = beta.clone();
        if !known {
            t0.push(xi);
        }
        let sc = score(&data, &theta, &m, &config).unwrap();
        let h1 = 1e-6;
        let mut err = 0.0f64;
        for j in 0..dim {
            let (mut tp, mut tm) = (t0.clone(), t0.clone());
            tp[j] += h1;
            tm[j] -= h1;
            let fd = (ll(&tp) - ll(&tm)) / (2.0 * h1);
            err = err.max((fd - sc[j]).abs());
        }
        worst_score = worst_score.max(err / sc.amax().max(1.0));

        let info = information(&data, &theta, &m, &config).unwrap();
        let h2 = 1e-4;
        let mut err = 0.0f64;
        for j in 0..dim {
            for k in 0..dim {
                let at = |dj: f64, dk: f64| {
                    let mut t = t0.clone();
                    t[j] += dj;
                    t[k] += dk;
                    ll(&t)
                };
                let hess =
                    (at(h2, h2) - at(h2, -h2) - at(-h2, h2) + at(-h2, -h2)) / (4.0 * h2 * h2);
                err = err.max((-hess / n as f64 - info[(j, k)]).abs());
            }
        }
        worst_info = worst_info.max(err / info.amax().max(1.0));
    }
    outcome(
        worst_score <= 1e-5 && worst_info <= 1e-4,
        format!("worst relative error: score {worst_score:.2e} (limit 1e-5), information {worst_info:.2e} (limit 1e-4), both variance modes"),
    )
}

fn c10_identification() -> Outcome {
    let mut rng = rng_from_seed(1010);
    let mut failures = 0;
    for _ in 0..20 {
        let g = 3;
        let weights: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..1.0)).collect();
        let beta0 = rng.random_range(-1.0..1.0);
        let m01 = DVector::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
        let m02 = DMatrix::from_fn(g, 1, |_, _| rng.random_range(-1.0..1.0));
        let config = ModelConfig {
            sigma01_sq: rng.random_range(0.3..2.0),
            sigma02_sq: rng.random_range(0.3..2.0),
            ..ModelConfig::default()
        };
        let m0 = NuisanceValues::new(m01.clone(), m02.clone()).unwrap();
        let pop =
            Population::gaussian_model(&weights, &m0, &DVector::from_element(1, beta0), &config)
                .unwrap();
        let step = 0.25;
        let betas: Vec<f64> = (-2..=2).map(|j| beta0 + step * j as f64).collect();
        let offsets = [-step, 0.0, step];
        let mut joint_best = (f64::INFINITY, 0.0, usize::MAX);
        let mut m_argmins = Vec::new();
        for &b in &betas {
            let bv = DVector::from_element(1, b);
            let mut best = (f64::INFINITY, usize::MAX);
            for code in 0..729usize {
                let mut c = code;
                let mut m1 = m01.clone();
                let mut m2 = m02.clone();
                for i in 0..g {
                    m1[i] += offsets[c % 3];
                    c /= 3;
                }
                for i in 0..g {
                    m2[(i, 0)] += offsets[c % 3];
                    c /= 3;
                }
                let v = kl_objective(&pop, &bv, &NuisanceValues::new(m1, m2).unwrap(), &config)
                    .unwrap();
                if v < best.0 {
                    best = (v, code);
                }
            }
            m_argmins.push(best.1);
            if best.0 < joint_best.0 {
                joint_best = (best.0, b, best.1);
            }
        }
        // code 364 = all offsets zero (index 1 in base 3 for all six digits)
        let truth_code = (0..6).fold(0, |acc, _| acc * 3 + 1);
        let ok = m_argmins.iter().all(|c| *c == truth_code)
            && joint_best.1 == beta0
            && joint_best.2 == truth_code;
        if !ok {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!(
            "{} of 20 populations recover (beta0, m0) with a beta-free m-argmin",
            20 - failures
        ),
    )
}

fn c11_parametrizations() -> Outcome {
    let regimes = [
        ExperimentConfig::smooth().regime().unwrap(),
        ExperimentConfig::rough_m02().regime().unwrap(),
    ];
    let rep = compare_parametrizations(
        &regimes,
        200,
        0.9,
        ExperimentConfig::smooth().study.master_seed,
    )
    .unwrap();
    let rows: Vec<String> = rep
        .rows
        .iter()
        .map(|r| {
            format!(
                "{}/{}={:.3}{}",
                r.regime,
                r.sampler,
                r.coverage,
                if r.gated { "*" } else { "" }
            )
        })
        .collect();
    let gated = rep.row("rough-m02", "beta-m").unwrap();
    let pass =
        rep.rows.len() == 4 && gated.failures == 0 && (0.84..=0.96).contains(&gated.coverage);
    outcome(
        pass,
        format!(
            "{} (* = conditions hold); gate: rough-m02/beta-m in [0.84, 0.96]",
            rows.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |c: u32| selected.is_empty() || selected.contains(&c);
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |c: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !want(c) {
            return;
        }
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        println!(
            "criterion {c:>2} [{name}] {}: {} ({secs:.1}s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        results.push((c, name, out, secs));
    };
    run(1, "block-oracles", &mut c1_block_oracles);
    run(2, "brute-force-posterior", &mut c2_brute_force);
    let mut smooth: Option<BvmRun> = None;
    run(3, "bvm-proximity", &mut || {
        c3_c4(smooth.get_or_insert_with(|| bvm_run(&ExperimentConfig::smooth()))).0
    });
    run(4, "quantile-expansion", &mut || {
        c3_c4(smooth.get_or_insert_with(|| bvm_run(&ExperimentConfig::smooth()))).1
    });
    run(5, "coverage", &mut c5_coverage);
    run(6, "misspecification", &mut c6_misspecified);
    run(7, "contraction-slope", &mut c7_contraction);
    run(8, "matern-quadrature", &mut c8_matern_quadrature);
    run(9, "score-information", &mut c9_finite_differences);
    run(10, "kl-identification", &mut c10_identification);
    run(11, "parametrization-contrast", &mut c11_parametrizations);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
