//! `plr-bvm`: simulate, fit and run the Monte Carlo checks from the command line.
//!
//! Exit status is 0 on success, 2 for invalid invocations or configurations
//! and 1 for runtime failures.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use plr_bvm::dgp::{
    read_dataset_csv, simulate, validate_assumptions, write_dataset_csv, DEFAULT_EIGEN_BOUNDS,
};
use plr_bvm::diagnostics::{
    bvm_distance, compare_parametrizations, contraction_curve, coverage_experiment,
    empirical_process_check, CoverageSampler,
};
use plr_bvm::frequentist::{feasible_robinson, oracle_reference, Smoother};
use plr_bvm::samplers::{run_chain, SamplerId};
use plr_bvm::{DatasetF64, ExperimentConfig};

use crate::config::{usage, UsageError};

#[derive(Parser)]
#[command(
    name = "plr-bvm",
    version,
    about = "Bayesian partially linear model experiments"
)]
struct Cli {
    /// Experiment configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled configuration: smooth, rough-m02 or misspecified.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override a configuration field, e.g. `--set chain.n_iter=4000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Sets the data, chain and study seeds at once.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "PLR_BVM_THREADS")]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampler {
    BetaM,
    BetaEta,
}

impl From<Sampler> for SamplerId {
    fn from(s: Sampler) -> Self {
        match s {
            Sampler::BetaM => SamplerId::BetaM,
            Sampler::BetaEta => SamplerId::BetaEta,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and print it with its hash.
    Validate {
        /// Print the resolved configuration as TOML instead of JSON.
        #[arg(long)]
        toml: bool,
    },
    /// Draw a dataset and write it as CSV.
    Simulate,
    /// Run one chain on a dataset (simulated from the configuration when
    /// `--data` is absent).
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Map each control column onto [0, 1] instead of rejecting values outside it.
        #[arg(long)]
        rescale_controls: bool,
        #[arg(long, value_enum, default_value = "beta-m")]
        sampler: Sampler,
    },
    /// Compare one posterior with its Gaussian limit at the truth.
    VerifyBvm {
        #[arg(long, value_enum, default_value = "beta-m")]
        sampler: Sampler,
    },
    /// Frequentist coverage of equitailed credible intervals.
    Coverage {
        #[arg(long, value_enum, default_value = "beta-m")]
        sampler: Sampler,
        /// Use independent draws from the Gaussian limit instead of a chain.
        #[arg(long)]
        oracle: bool,
    },
    /// Nuisance risk over `study.n_grid` and its log-log slope.
    Contraction {
        #[arg(long, value_enum, default_value = "beta-m")]
        sampler: Sampler,
    },
    /// Coverage of both samplers in several regimes.
    CompareParametrizations {
        /// Preset names or configuration files.
        #[arg(long, value_delimiter = ',', default_value = "smooth,rough-m02")]
        regimes: Vec<String>,
    },
}

struct Session {
    cfg: ExperimentConfig,
    hash: String,
    out_dir: PathBuf,
}

impl Session {
    fn path(&self, stem: &str, ext: &str) -> PathBuf {
        self.out_dir.join(format!("{stem}-{}.{ext}", self.hash))
    }

    fn write_json<S: Serialize>(&self, stem: &str, value: &S) -> anyhow::Result<PathBuf> {
        let path = self.path(stem, "json");
        let mut f = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(path)
    }

    fn create(&self, stem: &str, ext: &str) -> anyhow::Result<(PathBuf, BufWriter<File>)> {
        let path = self.path(stem, ext);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(f)))
    }
}

fn print_json<S: Serialize>(value: &S) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn build(cli: &Cli) -> anyhow::Result<Session> {
    let mut doc = config::load(cli.config.as_deref(), cli.preset.as_deref())?;
    for o in &cli.overrides {
        config::apply_override(&mut doc, o)?;
    }
    if let Some(seed) = cli.seed {
        for key in ["dgp.seed", "chain.seed", "study.master_seed"] {
            config::apply_override(&mut doc, &format!("{key}={seed}"))?;
        }
    }
    let cfg = config::resolve(doc)?;
    let hash = cfg.hash()?;
    std::fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    Ok(Session {
        cfg,
        hash,
        out_dir: cli.out_dir.clone(),
    })
}

fn load_regime(spec: &str) -> anyhow::Result<ExperimentConfig> {
    match ExperimentConfig::preset(spec) {
        Some(cfg) => Ok(cfg),
        None if Path::new(spec).exists() => config::resolve(config::load_file(Path::new(spec))?),
        None => Err(usage(format!(
            "regime '{spec}' is neither a preset nor a file"
        ))),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    let ctx = build(&cli)?;
    let cfg = &ctx.cfg;
    match cli.command {
        Command::Validate { toml } => {
            if toml {
                print!("{}", toml::to_string_pretty(cfg)?);
            } else {
                print_json(&json!({ "config_hash": ctx.hash, "config": cfg }))?;
            }
        }
        Command::Simulate => {
            let exp = cfg.experiment()?;
            let data: DatasetF64 = simulate(&exp.dgp, &exp.truth)?;
            let (path, f) = ctx.create("data", "csv")?;
            write_dataset_csv(&data, f)?;
            let report = validate_assumptions(&data, Some(&exp.truth), DEFAULT_EIGEN_BOUNDS);
            print_json(&json!({ "data": path, "n": data.n(), "assumptions": report }))?;
        }
        Command::Fit {
            data,
            rescale_controls,
            sampler,
        } => {
            let exp = cfg.experiment()?;
            let data: DatasetF64 = match data {
                Some(p) => {
                    let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                    read_dataset_csv(f, rescale_controls)
                        .map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => simulate(&exp.dgp, &exp.truth)?,
            };
            let draws = run_chain(&cfg.sampler(sampler.into()), &data, &exp.chain, &exp.model)?;
            let (draws_path, f) = ctx.create("draws", "csv")?;
            draws.write_csv(f)?;
            let (meta_path, f) = ctx.create("draws", "json")?;
            draws.write_sidecar(&ctx.hash, f)?;
            let level = cfg.study.level;
            let beta: Vec<_> = (0..draws.dx())
                .map(|k| {
                    let col = draws.beta_column(k);
                    let mean = col.iter().sum::<f64>() / col.len() as f64;
                    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
                    let (lo, hi) = draws.credible_interval(k, level);
                    json!({ "mean": mean, "sd": sd, "median": draws.beta_quantile(k, 0.5), "interval": [lo, hi] })
                })
                .collect();
            let feasible = feasible_robinson(&data, &Smoother::default_for(data.n())).ok();
            print_json(&json!({
                "config_hash": ctx.hash,
                "draws": draws_path,
                "meta": meta_path,
                "level": level,
                "beta": beta,
                "split_rhat": draws.meta.split_rhat,
                "ess": draws.meta.ess,
                "acceptance": draws.meta.acceptance,
                "feasible_robinson": feasible,
            }))?;
        }
        Command::VerifyBvm { sampler } => {
            let exp = cfg.experiment()?;
            let data: DatasetF64 = simulate(&exp.dgp, &exp.truth)?;
            let reference = oracle_reference(&data, &exp.truth, &exp.model)?;
            let mut chain = exp.chain.clone();
            chain.keep_nuisance = true;
            let draws = run_chain(&cfg.sampler(sampler.into()), &data, &chain, &exp.model)?;
            let bvm =
                bvm_distance(&draws, &reference)?.with_provenance(chain.seed, ctx.hash.clone());
            let processes = empirical_process_check(&draws, &data, &exp.truth).ok();
            let doc = json!({ "bvm": bvm, "empirical_process": processes, "reference": reference });
            let path = ctx.write_json("bvm", &doc)?;
            print_json(
                &json!({ "report": path, "ks": bvm.ks, "wasserstein1": bvm.wasserstein1, "quantile_gaps": bvm.quantile_gaps }),
            )?;
        }
        Command::Coverage { sampler, oracle } => {
            let exp = cfg.experiment()?;
            let cs = if oracle {
                CoverageSampler::OracleReference {
                    draws: exp.chain.retained(),
                }
            } else {
                CoverageSampler::Chain(cfg.sampler(sampler.into()))
            };
            let mut rep = coverage_experiment(
                &exp,
                &cs,
                cfg.study.replications,
                cfg.study.level,
                cfg.study.master_seed,
            )?;
            rep.config_hash = ctx.hash.clone();
            let json_path = ctx.write_json("coverage", &rep)?;
            let (csv_path, f) = ctx.create("coverage", "csv")?;
            rep.write_csv(f)?;
            print_json(&json!({
                "report": json_path,
                "records": csv_path,
                "sampler": rep.sampler,
                "empirical": rep.empirical,
                "mc_se": rep.mc_se,
                "failures": rep.failures,
            }))?;
        }
        Command::Contraction { sampler } => {
            let exp = cfg.experiment()?;
            let mut rep = contraction_curve(
                &exp,
                &cfg.sampler(sampler.into()),
                &cfg.study.n_grid,
                cfg.study.contraction_replications,
                cfg.study.master_seed,
            )?;
            rep.config_hash = ctx.hash.clone();
            let json_path = ctx.write_json("contraction", &rep)?;
            let (csv_path, f) = ctx.create("contraction", "csv")?;
            rep.write_csv(f)?;
            print_json(
                &json!({ "report": json_path, "curve": csv_path, "risk": rep.risk, "slope": rep.slope }),
            )?;
        }
        Command::CompareParametrizations { regimes } => {
            let regimes = regimes
                .iter()
                .map(|r| load_regime(r)?.regime().map_err(|e| usage(e.to_string())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let mut rep = compare_parametrizations(
                &regimes,
                cfg.study.replications,
                cfg.study.level,
                cfg.study.master_seed,
            )?;
            rep.config_hash = ctx.hash.clone();
            let json_path = ctx.write_json("comparison", &rep)?;
            let (csv_path, f) = ctx.create("comparison", "csv")?;
            rep.write_csv(f)?;
            print_json(
                &json!({ "report": json_path, "table": csv_path, "gate_passed": rep.gate_passed }),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.is::<UsageError>()
                || matches!(
                    e.downcast_ref::<plr_bvm::Error>(),
                    Some(
                        plr_bvm::Error::InvalidConfig(_)
                            | plr_bvm::Error::InvalidData(_)
                            | plr_bvm::Error::TooFewDraws { .. }
                    )
                );
            ExitCode::from(if invalid { 2 } else { 1 })
        }
    }
}
