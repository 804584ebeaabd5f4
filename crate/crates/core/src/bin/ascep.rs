//! `ascep` command-line harness.
//!
//! Exit codes: 0 success (fits may still be flagged), 2 usage, 3 data or
//! configuration error, 4 internal failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ascep::aep::JackknifeMode;
use ascep::estimate::{fit_study, FitOptions, FitResult, Method, SeMode};
use ascep::experiment::{self, ExperimentSpec, WORKERS_ENV};
use ascep::io;
use ascep::simgen::{simulate_study, SimConfig};
use ascep::Error;

#[derive(Parser)]
#[command(name = "ascep", version, about = "Variance components for case-control probit GLMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Aep,
    AplExact,
    AplTaylor,
    Pcgc,
    EpPlain,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Aep => Method::Aep,
            MethodArg::AplExact => Method::AplExact,
            MethodArg::AplTaylor => Method::AplTaylor,
            MethodArg::Pcgc => Method::Pcgc,
            MethodArg::EpPlain => Method::EpPlain,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SeArg {
    Jackknife,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum JackknifeArg {
    FrozenSites,
    FullRefit,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one case-control study and write it to --out.
    Simulate {
        /// JSON simulation config; omitted fields take desk-scale defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit one study directory.
    Fit {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Population prevalence; defaults to the value in meta.json.
        #[arg(long)]
        prevalence: Option<f64>,
        #[arg(long, value_enum, default_value = "none")]
        se: SeArg,
        #[arg(long, value_enum, default_value = "frozen-sites")]
        jackknife_mode: JackknifeArg,
        /// Directory for fit.json and fit.csv (defaults to the dataset directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replication experiment described by a JSON spec.
    Experiment {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (also read from the environment).
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Config(_)
        | Error::Domain(_)
        | Error::Dimension(_)
        | Error::DegenerateColumn { .. }
        | Error::Shortfall { .. }
        | Error::RankDeficient
        | Error::DegenerateRegressor(_) => 3,
        _ => 4,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

const FIT_HEADER: &str = "method,theta_hat,se,objective,sigma_c2,converged,at_boundary,evals,K,P,seconds";

fn fit_csv(r: &FitResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{:.4}",
        r.method,
        r.theta_hat,
        r.se.map_or(String::new(), |v| v.to_string()),
        r.objective,
        r.sigma_c2,
        r.converged,
        r.at_boundary,
        r.evals,
        r.k,
        r.p,
        r.seconds
    )
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg: SimConfig = match config {
                Some(p) => read_json(&p)?,
                None => SimConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let study = simulate_study(&cfg)?;
            io::write_study(&out, &cfg, &study)?;
            println!(
                "wrote {} units ({} cases), m = {}, to {}",
                study.dataset.n(),
                study.dataset.n_cases(),
                study.dataset.m(),
                out.display()
            );
        }
        Command::Fit {
            dataset,
            method,
            prevalence,
            se,
            jackknife_mode,
            out,
        } => {
            let ds = io::read_dataset(&dataset)?;
            let k = match prevalence {
                Some(k) => k,
                None => io::read_metadata(&dataset)?
                    .map(|m| m.config.k)
                    .ok_or_else(|| Error::Config("--prevalence is required without meta.json".into()))?,
            };
            let mut opts = FitOptions::new(method.into(), k);
            opts.se = match se {
                SeArg::Jackknife => SeMode::Jackknife,
                SeArg::None => SeMode::None,
            };
            opts.jackknife = match jackknife_mode {
                JackknifeArg::FrozenSites => JackknifeMode::FrozenSites,
                JackknifeArg::FullRefit => JackknifeMode::FullRefit,
            };
            let result = fit_study(&ds, None, &opts)?;
            let out = out.unwrap_or(dataset);
            fs::create_dir_all(&out)?;
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "library_version": env!("CARGO_PKG_VERSION"),
                "options": &opts,
                "result": &result,
            }))?;
            fs::write(out.join("fit.json"), &json)?;
            fs::write(out.join("fit.csv"), format!("{FIT_HEADER}\n{}\n", fit_csv(&result)))?;
            println!("{FIT_HEADER}\n{}", fit_csv(&result));
            if !result.converged || result.at_boundary {
                eprintln!(
                    "warning: fit flagged (converged = {}, at_boundary = {})",
                    result.converged, result.at_boundary
                );
            }
        }
        Command::Experiment { spec, out, workers } => {
            let text = fs::read_to_string(&spec)?;
            let mut spec = ExperimentSpec::from_json(&text)?;
            if workers.is_some() {
                spec.workers = workers;
            }
            fs::create_dir_all(&out)?;
            let rows = experiment::run_experiment(&spec)?;
            let summary = experiment::summarize(&rows);
            experiment::write_results_csv(&out.join("results.csv"), &rows)?;
            experiment::write_summary_csv(&out.join("summary.csv"), &summary)?;
            let meta = serde_json::json!({
                "library_version": env!("CARGO_PKG_VERSION"),
                "spec": &spec,
                "workers": experiment::worker_count(spec.workers),
                "defaults": { "fit": FitOptions::new(Method::Aep, spec.base.k) },
            });
            fs::write(out.join("experiment.json"), serde_json::to_string_pretty(&meta)?)?;
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            println!("{} rows ({failed} failed) written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(4),
    }
}
