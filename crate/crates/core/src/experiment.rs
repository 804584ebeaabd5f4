//! Replication experiments over a grid of simulation settings.
//!
//! Replication `r` of every grid cell uses the seed `derive_seed(master, r)`,
//! so cells are compared on common random numbers and any row can be replayed
//! from the spec alone.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_study, FitOptions, Method, SeMode};
use crate::model::grm;
use crate::simgen::{derive_seed, simulate_study, SimConfig};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "ASCEP_WORKERS";

/// Sweep axes; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub theta_true: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub noise_e: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: SimConfig,
    #[serde(default)]
    pub sweep: Sweep,
    pub methods: Vec<Method>,
    pub reps: usize,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub se: SeMode,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_master_seed() -> u64 {
    20_240_601
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods listed".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// Grid cells in a fixed order (θ, K, n, m, e varying slowest to fastest).
    pub fn cells(&self) -> Vec<SimConfig> {
        fn axis<T: Copy>(v: &[T], base: T) -> Vec<T> {
            if v.is_empty() {
                vec![base]
            } else {
                v.to_vec()
            }
        }
        let b = &self.base;
        let mut out = Vec::new();
        for &th in &axis(&self.sweep.theta_true, b.sigma_g2) {
            for &k in &axis(&self.sweep.k, b.k) {
                for &n in &axis(&self.sweep.n, b.n_study) {
                    for &m in &axis(&self.sweep.m, b.m) {
                        for &e in &axis(&self.sweep.noise_e, b.noise_e) {
                            out.push(SimConfig {
                                sigma_g2: th,
                                k,
                                n_study: n,
                                m,
                                noise_e: e,
                                ..b.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One replication × method outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub n: usize,
    pub m: usize,
    pub e: f64,
    pub theta_true: f64,
    pub theta_hat: f64,
    pub se: f64,
    pub converged: bool,
    pub seconds: f64,
    pub error: String,
}

pub const RESULT_HEADER: &str = "cell,rep,seed,method,K,P,n,m,e,theta_true,theta_hat,se,converged,seconds,error";

impl ResultRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.4},{}",
            self.cell,
            self.rep,
            self.seed,
            self.method,
            self.k,
            self.p,
            self.n,
            self.m,
            self.e,
            self.theta_true,
            self.theta_hat,
            self.se,
            self.converged,
            self.seconds,
            self.error.replace([',', '\n'], ";")
        )
    }
}

/// Per cell and method aggregates over successful replications.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub cell: usize,
    pub method: Method,
    #[serde(rename = "K")]
    pub k: f64,
    pub n: usize,
    pub m: usize,
    pub e: f64,
    pub theta_true: f64,
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    pub sd: f64,
    /// `mean − theta_true`.
    pub bias: f64,
    /// Mean of `|θ̂ − θ|` over replications.
    pub mean_abs_error: f64,
    pub mean_se: f64,
}

pub const SUMMARY_HEADER: &str = "cell,method,K,n,m,e,theta_true,count,failures,mean,sd,bias,mean_abs_error,mean_se";

impl SummaryRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cell,
            self.method,
            self.k,
            self.n,
            self.m,
            self.e,
            self.theta_true,
            self.count,
            self.failures,
            self.mean,
            self.sd,
            self.bias,
            self.mean_abs_error,
            self.mean_se
        )
    }
}

fn rep_rows(spec: &ExperimentSpec, cell_idx: usize, cfg: &SimConfig, rep: usize) -> Vec<ResultRow> {
    let seed = derive_seed(spec.master_seed, rep as u64);
    let cfg = SimConfig { seed, ..cfg.clone() };
    let row = |method: Method, p: f64| ResultRow {
        cell: cell_idx,
        rep,
        seed,
        method,
        k: cfg.k,
        p,
        n: cfg.n_study,
        m: cfg.m,
        e: cfg.noise_e,
        theta_true: cfg.sigma_g2,
        theta_hat: f64::NAN,
        se: f64::NAN,
        converged: false,
        seconds: 0.0,
        error: String::new(),
    };
    let study = match simulate_study(&cfg) {
        Ok(s) => s,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|&m| ResultRow {
                    error: format!("simulation: {e}"),
                    ..row(m, cfg.balance)
                })
                .collect()
        }
    };
    let kernel = grm(study.dataset.z());
    spec.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let mut opts = FitOptions::new(method, cfg.k);
            opts.se = spec.se;
            let base = row(method, study.dataset.case_fraction());
            match fit_study(&study.dataset, Some(&kernel), &opts) {
                Ok(fit) => ResultRow {
                    theta_hat: fit.theta_hat,
                    se: fit.se.unwrap_or(f64::NAN),
                    converged: fit.converged,
                    seconds: fit.seconds,
                    ..base
                },
                Err(e) => ResultRow {
                    error: e.to_string(),
                    seconds: start.elapsed().as_secs_f64(),
                    ..base
                },
            }
        })
        .collect()
}

/// Worker count: explicit setting, then the environment, then all cores.
pub fn worker_count(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every cell and replication; failed fits are recorded, not fatal.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let cells = spec.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.reps).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(spec.workers))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let rows: Vec<Vec<ResultRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                let out = rep_rows(spec, c, &cells[c], r);
                log::info!("cell {c} rep {r} done");
                out
            })
            .collect()
    });
    Ok(rows.into_iter().flatten().collect())
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let mi = Method::ALL.iter().position(|&m| m == r.method).unwrap_or(0);
        groups.entry((r.cell, mi)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let ok: Vec<&ResultRow> = g.iter().copied().filter(|r| r.theta_hat.is_finite()).collect();
            let count = ok.len();
            let mean_of = |f: &dyn Fn(&ResultRow) -> f64| -> f64 {
                let vals: Vec<f64> = ok.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
            let mean = mean_of(&|r| r.theta_hat);
            let sd = if count > 1 {
                (ok.iter().map(|r| (r.theta_hat - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
            } else {
                f64::NAN
            };
            SummaryRow {
                cell: first.cell,
                method: first.method,
                k: first.k,
                n: first.n,
                m: first.m,
                e: first.e,
                theta_true: first.theta_true,
                count,
                failures: g.len() - count,
                mean,
                sd,
                bias: mean - first.theta_true,
                mean_abs_error: mean_of(&|r| (r.theta_hat - r.theta_true).abs()),
                mean_se: mean_of(&|r| r.se),
            }
        })
        .collect()
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    w.flush()?;
    Ok(())
}
