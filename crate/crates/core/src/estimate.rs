//! End-to-end estimation: fixed effects, liability cutoffs, θ search and
//! standard errors for one study.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::aep::{self, AEPJackknifePlan, JackknifeMode};
use crate::agee::{self, AgeeOptions, InterceptMode};
use crate::apl::{self, AplMode, PairTermCache};
use crate::ep::{self, EpOptions, EpState, SiteParams};
use crate::error::{Error, Result};
use crate::model::{grm, AscertainmentScheme, Dataset, Kernel, ModelParams};
use crate::optimize;
use crate::pcgc;

/// Lower end of the θ search interval.
pub const THETA_MIN: f64 = 1e-4;
/// Residual liability variance kept at the upper end of the θ interval.
pub const THETA_MARGIN: f64 = 1e-3;
/// Relative change in β below which the second fixed-effect pass is skipped.
pub const BETA_REPASS_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Aep,
    AplExact,
    AplTaylor,
    Pcgc,
    EpPlain,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Aep,
        Method::AplExact,
        Method::AplTaylor,
        Method::Pcgc,
        Method::EpPlain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aep => "aep",
            Method::AplExact => "apl-exact",
            Method::AplTaylor => "apl-taylor",
            Method::Pcgc => "pcgc",
            Method::EpPlain => "ep-plain",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SeMode {
    Jackknife,
    #[default]
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOptions {
    pub method: Method,
    /// Population prevalence.
    pub k: f64,
    pub se: SeMode,
    pub jackknife: JackknifeMode,
    pub ep: EpOptions,
    pub tol: f64,
    pub intercept: InterceptMode,
}

impl FitOptions {
    pub fn new(method: Method, k: f64) -> Self {
        Self {
            method,
            k,
            se: SeMode::None,
            jackknife: JackknifeMode::FrozenSites,
            ep: EpOptions::default(),
            tol: 1e-4,
            intercept: InterceptMode::Free,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub method: Method,
    pub theta_hat: f64,
    /// Liability-scale fixed effects used for the cutoffs.
    pub beta: Vec<f64>,
    pub sigma_c2: f64,
    pub objective: f64,
    pub se: Option<f64>,
    pub loo_thetas: Option<Vec<f64>>,
    /// All inner solvers converged at the estimate.
    pub converged: bool,
    pub at_boundary: bool,
    pub evals: usize,
    pub ep_sweeps: usize,
    pub ep_skipped: usize,
    pub ep_clamped_sites: usize,
    pub agee_iterations: usize,
    pub agee_converged: bool,
    /// Fixed-effect passes performed (0 without covariates).
    pub fixed_effect_passes: usize,
    pub taylor_flagged: usize,
    /// Latent variance is not constant across units.
    pub diag_cv_warning: bool,
    pub jackknife_fallbacks: usize,
    pub k: f64,
    pub p: f64,
    pub s0: f64,
    pub s1: f64,
    pub seconds: f64,
}

/// Liability-scale fixed effects from marginal-probit slopes `gamma` at θ.
///
/// With `s² = θḠ + σ_ε²` the marginal slopes are `β/s`; since
/// `σ_c² = s²·var(Xγ)` and `θ + σ_c² + σ_ε² = 1`, `s² = (1 − θ(1−Ḡ))/(1 + var(Xγ))`.
/// `var(Xγ)` is weighted by inverse sampling probabilities so it refers to the
/// population.
pub fn liability_fixed_effects(
    gamma: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    y: &[u8],
    scheme: &AscertainmentScheme,
    theta: f64,
    mean_diag: f64,
) -> Result<(Array1<f64>, f64)> {
    let xg = x.dot(&gamma);
    let w: Vec<f64> = y.iter().map(|&v| 1.0 / scheme.weight(v)).collect();
    let wsum: f64 = w.iter().sum();
    let mean = xg.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let var = xg.iter().zip(&w).map(|(a, b)| b * (a - mean) * (a - mean)).sum::<f64>() / wsum;
    let s2 = (1.0 - theta * (1.0 - mean_diag)) / (1.0 + var);
    let sigma_eps2 = s2 - theta * mean_diag;
    if !(sigma_eps2 > 0.0) {
        return Err(Error::Domain(format!(
            "θ = {theta} leaves no residual variance after fixed effects"
        )));
    }
    let var_g = theta * mean_diag / sigma_eps2;
    let beta = agee::rescale_to_glmm(gamma, var_g) * sigma_eps2.sqrt();
    Ok((beta, s2 * var))
}

fn scheme_for(k: f64, p: f64) -> Result<AscertainmentScheme> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Domain(format!("prevalence {k} must lie in (0, 1)")));
    }
    if k == p {
        Ok(AscertainmentScheme::unascertained(k))
    } else {
        AscertainmentScheme::new(k, p)
    }
}

struct ThetaFit {
    theta: f64,
    objective: f64,
    evals: usize,
    at_boundary: bool,
    converged: bool,
    ep: Option<EpState>,
    taylor_flagged: usize,
    pcgc: Option<pcgc::PcgcFit>,
}

fn theta_bounds(sigma_c2: f64) -> Result<(f64, f64)> {
    let hi = 1.0 - sigma_c2 - THETA_MARGIN;
    if !(hi > THETA_MIN) {
        return Err(Error::Domain(format!("σ_c² = {sigma_c2} leaves no room for θ")));
    }
    Ok((THETA_MIN, hi))
}

fn run_ep_method(
    method: Method,
    kernel: &Kernel,
    params: &ModelParams,
    y: &[u8],
    scheme: &AscertainmentScheme,
    opts: &EpOptions,
    warm: Option<&SiteParams>,
) -> Result<EpState> {
    match method {
        Method::EpPlain => ep::ep_fit(kernel, params, y, opts, warm),
        _ => aep::aep_fit(kernel, params, y, scheme, opts, warm),
    }
}

fn estimate_theta(
    dataset: &Dataset,
    kernel: &Kernel,
    params: &ModelParams,
    scheme: &AscertainmentScheme,
    opts: &FitOptions,
) -> Result<ThetaFit> {
    let (lo, hi) = theta_bounds(params.sigma_c2)?;
    let y = dataset.y();
    match opts.method {
        Method::Pcgc => {
            let fit = pcgc::pcgc_estimate(dataset, kernel, params, scheme)?;
            Ok(ThetaFit {
                theta: fit.theta,
                objective: f64::NAN,
                evals: 1,
                at_boundary: false,
                converged: true,
                ep: None,
                taylor_flagged: 0,
                pcgc: Some(fit),
            })
        }
        Method::AplExact | Method::AplTaylor => {
            let mode = if opts.method == Method::AplExact {
                AplMode::Exact
            } else {
                AplMode::Taylor
            };
            let mut failure = None;
            let r = optimize::maximize_scalar(
                |th| match params
                    .with_theta(th)
                    .and_then(|p| PairTermCache::new(kernel, y, &p, *scheme).map(|c| apl::apl_objective(&c, mode)))
                {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                },
                lo,
                hi,
                opts.tol,
            );
            let r = match (r, failure) {
                (Err(Error::NonFiniteObjective), Some(e)) => return Err(e),
                (r, _) => r?,
            };
            let p = params.with_theta(r.x)?;
            let cache = PairTermCache::new(kernel, y, &p, *scheme)?;
            let flagged = apl::apl_terms(&cache, mode, false).flagged;
            Ok(ThetaFit {
                theta: r.x,
                objective: r.f,
                evals: r.evals,
                at_boundary: r.at_boundary,
                converged: true,
                ep: None,
                taylor_flagged: flagged,
                pcgc: None,
            })
        }
        Method::Aep | Method::EpPlain => {
            let warm: RefCell<Option<SiteParams>> = RefCell::new(None);
            let mut failure = None;
            let r = optimize::maximize_scalar(
                |th| {
                    let p = match params.with_theta(th) {
                        Ok(p) => p,
                        Err(e) => {
                            failure.get_or_insert(e);
                            return f64::NEG_INFINITY;
                        }
                    };
                    let w = warm.borrow().clone();
                    match run_ep_method(opts.method, kernel, &p, y, scheme, &opts.ep, w.as_ref()) {
                        Ok(st) if st.converged => {
                            let v = st.log_evidence;
                            *warm.borrow_mut() = Some(st.sites);
                            v
                        }
                        Ok(_) => f64::NEG_INFINITY,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NEG_INFINITY
                        }
                    }
                },
                lo,
                hi,
                opts.tol,
            );
            let r = match (r, failure) {
                (Err(Error::NonFiniteObjective), Some(e)) => return Err(e),
                (r, _) => r?,
            };
            let p = params.with_theta(r.x)?;
            let w = warm.into_inner();
            let st = run_ep_method(opts.method, kernel, &p, y, scheme, &opts.ep, w.as_ref())?;
            Ok(ThetaFit {
                theta: r.x,
                objective: st.log_evidence,
                evals: r.evals,
                at_boundary: r.at_boundary,
                converged: st.converged,
                ep: Some(st),
                taylor_flagged: 0,
                pcgc: None,
            })
        }
    }
}

fn jackknife(
    dataset: &Dataset,
    kernel: &Kernel,
    params: &ModelParams,
    scheme: &AscertainmentScheme,
    opts: &FitOptions,
    fit: &ThetaFit,
) -> Result<AEPJackknifePlan> {
    let bounds = theta_bounds(params.sigma_c2)?;
    if opts.jackknife == JackknifeMode::FullRefit {
        let inner = FitOptions {
            se: SeMode::None,
            ..opts.clone()
        };
        return aep::jackknife_refit(dataset.n(), |i| {
            let ds = dataset.without_unit(i)?;
            let kr = kernel.without_unit(i);
            let pr = params.without_unit(i);
            Ok(estimate_theta(&ds, &kr, &pr, scheme, &inner)?.theta)
        });
    }
    match opts.method {
        Method::Pcgc => {
            let p = fit.pcgc.as_ref().expect("moment fit retained");
            Ok(AEPJackknifePlan::from_estimates(
                p.leave_one_out_all(),
                JackknifeMode::FrozenSites,
                0,
            ))
        }
        Method::AplExact | Method::AplTaylor => {
            let mode = if opts.method == Method::AplExact {
                AplMode::Exact
            } else {
                AplMode::Taylor
            };
            aep::jackknife_stencil(fit.theta, bounds, JackknifeMode::FrozenSites, |th| {
                let p = params.with_theta(th)?;
                let cache = PairTermCache::new(kernel, dataset.y(), &p, *scheme)?;
                let v = apl::apl_terms(&cache, mode, true);
                let loo = v.row_sums.iter().map(|r| v.total - r).collect();
                Ok((v.total, loo, 0))
            })
        }
        Method::Aep | Method::EpPlain => {
            let st = fit.ep.as_ref().expect("EP state retained");
            let sch = if opts.method == Method::Aep {
                *scheme
            } else {
                AscertainmentScheme::unascertained(opts.k)
            };
            aep::jackknife_frozen(kernel, dataset.y(), params, &sch, &st.sites, fit.theta, bounds)
        }
    }
}

/// Fits one study. `kernel` defaults to the relatedness matrix of `Z`.
pub fn fit_study(dataset: &Dataset, kernel: Option<&Kernel>, opts: &FitOptions) -> Result<FitResult> {
    let start = Instant::now();
    let owned;
    let kernel = match kernel {
        Some(k) => k,
        None => {
            owned = grm(dataset.z());
            &owned
        }
    };
    if kernel.n() != dataset.n() {
        return Err(Error::Dimension(format!(
            "kernel order {} for {} units",
            kernel.n(),
            dataset.n()
        )));
    }
    let p = dataset.case_fraction();
    let scheme = scheme_for(opts.k, p)?;
    let mean_diag = kernel.mean_diag();
    let diag_cv_warning = kernel.diag_cv() > agee::DIAG_CV_WARN;
    if diag_cv_warning {
        log::warn!(
            "diagonal of the relatedness matrix varies (CV {:.3}); rescaling uses its mean",
            kernel.diag_cv()
        );
    }

    let (params, fit, agee_fit, passes) = if dataset.d() == 0 {
        let params = ModelParams::new(0.0, Array1::zeros(0), 0.0, opts.k, dataset.x())?;
        let fit = estimate_theta(dataset, kernel, &params, &scheme, opts)?;
        (
            params.with_theta(fit.theta.clamp(0.0, 1.0 - THETA_MARGIN))?,
            fit,
            None,
            0,
        )
    } else {
        let ag = agee::agee_fit(
            dataset.x(),
            dataset.y(),
            opts.k,
            &scheme,
            &AgeeOptions {
                intercept: opts.intercept,
                ..AgeeOptions::default()
            },
        )?;
        let build = |theta: f64| -> Result<ModelParams> {
            let (beta, sc2) =
                liability_fixed_effects(ag.beta.view(), dataset.x(), dataset.y(), &scheme, theta, mean_diag)?;
            ModelParams::new(0.0, beta, sc2, opts.k, dataset.x())
        };
        let p1 = build(0.0)?;
        let fit1 = estimate_theta(dataset, kernel, &p1, &scheme, opts)?;
        let (lo, hi) = theta_bounds(p1.sigma_c2)?;
        let p2 = build(fit1.theta.clamp(lo, hi))?;
        let num: f64 = (&p2.beta - &p1.beta).mapv(|v| v * v).sum().sqrt();
        let den: f64 = p1.beta.mapv(|v| v * v).sum().sqrt().max(1e-12);
        if num / den < BETA_REPASS_TOL {
            (p1, fit1, Some(ag), 1)
        } else {
            let fit2 = estimate_theta(dataset, kernel, &p2, &scheme, opts)?;
            (p2, fit2, Some(ag), 2)
        }
    };

    let plan = match opts.se {
        SeMode::Jackknife => Some(jackknife(dataset, kernel, &params, &scheme, opts, &fit)?),
        SeMode::None => None,
    };
    let (ep_sweeps, ep_skipped, ep_clamped) = fit
        .ep
        .as_ref()
        .map(|s| (s.sweeps, s.skipped, s.clamped))
        .unwrap_or((0, 0, 0));
    let agee_converged = agee_fit.as_ref().is_none_or(|a| a.converged);
    Ok(FitResult {
        method: opts.method,
        theta_hat: fit.theta,
        beta: params.beta.to_vec(),
        sigma_c2: params.sigma_c2,
        objective: fit.objective,
        se: plan.as_ref().map(|p| p.se),
        jackknife_fallbacks: plan.as_ref().map_or(0, |p| p.fallbacks),
        loo_thetas: plan.map(|p| p.loo_thetas),
        converged: fit.converged && agee_converged,
        at_boundary: fit.at_boundary,
        evals: fit.evals,
        ep_sweeps,
        ep_skipped,
        ep_clamped_sites: ep_clamped,
        agee_iterations: agee_fit.as_ref().map_or(0, |a| a.iterations),
        agee_converged,
        fixed_effect_passes: passes,
        taylor_flagged: fit.taylor_flagged,
        diag_cv_warning,
        k: opts.k,
        p,
        s0: scheme.s0,
        s1: scheme.s1,
        seconds: start.elapsed().as_secs_f64(),
    })
}
