//! Ascertained expectation propagation.
//!
//! Each site matches the value and first two cavity-mean derivatives of
//! `R(μ, v) = N(μ, v) / D(μ, v)` where `N = s_y Φ_y(z)` is the sampled-and-observed
//! integral and `D = s0 + (s1 − s0) Φ(z)` the sampled integral, with
//! `z = (μ − t)/√(σ_ε² + v)`. With `s0 = s1` the ratio is the plain probit
//! integral and the whole procedure is bit-identical to [`crate::ep`].

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::ep::{self, EpOptions, EpState, SiteDerivatives, SiteParams, SiteProposal, SiteTerms};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{AscertainmentScheme, Kernel, ModelParams};
use crate::normal;

/// `log R` and its first two derivatives in the cavity mean.
pub fn aep_ratio(mu: f64, var: f64, t: f64, sigma_eps2: f64, y: u8, scheme: &AscertainmentScheme) -> SiteDerivatives {
    let base = ep::gaussian_probit_integral(mu, var, t, sigma_eps2, y);
    let diff = scheme.s1 - scheme.s0;
    if diff == 0.0 {
        return base;
    }
    let c = 1.0 / (sigma_eps2 + var).sqrt();
    let z = (mu - t) * c;
    let d = scheme.s0 + diff * normal::cdf(z);
    let pz = normal::pdf(z);
    let e1 = diff * pz * c / d;
    let e2 = -diff * c * c * z * pz / d - e1 * e1;
    SiteDerivatives {
        log_z: scheme.weight(y).ln() + base.log_z - d.ln(),
        d1: base.d1 - e1,
        d2: base.d2 - e2,
    }
}

/// Sites for the ascertained likelihood.
#[derive(Debug, Clone, Copy)]
pub struct AscertainedSites<'a> {
    pub y: &'a [u8],
    pub t: &'a [f64],
    pub sigma_eps2: f64,
    pub scheme: AscertainmentScheme,
}

impl<'a> AscertainedSites<'a> {
    pub fn new(y: &'a [u8], params: &'a ModelParams, scheme: AscertainmentScheme) -> Self {
        Self {
            y,
            t: params.t.as_slice().expect("contiguous thresholds"),
            sigma_eps2: params.sigma_eps2,
            scheme,
        }
    }
}

impl SiteTerms for AscertainedSites<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn derivatives(&self, i: usize, cavity_mean: f64, cavity_var: f64) -> SiteDerivatives {
        aep_ratio(
            cavity_mean,
            cavity_var,
            self.t[i],
            self.sigma_eps2,
            self.y[i],
            &self.scheme,
        )
    }
}

/// AEP site update for unit `i`.
pub fn aep_site_update(
    i: usize,
    state: &mut EpState,
    y: &[u8],
    params: &ModelParams,
    scheme: &AscertainmentScheme,
    opts: &EpOptions,
) -> Option<SiteProposal> {
    ep::site_update(i, state, &AscertainedSites::new(y, params, *scheme), opts)
}

/// Runs AEP at `params.theta`.
pub fn aep_fit(
    kernel: &Kernel,
    params: &ModelParams,
    y: &[u8],
    scheme: &AscertainmentScheme,
    opts: &EpOptions,
    warm: Option<&SiteParams>,
) -> Result<EpState> {
    let k = kernel.matrix() * params.theta;
    ep::run_ep(k.view(), &AscertainedSites::new(y, params, *scheme), opts, warm)
}

/// The AEP objective: log of `∫ N(g; 0, θG) Πᵢ tᵢ(gᵢ) dg` at the fixed point.
pub fn aep_log_likelihood(state: &EpState) -> f64 {
    state.log_evidence
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum JackknifeMode {
    /// Reuse the full-data sites and refactor by Givens deletion.
    #[default]
    FrozenSites,
    /// Refit every leave-one-out problem from scratch.
    FullRefit,
}

#[derive(Debug, Clone, Serialize)]
pub struct AEPJackknifePlan {
    pub loo_thetas: Vec<f64>,
    pub se: f64,
    pub reuse_mode: JackknifeMode,
    /// Deletions that fell back to a fresh factorization.
    pub fallbacks: usize,
}

impl AEPJackknifePlan {
    pub fn from_estimates(loo_thetas: Vec<f64>, reuse_mode: JackknifeMode, fallbacks: usize) -> Self {
        let se = jackknife_formula(&loo_thetas);
        Self {
            loo_thetas,
            se,
            reuse_mode,
            fallbacks,
        }
    }
}

/// `√((n−1)/n Σ (θ̂₍ᵢ₎ − θ̄)²)`.
pub fn jackknife_formula(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    ((n as f64 - 1.0) / n as f64 * ss).sqrt()
}

/// Gaussian part of the frozen-site objective at one θ: the full-data value
/// and every leave-one-out value of `log ∫ N(g; 0, θG) Πⱼ exp(ν̃ⱼgⱼ − ½τ̃ⱼgⱼ²) dg`.
pub fn frozen_gaussian_objectives(g: &Array2<f64>, theta: f64, sites: &SiteParams) -> Result<(f64, Vec<f64>, usize)> {
    let k = g * theta;
    let post = ep::posterior(k.view(), sites)?;
    gaussian_loo(&k, sites, &post.chol_b)
}

fn gaussian_loo(k: &Array2<f64>, sites: &SiteParams, l: &Array2<f64>) -> Result<(f64, Vec<f64>, usize)> {
    let n = k.nrows();
    let sw = sites.tau.mapv(f64::sqrt);
    let nu = &sites.nu;
    let knu = k.dot(nu);
    let nkn = nu.dot(&knu);
    let full = {
        let mut w: Vec<f64> = (0..n).map(|j| sw[j] * knu[j]).collect();
        linalg::solve_lower_in_place(l.view(), &mut w);
        let q: f64 = w.iter().map(|v| v * v).sum();
        -linalg::half_log_det(l.view()) + 0.5 * (nkn - q)
    };
    let results: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, bool)> {
            let (li, fell_back) = match linalg::delete_row_col(l.view(), i) {
                Ok(li) => (li, false),
                Err(_) => {
                    log::debug!("jackknife: Givens deletion of unit {i} lost definiteness, refactoring");
                    let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                    let mut reduced = Array2::from_shape_fn((n - 1, n - 1), |(a, b)| {
                        sw[keep[a]] * k[[keep[a], keep[b]]] * sw[keep[b]]
                    });
                    for a in 0..n - 1 {
                        reduced[[a, a]] += 1.0;
                    }
                    linalg::cholesky_in_place(&mut reduced)?;
                    (reduced, true)
                }
            };
            let nui = nu[i];
            let nkn_i = nkn - 2.0 * nui * knu[i] + nui * nui * k[[i, i]];
            let mut w: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| sw[j] * (knu[j] - k[[j, i]] * nui))
                .collect();
            linalg::solve_lower_in_place(li.view(), &mut w);
            let q: f64 = w.iter().map(|v| v * v).sum();
            Ok((-linalg::half_log_det(li.view()) + 0.5 * (nkn_i - q), fell_back))
        })
        .collect::<Result<_>>()?;
    let fallbacks = results.iter().filter(|r| r.1).count();
    Ok((full, results.into_iter().map(|r| r.0).collect(), fallbacks))
}

/// Log scale of site `j` against the cavity implied by posterior marginal
/// `(mean, var)`; `None` when that cavity is improper.
fn frozen_scale<S: SiteTerms>(terms: &S, sites: &SiteParams, j: usize, mean: f64, var: f64) -> Option<f64> {
    let (tau, nu) = (sites.tau[j], sites.nu[j]);
    if var <= 0.0 && tau == 0.0 && nu == 0.0 {
        return Some(terms.derivatives(j, mean, 0.0).log_z);
    }
    let (cm, cv) = ep::cavity(var, mean, tau, nu)?;
    let a = ep::site_log_scale(terms.derivatives(j, cm, cv).log_z, cm, cv, tau, nu);
    a.is_finite().then_some(a)
}

/// Frozen-site objectives at one θ: the EP evidence with the site
/// parameters held at `sites`, for the full data and with each unit deleted.
///
/// Site precisions and shifts stay fixed while the site scales follow the
/// cavities at θ, so at a fixed point the full-data value equals the EP
/// evidence. Deleting unit `i` removes its site from the posterior by a
/// rank-one correction before the remaining cavities are formed. The third
/// value counts deletions that needed a fresh factorization or met an
/// improper cavity.
pub fn frozen_objectives<S: SiteTerms + Sync>(
    g: &Array2<f64>,
    theta: f64,
    sites: &SiteParams,
    terms: &S,
) -> Result<(f64, Vec<f64>, usize)> {
    let n = g.nrows();
    if terms.len() != n || sites.len() != n {
        return Err(Error::Dimension(format!(
            "kernel order {n}, {} site terms, {} sites",
            terms.len(),
            sites.len()
        )));
    }
    let k = g * theta;
    let post = ep::posterior(k.view(), sites)?;
    let (gauss_full, gauss_loo, mut fallbacks) = gaussian_loo(&k, sites, &post.chol_b)?;
    let cov = &post.cov;
    let mean = &post.mean;
    let mut bad = 0;
    let mut full = gauss_full;
    for j in 0..n {
        match frozen_scale(terms, sites, j, mean[j], cov[[j, j]]) {
            Some(a) => full += a,
            None => bad += 1,
        }
    }
    if bad > 0 {
        return Err(Error::Domain(format!("{bad} improper cavities at θ = {theta}")));
    }
    let scaled: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = cov.row(i);
            let d = 1.0 - sites.tau[i] * row[i];
            let c = sites.tau[i] / d;
            let shift = (sites.tau[i] * mean[i] - sites.nu[i]) / d;
            let mut sum = 0.0;
            let mut bad = 0;
            for j in (0..n).filter(|&j| j != i) {
                let sji = row[j];
                match frozen_scale(terms, sites, j, mean[j] + shift * sji, cov[[j, j]] + c * sji * sji) {
                    Some(a) => sum += a,
                    None => bad += 1,
                }
            }
            (sum, bad)
        })
        .collect();
    let loo = gauss_loo
        .into_iter()
        .zip(&scaled)
        .map(|(gl, &(sum, bad))| {
            if bad > 0 {
                fallbacks += 1;
            }
            gl + sum
        })
        .collect();
    Ok((full, loo, fallbacks))
}

/// Vertex offset of the parabola through `(−h, f₋), (0, f₀), (h, f₊)`,
/// limited to `[−2h, 2h]`; falls back to the best probe when not concave.
fn parabola_vertex(fm: f64, f0: f64, fp: f64, h: f64) -> f64 {
    let curv = fm - 2.0 * f0 + fp;
    if curv < 0.0 && curv.is_finite() {
        (h * (fm - fp) / (2.0 * curv)).clamp(-2.0 * h, 2.0 * h)
    } else if fm > f0 && fm >= fp {
        -h
    } else if fp > f0 {
        h
    } else {
        0.0
    }
}

/// Delete-one jackknife from leave-one-out objectives evaluated on a
/// three-point θ stencil around `theta_hat`.
///
/// `eval(θ)` returns the full-data objective and every leave-one-out
/// objective. Each is maximized locally by a parabola through the stencil; the
/// full-data vertex serves as the reference, and θ̂₍ᵢ₎ is reported as
/// `theta_hat` plus the offset of its vertex from that reference.
pub fn jackknife_stencil<F>(
    theta_hat: f64,
    bounds: (f64, f64),
    reuse_mode: JackknifeMode,
    mut eval: F,
) -> Result<AEPJackknifePlan>
where
    F: FnMut(f64) -> Result<(f64, Vec<f64>, usize)>,
{
    let (lo, hi) = bounds;
    if !(hi > lo) {
        return Err(Error::Domain(format!("empty θ interval [{lo}, {hi}]")));
    }
    let h = (0.02f64).min((hi - lo) / 4.0);
    let center = theta_hat.clamp(lo + h, hi - h);
    let mut probes = Vec::with_capacity(3);
    let mut fallbacks = 0;
    for th in [center - h, center, center + h] {
        let (full, loo, fb) = eval(th)?;
        fallbacks += fb;
        probes.push((full, loo));
    }
    let n = probes[1].1.len();
    if probes.iter().any(|p| p.1.len() != n) {
        return Err(Error::Dimension(
            "leave-one-out objective count changed across θ".into(),
        ));
    }
    let reference = parabola_vertex(probes[0].0, probes[1].0, probes[2].0, h);
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            let v = parabola_vertex(probes[0].1[i], probes[1].1[i], probes[2].1[i], h);
            theta_hat + (v - reference)
        })
        .collect();
    Ok(AEPJackknifePlan::from_estimates(loo, reuse_mode, fallbacks))
}

/// Delete-one jackknife with frozen sites, deleting each unit from the
/// Cholesky factor by Givens rotations. Pass an unascertained `scheme` for
/// plain EP.
pub fn jackknife_frozen(
    kernel: &Kernel,
    y: &[u8],
    params: &ModelParams,
    scheme: &AscertainmentScheme,
    sites: &SiteParams,
    theta_hat: f64,
    bounds: (f64, f64),
) -> Result<AEPJackknifePlan> {
    let g = kernel.matrix();
    jackknife_stencil(theta_hat, bounds, JackknifeMode::FrozenSites, |th| {
        let p = params.with_theta(th)?;
        frozen_objectives(g, th, sites, &AscertainedSites::new(y, &p, *scheme))
    })
}

/// Delete-one jackknife from an arbitrary leave-one-out refit.
pub fn jackknife_refit<F>(n: usize, refit: F) -> Result<AEPJackknifePlan>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let loo = (0..n).into_par_iter().map(&refit).collect::<Result<Vec<_>>>()?;
    Ok(AEPJackknifePlan::from_estimates(loo, JackknifeMode::FullRefit, 0))
}

/// Posterior site parameters restricted to the units in `keep`.
pub fn restrict_sites(sites: &SiteParams, keep: &[usize]) -> SiteParams {
    SiteParams {
        tau: Array1::from_iter(keep.iter().map(|&j| sites.tau[j])),
        nu: Array1::from_iter(keep.iter().map(|&j| sites.nu[j])),
    }
}
