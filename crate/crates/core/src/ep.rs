//! Expectation propagation for probit Gaussian-process classification.
//!
//! Each likelihood term is replaced by an unnormalized Gaussian site
//! `tᵢ(g) = exp(aᵢ + ν̃ᵢ g − ½ τ̃ᵢ g²)`, i.e. `rᵢ N(g; α̃ᵢ, γ̃ᵢ)` with
//! `γ̃ᵢ = 1/τ̃ᵢ` and `α̃ᵢ = ν̃ᵢ/τ̃ᵢ`. A site update only needs the log of the
//! matched cavity integral and its first two derivatives in the cavity mean,
//! which is what [`SiteTerms`] supplies; the ascertained variant in
//! [`crate::aep`] plugs in a different integral and reuses everything here.
//!
//! Site precisions are kept non-negative so the posterior can be carried
//! through the Cholesky factor of `B = I + S̃^{1/2} K S̃^{1/2}`. When a matched
//! curvature would require a negative precision the site keeps zero precision
//! and matches the value and slope of the target only.

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use crate::error::Result;
use crate::linalg;
use crate::model::{Kernel, ModelParams};
use crate::normal;

/// Log of a matched cavity integral and its derivatives in the cavity mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteDerivatives {
    pub log_z: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Supplies, for unit `i` and a Gaussian cavity `N(mean, var)`, the quantity
/// each site must reproduce.
pub trait SiteTerms {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn derivatives(&self, i: usize, cavity_mean: f64, cavity_var: f64) -> SiteDerivatives;
}

/// `log ∫ N(g; μ, v) P(y | g) dg` and its `μ`-derivatives for the probit
/// liability model `P(y=1 | g) = Φ((g − t)/σ_ε)`.
pub fn gaussian_probit_integral(mu: f64, var: f64, t: f64, sigma_eps2: f64, y: u8) -> SiteDerivatives {
    let s = (sigma_eps2 + var).sqrt();
    let sgn = if y == 1 { 1.0 } else { -1.0 };
    let z = sgn * (mu - t) / s;
    let lambda = normal::inv_mills(z);
    let d1 = sgn * lambda / s;
    let d2 = -(lambda / (s * s)) * (z + lambda);
    SiteDerivatives {
        log_z: normal::log_cdf(z),
        d1,
        d2,
    }
}

/// Plain probit sites: the unascertained GLMM likelihood.
#[derive(Debug, Clone, Copy)]
pub struct ProbitSites<'a> {
    pub y: &'a [u8],
    pub t: &'a [f64],
    pub sigma_eps2: f64,
}

impl<'a> ProbitSites<'a> {
    pub fn new(y: &'a [u8], params: &'a ModelParams) -> Self {
        Self {
            y,
            t: params.t.as_slice().expect("contiguous thresholds"),
            sigma_eps2: params.sigma_eps2,
        }
    }
}

impl SiteTerms for ProbitSites<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn derivatives(&self, i: usize, cavity_mean: f64, cavity_var: f64) -> SiteDerivatives {
        gaussian_probit_integral(cavity_mean, cavity_var, self.t[i], self.sigma_eps2, self.y[i])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpOptions {
    /// Convergence threshold on the largest change of a site's natural parameters.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Step size applied when an update would break positivity.
    pub damping: f64,
    /// Damping attempts before a site is skipped for the sweep.
    pub max_failures: usize,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 100,
            damping: 0.8,
            max_failures: 5,
        }
    }
}

/// Site natural parameters: precision `τ̃` and precision-times-mean `ν̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteParams {
    pub tau: Array1<f64>,
    pub nu: Array1<f64>,
}

impl SiteParams {
    /// Flat sites (`γ̃ = ∞`, `α̃ = 0`, `r = 1`).
    pub fn flat(n: usize) -> Self {
        Self {
            tau: Array1::zeros(n),
            nu: Array1::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

/// Outcome of matching one site against its cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteProposal {
    pub tau: f64,
    pub nu: f64,
    /// True when the matched curvature asked for a negative precision.
    pub clamped: bool,
}

/// Converts matched derivatives at the cavity into site natural parameters via
/// the moment correspondence `μ̂ = μ + v·d1`, `σ̂² = v + v²·d2`.
pub fn match_site(d: &SiteDerivatives, cavity_mean: f64, cavity_var: f64) -> Option<SiteProposal> {
    if !(d.d1.is_finite() && d.d2.is_finite() && d.log_z.is_finite()) {
        return None;
    }
    if d.d2 >= 0.0 {
        return Some(SiteProposal {
            tau: 0.0,
            nu: d.d1,
            clamped: d.d2 > 0.0,
        });
    }
    let denom = 1.0 + cavity_var * d.d2;
    if denom <= 0.0 {
        // σ̂² ≤ 0: no Gaussian reproduces this curvature.
        return None;
    }
    Some(SiteProposal {
        tau: -d.d2 / denom,
        nu: (d.d1 - cavity_mean * d.d2) / denom,
        clamped: false,
    })
}

/// Converged (or best-effort) EP approximation.
#[derive(Debug, Clone)]
pub struct EpState {
    pub sites: SiteParams,
    /// Log scale `aᵢ` of each site in natural form.
    pub site_log_scale: Array1<f64>,
    pub post_mean: Array1<f64>,
    pub post_cov: Array2<f64>,
    pub cavity_mu: Array1<f64>,
    pub cavity_var: Array1<f64>,
    pub log_evidence: f64,
    /// Lower Cholesky factor of `B = I + S̃^{1/2} K S̃^{1/2}`.
    pub chol_b: Array2<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Sites held at zero precision in the last sweep.
    pub clamped: usize,
    /// Site updates skipped (over all sweeps).
    pub skipped: usize,
    /// Largest natural-parameter change in the last sweep.
    pub last_change: f64,
}

impl EpState {
    pub fn n(&self) -> usize {
        self.sites.len()
    }

    /// Site variances `γ̃ᵢ`; `+∞` for flat sites.
    pub fn site_gamma(&self) -> Array1<f64> {
        self.sites.tau.mapv(|t| if t > 0.0 { 1.0 / t } else { f64::INFINITY })
    }

    /// Site means `α̃ᵢ`; zero for sites without precision.
    pub fn site_alpha(&self) -> Array1<f64> {
        Array1::from_iter(
            self.sites
                .tau
                .iter()
                .zip(self.sites.nu.iter())
                .map(|(&t, &n)| if t > 0.0 { n / t } else { 0.0 }),
        )
    }

    /// `log rᵢ` such that `tᵢ = rᵢ N(g; α̃ᵢ, γ̃ᵢ)`; `+∞` for flat sites.
    pub fn site_log_r(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n()).map(|i| {
            let (t, nu) = (self.sites.tau[i], self.sites.nu[i]);
            if t > 0.0 {
                self.site_log_scale[i] + 0.5 * (2.0 * std::f64::consts::PI / t).ln() + 0.5 * nu * nu / t
            } else {
                f64::INFINITY
            }
        }))
    }
}

pub(crate) struct Posterior {
    pub cov: Array2<f64>,
    pub mean: Array1<f64>,
    pub chol_b: Array2<f64>,
}

/// Posterior `Σ = (K⁻¹ + S̃)⁻¹ = K − K S^{1/2} B⁻¹ S^{1/2} K`, `μ = Σ ν̃`.
pub(crate) fn posterior(kernel: ArrayView2<'_, f64>, sites: &SiteParams) -> Result<Posterior> {
    let n = kernel.nrows();
    let sw = sites.tau.mapv(f64::sqrt);
    let mut b = Array2::from_shape_fn((n, n), |(i, j)| sw[i] * kernel[[i, j]] * sw[j]);
    for i in 0..n {
        b[[i, i]] += 1.0;
    }
    linalg::cholesky_in_place(&mut b)?;
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| sw[i] * kernel[[i, j]]);
    linalg::solve_lower_matrix_in_place(b.view(), &mut v);
    let mut cov = kernel.as_standard_layout().into_owned() - v.t().dot(&v);
    // Absorb round-off asymmetry.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }
    let mean = cov.dot(&sites.nu);
    Ok(Posterior { cov, mean, chol_b: b })
}

/// Cavity `(mean, var)` for unit `i`, or `None` when its precision is not positive.
#[inline]
pub(crate) fn cavity(sii: f64, mui: f64, tau: f64, nu: f64) -> Option<(f64, f64)> {
    let prec = 1.0 / sii - tau;
    if !(prec > 0.0) || !prec.is_finite() {
        return None;
    }
    let var = 1.0 / prec;
    Some((var * (mui / sii - nu), var))
}

/// Log scale `aᵢ` making `∫ N(g; m, v) tᵢ(g) dg = exp(log_z)`.
pub(crate) fn site_log_scale(log_z: f64, cav_mean: f64, cav_var: f64, tau: f64, nu: f64) -> f64 {
    let cav_prec = 1.0 / cav_var;
    let prec = tau + cav_prec;
    let mean = (nu + cav_mean * cav_prec) / prec;
    log_z + 0.5 * (1.0 + cav_var * tau).ln() - 0.5 * mean * mean * prec + 0.5 * cav_mean * cav_mean * cav_prec
}

/// Tracks sweep-level bookkeeping while sites are updated in place.
struct Sweeper<'k> {
    cov: Array2<f64>,
    mean: Array1<f64>,
    sites: SiteParams,
    opts: &'k EpOptions,
    scratch: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UpdateOutcome {
    Applied,
    Clamped,
    Skipped,
}

impl Sweeper<'_> {
    fn update_site<S: SiteTerms>(&mut self, i: usize, terms: &S) -> (UpdateOutcome, f64) {
        let n = self.sites.len();
        let sii = self.cov[[i, i]];
        if sii <= 0.0 {
            // No latent variance at this unit: its site has nothing to move.
            return (UpdateOutcome::Applied, 0.0);
        }
        let (tau_old, nu_old) = (self.sites.tau[i], self.sites.nu[i]);
        let Some((cm, cv)) = cavity(sii, self.mean[i], tau_old, nu_old) else {
            return (UpdateOutcome::Skipped, 0.0);
        };
        let d = terms.derivatives(i, cm, cv);
        let Some(prop) = match_site(&d, cm, cv) else {
            return (UpdateOutcome::Skipped, 0.0);
        };

        let mut step = 1.0;
        let mut attempt = 0;
        let (dtau, dnu) = loop {
            let tau_new = tau_old + step * (prop.tau - tau_old);
            let nu_new = nu_old + step * (prop.nu - nu_old);
            let dtau = tau_new - tau_old;
            let ok = tau_new >= 0.0 && tau_new.is_finite() && nu_new.is_finite() && 1.0 + dtau * sii > 0.0;
            if ok {
                break (dtau, nu_new - nu_old);
            }
            attempt += 1;
            if attempt > self.opts.max_failures {
                return (UpdateOutcome::Skipped, 0.0);
            }
            step = if attempt == 1 { self.opts.damping } else { step * 0.5 };
        };

        self.scratch.clear();
        self.scratch.extend((0..n).map(|j| self.cov[[j, i]]));
        let si = &self.scratch;
        let c = dtau / (1.0 + dtau * si[i]);
        if c != 0.0 {
            let data = self.cov.as_slice_mut().expect("standard layout");
            for (r, &sr) in si.iter().enumerate() {
                let f = c * sr;
                if f == 0.0 {
                    continue;
                }
                let row = &mut data[r * n..(r + 1) * n];
                for (v, &sc) in row.iter_mut().zip(si.iter()) {
                    *v -= f * sc;
                }
            }
        }
        let coef = c * (self.mean[i] + si[i] * dnu) - dnu;
        for (m, &sr) in self.mean.iter_mut().zip(si.iter()) {
            *m -= coef * sr;
        }
        self.sites.tau[i] += dtau;
        self.sites.nu[i] += dnu;
        let change = dtau.abs().max(dnu.abs());
        let outcome = if prop.clamped {
            UpdateOutcome::Clamped
        } else {
            UpdateOutcome::Applied
        };
        (outcome, change)
    }
}

/// Runs EP to a fixed point for the latent covariance `kernel` (already scaled
/// by θ) and the given sites. `warm` seeds the site parameters.
pub fn run_ep<S: SiteTerms>(
    kernel: ArrayView2<'_, f64>,
    terms: &S,
    opts: &EpOptions,
    warm: Option<&SiteParams>,
) -> Result<EpState> {
    let n = terms.len();
    let sites = match warm {
        Some(w) if w.len() == n => w.clone(),
        _ => SiteParams::flat(n),
    };
    let post = posterior(kernel, &sites)?;
    let mut sw = Sweeper {
        cov: post.cov,
        mean: post.mean,
        sites,
        opts,
        scratch: Vec::with_capacity(n),
    };
    let mut chol_b = post.chol_b;
    let mut converged = false;
    let mut sweeps = 0;
    let mut clamped = 0;
    let mut skipped = 0;
    let mut last_change = f64::INFINITY;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        clamped = 0;
        for i in 0..n {
            let (outcome, change) = sw.update_site(i, terms);
            match outcome {
                UpdateOutcome::Clamped => clamped += 1,
                UpdateOutcome::Skipped => skipped += 1,
                UpdateOutcome::Applied => {}
            }
            max_change = max_change.max(change);
        }
        let fresh = posterior(kernel, &sw.sites)?;
        sw.cov = fresh.cov;
        sw.mean = fresh.mean;
        chol_b = fresh.chol_b;
        last_change = max_change;
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }

    let Sweeper { cov, mean, sites, .. } = sw;
    let mut cavity_mu = Array1::zeros(n);
    let mut cavity_var = Array1::zeros(n);
    let mut scale = Array1::zeros(n);
    let mut sum_scale = 0.0;
    for i in 0..n {
        if cov[[i, i]] <= 0.0 && sites.tau[i] == 0.0 && sites.nu[i] == 0.0 {
            let a = terms.derivatives(i, mean[i], 0.0).log_z;
            cavity_mu[i] = mean[i];
            scale[i] = a;
            sum_scale += a;
            continue;
        }
        match cavity(cov[[i, i]], mean[i], sites.tau[i], sites.nu[i]) {
            Some((cm, cv)) => {
                let d = terms.derivatives(i, cm, cv);
                let a = site_log_scale(d.log_z, cm, cv, sites.tau[i], sites.nu[i]);
                cavity_mu[i] = cm;
                cavity_var[i] = cv;
                scale[i] = a;
                sum_scale += a;
            }
            None => {
                cavity_mu[i] = f64::NAN;
                cavity_var[i] = f64::NAN;
                scale[i] = f64::NAN;
                sum_scale = f64::NAN;
            }
        }
    }
    let log_evidence = sum_scale - linalg::half_log_det(chol_b.view()) + 0.5 * sites.nu.dot(&mean);
    if !log_evidence.is_finite() {
        converged = false;
    }
    Ok(EpState {
        sites,
        site_log_scale: scale,
        post_mean: mean,
        post_cov: cov,
        cavity_mu,
        cavity_var,
        log_evidence,
        chol_b,
        converged,
        sweeps,
        clamped,
        skipped,
        last_change,
    })
}

/// One in-place site update on an existing state; returns the proposal that
/// was applied, or `None` if the site was skipped. The posterior is updated by
/// a rank-one correction, the evidence is not recomputed.
pub fn site_update<S: SiteTerms>(i: usize, state: &mut EpState, terms: &S, opts: &EpOptions) -> Option<SiteProposal> {
    let n = state.n();
    let mut sw = Sweeper {
        cov: std::mem::take(&mut state.post_cov),
        mean: std::mem::take(&mut state.post_mean),
        sites: std::mem::replace(&mut state.sites, SiteParams::flat(0)),
        opts,
        scratch: Vec::with_capacity(n),
    };
    let (outcome, _) = sw.update_site(i, terms);
    state.post_cov = sw.cov;
    state.post_mean = sw.mean;
    state.sites = sw.sites;
    match outcome {
        UpdateOutcome::Skipped => None,
        _ => Some(SiteProposal {
            tau: state.sites.tau[i],
            nu: state.sites.nu[i],
            clamped: outcome == UpdateOutcome::Clamped,
        }),
    }
}

/// Plain EP site update for unit `i` (ignores ascertainment).
pub fn ep_site_update(
    i: usize,
    state: &mut EpState,
    y: &[u8],
    params: &ModelParams,
    opts: &EpOptions,
) -> Option<SiteProposal> {
    site_update(i, state, &ProbitSites::new(y, params), opts)
}

/// Plain EP for the probit GLMM with latent covariance `θ·G`.
pub fn ep_fit(
    kernel: &Kernel,
    params: &ModelParams,
    y: &[u8],
    opts: &EpOptions,
    warm: Option<&SiteParams>,
) -> Result<EpState> {
    let k = kernel.matrix() * params.theta;
    run_ep(k.view(), &ProbitSites::new(y, params), opts, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integral_at_threshold() {
        let d = gaussian_probit_integral(0.4, 1.3, 0.4, 0.6, 1);
        assert_relative_eq!(d.log_z, 0.5f64.ln(), epsilon = 1e-15);
        let d = gaussian_probit_integral(0.0, 0.5, 0.0, 0.5, 1);
        assert_relative_eq!(d.d1, 0.797_884_560_802_865_4, epsilon = 1e-14);
    }

    #[test]
    fn integral_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..20 {
            let mu = rng.random_range(-3.0..3.0);
            let var = rng.random_range(0.05..2.0);
            let t = rng.random_range(-2.5..2.5);
            let se2 = rng.random_range(0.2..0.9);
            let y = rng.random_range(0..2u8);
            let f = |m: f64| gaussian_probit_integral(m, var, t, se2, y);
            let d = f(mu);
            let fd1 = (f(mu + h).log_z - f(mu - h).log_z) / (2.0 * h);
            let fd2 = (f(mu + h).d1 - f(mu - h).d1) / (2.0 * h);
            assert!((fd1 - d.d1).abs() <= 1e-6 * d.d1.abs().max(1.0), "{fd1} vs {}", d.d1);
            assert!((fd2 - d.d2).abs() <= 1e-6 * d.d2.abs().max(1.0), "{fd2} vs {}", d.d2);
        }
    }

    #[test]
    fn extreme_tail_stays_finite() {
        let d = gaussian_probit_integral(-60.0, 0.5, 0.0, 0.5, 1);
        assert!(d.log_z.is_finite() && d.d1.is_finite() && d.d2.is_finite());
        assert!(d.d2 < 0.0 && d.d2 > -1.0 / 1.0);
    }

    struct Flat(usize);
    impl SiteTerms for Flat {
        fn len(&self) -> usize {
            self.0
        }
        fn derivatives(&self, _: usize, _: f64, _: f64) -> SiteDerivatives {
            SiteDerivatives {
                log_z: 0.0,
                d1: 0.0,
                d2: 0.0,
            }
        }
    }

    #[test]
    fn flat_likelihood_leaves_sites_flat() {
        let k = array![[1.0, 0.3], [0.3, 1.0]];
        let st = run_ep(k.view(), &Flat(2), &EpOptions::default(), None).unwrap();
        assert!(st.converged);
        assert!(st.site_gamma().iter().all(|g| g.is_infinite()));
        assert_relative_eq!(st.log_evidence, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_theta_gives_product_of_marginals() {
        let x = Array2::<f64>::zeros((3, 0));
        let params = ModelParams::new(0.0, Array1::zeros(0), 0.0, 0.1, x.view()).unwrap();
        let kernel = Kernel::from_matrix(Array2::eye(3)).unwrap();
        let y = [1u8, 0, 1];
        let st = ep_fit(&kernel, &params, &y, &EpOptions::default(), None).unwrap();
        let want: f64 = y
            .iter()
            .zip(params.t.iter())
            .map(|(&yi, &ti)| crate::model::probit_conditional(yi, 0.0, ti, params.sigma_eps2).ln())
            .sum();
        assert_relative_eq!(st.log_evidence, want, epsilon = 1e-12);
    }

    #[test]
    fn posterior_stays_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 25;
        let z = Array2::from_shape_fn((n, 40), |_| rng.random::<f64>() - 0.5);
        let kernel = crate::model::grm(z.view());
        let x = Array2::<f64>::zeros((n, 0));
        let params = ModelParams::new(0.4, Array1::zeros(0), 0.0, 0.2, x.view()).unwrap();
        let y: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let st = ep_fit(&kernel, &params, &y, &EpOptions::default(), None).unwrap();
        assert!(st.converged);
        linalg::cholesky(st.post_cov.view()).expect("posterior PD");
        assert!(st.cavity_var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn single_site_update_reduces_to_tilted_moments() {
        let x = Array2::<f64>::zeros((1, 0));
        let params = ModelParams::new(0.3, Array1::zeros(0), 0.0, 0.5, x.view()).unwrap();
        let kernel = Kernel::from_matrix(array![[1.0]]).unwrap();
        let y = [1u8];
        let mut st = ep_fit(
            &kernel,
            &params,
            &y,
            &EpOptions {
                max_sweeps: 0,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let p = ep_site_update(0, &mut st, &y, &params, &EpOptions::default()).unwrap();
        // Posterior variance after the update equals the tilted variance.
        let d = gaussian_probit_integral(0.0, 0.3, 0.0, 0.7, 1);
        let tilted_var = 0.3 + 0.09 * d.d2;
        assert_relative_eq!(1.0 / (1.0 / 0.3 + p.tau), tilted_var, max_relative = 1e-12);
        assert_relative_eq!(st.post_mean[0], 0.3 * d.d1, max_relative = 1e-12);
    }
}
