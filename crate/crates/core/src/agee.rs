//! Fixed effects under ascertainment from estimating equations.
//!
//! The population marginal mean is probit, `κ = Φ(η)`, and sampling turns it
//! into `μ = s1κ / (s1κ + s0(1−κ))`. The estimating equation
//! `Σ (∂μᵢ/∂β) (yᵢ − μᵢ) / (μᵢ(1−μᵢ)) = 0` (independence working correlation)
//! is solved by Fisher scoring.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::AscertainmentScheme;
use crate::normal;

/// Linear predictor bound: beyond it both tails are numerically saturated.
const ETA_LIMIT: f64 = 37.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InterceptMode {
    /// `η = xᵀβ − Φ⁻¹(1−K)`: the intercept is fixed by the prevalence.
    Fixed,
    /// `η = β₀ + xᵀβ` with a free intercept.
    #[default]
    Free,
}

/// `P(y=1 | x, sampled)` with `κ = Φ(xᵀβ − Φ⁻¹(1−K))`.
pub fn ascertained_mean(
    x: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
    k: f64,
    scheme: &AscertainmentScheme,
) -> f64 {
    let eta = x.dot(&beta) - normal::quantile(1.0 - k);
    ascertain(normal::cdf(eta), scheme)
}

#[inline]
fn ascertain(kappa: f64, scheme: &AscertainmentScheme) -> f64 {
    scheme.s1 * kappa / (scheme.s1 * kappa + scheme.s0 * (1.0 - kappa))
}

#[derive(Debug, Clone, Serialize)]
pub struct AgeeFit {
    /// Slopes, one per column of X.
    pub beta: Array1<f64>,
    /// Fitted intercept (`−Φ⁻¹(1−K)` in fixed mode).
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the estimating equation at the solution.
    pub residual_norm: f64,
    pub mode: InterceptMode,
}

impl AgeeFit {
    /// Fitted `P(y=1 | xᵢ, sampled)` for every row.
    pub fn fitted_means(&self, x: ArrayView2<'_, f64>, scheme: &AscertainmentScheme) -> Array1<f64> {
        x.dot(&self.beta)
            .mapv(|xb| ascertain(normal::cdf(self.intercept + xb), scheme))
    }
}

#[derive(Debug, Clone)]
pub struct AgeeOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub intercept: InterceptMode,
}

impl Default for AgeeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            intercept: InterceptMode::Free,
        }
    }
}

/// Score and expected information at `coef` for design `w` and offset.
fn score_info(
    w: ArrayView2<'_, f64>,
    y: &[u8],
    coef: &Array1<f64>,
    offset: f64,
    scheme: &AscertainmentScheme,
) -> (Array1<f64>, Array2<f64>) {
    let p = w.ncols();
    let mut score = Array1::zeros(p);
    let mut info = Array2::zeros((p, p));
    let eta = w.dot(coef);
    for (i, row) in w.outer_iter().enumerate() {
        let e = (eta[i] + offset).clamp(-ETA_LIMIT, ETA_LIMIT);
        let kappa = normal::cdf(e);
        let kbar = normal::sf(e);
        let phi = normal::pdf(e);
        let mu = ascertain(kappa, scheme);
        let d = scheme.s1 * kappa + scheme.s0 * kbar;
        // (∂μ/∂η)/(μ(1−μ)) = φ/(κ(1−κ)); the sampling weights cancel.
        let u = phi / (kappa * kbar) * (y[i] as f64 - mu);
        let wt = scheme.s1 * scheme.s0 * phi * phi / (d * d * kappa * kbar);
        score.scaled_add(u, &row);
        for a in 0..p {
            let ra = row[a] * wt;
            for b in 0..=a {
                info[[a, b]] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[[b, a]] = info[[a, b]];
        }
    }
    (score, info)
}

/// Solves the ascertained estimating equation for the slopes of `x`.
pub fn agee_fit(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    k: f64,
    scheme: &AscertainmentScheme,
    opts: &AgeeOptions,
) -> Result<AgeeFit> {
    let (n, d) = x.dim();
    if d == 0 {
        return Err(Error::Dimension(
            "estimating equations need at least one covariate".into(),
        ));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{} outcomes for {n} rows", y.len())));
    }
    let free = opts.intercept == InterceptMode::Free;
    let w = if free {
        let mut w = Array2::ones((n, d + 1));
        w.slice_mut(ndarray::s![.., 1..]).assign(&x);
        w
    } else {
        x.to_owned()
    };
    let gram = w.t().dot(&w);
    if linalg::cholesky(gram.view()).is_err() {
        return Err(Error::RankDeficient);
    }
    let offset = if free { 0.0 } else { -normal::quantile(1.0 - k) };
    let p = w.ncols();
    let mut coef = Array1::zeros(p);
    if free {
        // Start at the intercept reproducing the sample prevalence.
        let ybar = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let pk = ybar.clamp(1e-6, 1.0 - 1e-6);
        // Invert μ = s1κ/(s1κ + s0(1−κ)) for κ.
        let kappa = scheme.s0 * pk / (scheme.s1 * (1.0 - pk) + scheme.s0 * pk);
        coef[0] = normal::quantile(kappa.clamp(1e-15, 1.0 - 1e-15));
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let (score, info) = score_info(w.view(), y, &coef, offset, scheme);
        let l = linalg::cholesky(info.view()).map_err(|_| Error::RankDeficient)?;
        let step = linalg::cholesky_solve(l.view(), score.view());
        let max_step = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !max_step.is_finite() {
            break;
        }
        // Guard against overshooting from a poor start.
        let scale = if max_step > 5.0 { 5.0 / max_step } else { 1.0 };
        coef.scaled_add(scale, &step);
        if max_step < opts.tol {
            converged = true;
            break;
        }
    }
    let (score, _) = score_info(w.view(), y, &coef, offset, scheme);
    let residual_norm = score.dot(&score).sqrt();
    let (intercept, beta) = if free {
        (coef[0], coef.slice(ndarray::s![1..]).to_owned())
    } else {
        (offset, coef)
    };
    Ok(AgeeFit {
        beta,
        intercept,
        iterations,
        converged,
        residual_norm,
        mode: opts.intercept,
    })
}

/// Marginal-scale coefficients to GLMM scale: `β·√(var_g + 1)`.
pub fn rescale_to_glmm(beta_gee: ArrayView1<'_, f64>, var_g: f64) -> Array1<f64> {
    beta_gee.mapv(|b| b * (var_g + 1.0).sqrt())
}

/// Coefficient of variation above which a per-unit latent variance is not
/// treated as constant.
pub const DIAG_CV_WARN: f64 = 0.05;
