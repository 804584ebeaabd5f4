//! Ascertained pairwise likelihood.
//!
//! For a pair `(i, j)` the liabilities `lᵢ = gᵢ + εᵢ` are bivariate normal with
//! standard deviations `sᵢ = √(θGᵢᵢ + σ_ε²)` and correlation `r = θGᵢⱼ/(sᵢsⱼ)`.
//! With `A_ab = P(yᵢ=a, yⱼ=b)` and
//! `B = s1²A₁₁ + s1s0(A₁₀+A₀₁) + s0²A₀₀ = P(both sampled)` up to constants,
//! each pair contributes `log A_ab − log B`.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvn;
use crate::error::{Error, Result};
use crate::model::{AscertainmentScheme, Kernel, ModelParams};
use crate::normal;

/// Floor applied to a non-positive expanded pair probability.
pub const TAYLOR_FLOOR: f64 = 1e-300;

const MAX_CORRELATION: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AplMode {
    #[default]
    Exact,
    Taylor,
}

/// Per-unit quantities shared by every pair at one θ.
#[derive(Debug, Clone)]
pub struct PairTermCache<'a> {
    g: &'a Array2<f64>,
    y: &'a [u8],
    theta: f64,
    scheme: AscertainmentScheme,
    /// Standardized cutoffs `tᵢ/sᵢ`.
    h: Vec<f64>,
    inv_s: Vec<f64>,
    /// Marginal case probabilities `Kᵢ = 1 − Φ(hᵢ)`.
    k: Vec<f64>,
    phi: Vec<f64>,
}

impl<'a> PairTermCache<'a> {
    pub fn new(kernel: &'a Kernel, y: &'a [u8], params: &ModelParams, scheme: AscertainmentScheme) -> Result<Self> {
        let n = kernel.n();
        if y.len() != n || params.t.len() != n {
            return Err(Error::Dimension(format!(
                "kernel order {n}, {} outcomes, {} cutoffs",
                y.len(),
                params.t.len()
            )));
        }
        let g = kernel.matrix();
        let theta = params.theta;
        let mut h = Vec::with_capacity(n);
        let mut inv_s = Vec::with_capacity(n);
        let mut k = Vec::with_capacity(n);
        let mut phi = Vec::with_capacity(n);
        // Marginals take a unit kernel diagonal. Each unit enters n − 1 pairs, so
        // sampling noise in Gᵢᵢ would otherwise drive θ through the marginals.
        let s = (theta + params.sigma_eps2).sqrt();
        for i in 0..n {
            let hi = params.t[i] / s;
            h.push(hi);
            inv_s.push(1.0 / s);
            k.push(normal::sf(hi));
            phi.push(normal::pdf(hi));
        }
        Ok(Self {
            g,
            y,
            theta,
            scheme,
            h,
            inv_s,
            k,
            phi,
        })
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    /// Liability correlation of the pair, clipped away from ±1.
    #[inline]
    pub fn rho(&self, i: usize, j: usize) -> f64 {
        (self.theta * self.g[[i, j]] * self.inv_s[i] * self.inv_s[j]).clamp(-MAX_CORRELATION, MAX_CORRELATION)
    }

    pub fn marginal(&self, i: usize) -> f64 {
        self.k[i]
    }

    #[inline]
    fn cell(&self, a: u8, b: u8, ki: f64, kj: f64, a11: f64) -> f64 {
        match (a, b) {
            (1, 1) => a11,
            (1, _) => ki - a11,
            (_, 1) => kj - a11,
            _ => 1.0 - ki - kj + a11,
        }
    }
}

/// Exact ascertained pair log-likelihood (sampling constants dropped).
pub fn pair_loglik_exact(i: usize, j: usize, cache: &PairTermCache<'_>) -> f64 {
    let r = cache.rho(i, j);
    let (ki, kj) = (cache.k[i], cache.k[j]);
    let a11 = bvn::upper_orthant(cache.h[i], cache.h[j], r);
    let (s1, s0) = (cache.scheme.s1, cache.scheme.s0);
    let a10 = ki - a11;
    let a01 = kj - a11;
    let a00 = 1.0 - ki - kj + a11;
    let b = s1 * s1 * a11 + s1 * s0 * (a10 + a01) + s0 * s0 * a00;
    let a = cache.cell(cache.y[i], cache.y[j], ki, kj, a11);
    a.ln() - b.ln()
}

/// First-order expansion of the pair probability ratio in the correlation.
/// The second value reports whether the expansion had to be floored.
pub fn pair_loglik_taylor(i: usize, j: usize, cache: &PairTermCache<'_>) -> (f64, bool) {
    let r = cache.rho(i, j);
    let (ki, kj) = (cache.k[i], cache.k[j]);
    let (s1, s0) = (cache.scheme.s1, cache.scheme.s0);
    let (a, b) = (cache.y[i], cache.y[j]);
    let a0 = cache.cell(a, b, ki, kj, ki * kj);
    let b0 = (s0 * (1.0 - ki) + s1 * ki) * (s0 * (1.0 - kj) + s1 * kj);
    let pp = cache.phi[i] * cache.phi[j];
    let da = if a == b { pp } else { -pp };
    let db = pp * (s1 - s0) * (s1 - s0);
    let v = a0 / b0 + r * (da * b0 - db * a0) / (b0 * b0);
    if v > 0.0 && v.is_finite() {
        (v.ln(), false)
    } else {
        (TAYLOR_FLOOR.ln(), true)
    }
}

/// Objective value with per-unit pair sums.
#[derive(Debug, Clone)]
pub struct AplValue {
    pub total: f64,
    /// `Σ_{j≠i}` pair terms touching unit `i`; empty unless requested.
    pub row_sums: Vec<f64>,
    /// Taylor terms floored at [`TAYLOR_FLOOR`].
    pub flagged: usize,
}

/// Sum of the pair terms over all unordered pairs.
pub fn apl_objective(cache: &PairTermCache<'_>, mode: AplMode) -> f64 {
    apl_terms(cache, mode, false).total
}

/// Sums over pairs; the reduction order is fixed so results do not depend on
/// the thread count.
pub fn apl_terms(cache: &PairTermCache<'_>, mode: AplMode, with_rows: bool) -> AplValue {
    let n = cache.n();
    let rows: Vec<(f64, usize, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sum = 0.0;
            let mut flagged = 0;
            let mut terms = if with_rows {
                Vec::with_capacity(n - i - 1)
            } else {
                Vec::new()
            };
            for j in i + 1..n {
                let v = match mode {
                    AplMode::Exact => pair_loglik_exact(i, j, cache),
                    AplMode::Taylor => {
                        let (v, f) = pair_loglik_taylor(i, j, cache);
                        flagged += f as usize;
                        v
                    }
                };
                sum += v;
                if with_rows {
                    terms.push(v);
                }
            }
            (sum, flagged, terms)
        })
        .collect();
    let total = rows.iter().map(|r| r.0).sum();
    let flagged = rows.iter().map(|r| r.1).sum();
    let mut row_sums = Vec::new();
    if with_rows {
        row_sums = vec![0.0; n];
        for (i, (sum, _, terms)) in rows.iter().enumerate() {
            row_sums[i] += sum;
            for (off, v) in terms.iter().enumerate() {
                row_sums[i + 1 + off] += v;
            }
        }
    }
    AplValue {
        total,
        row_sums,
        flagged,
    }
}
