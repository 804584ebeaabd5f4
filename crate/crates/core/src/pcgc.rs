//! Phenotype-correlation genotype-correlation moment estimator.
//!
//! With `μᵢ = P(yᵢ=1 | Xᵢ, sampled)` and `Kᵢ` the population case probability,
//! the standardized outcomes `ỹᵢ = (yᵢ − μᵢ)/√(μᵢ(1−μᵢ))` satisfy, to first
//! order in the pair correlation,
//! `E[ỹᵢỹⱼ] ≈ θ Gᵢⱼ · φ(hᵢ)φ(hⱼ)/s² · √(μᵢ(1−μᵢ)μⱼ(1−μⱼ)) / (Kᵢ(1−Kᵢ)Kⱼ(1−Kⱼ))`,
//! where `hᵢ = tᵢ/s` and `s² = 1 − σ_c²`. θ is the least-squares slope through
//! the origin over all pairs.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::model::{AscertainmentScheme, Dataset, Kernel, ModelParams};
use crate::normal;

#[derive(Debug, Clone)]
pub struct PcgcFit {
    pub theta: f64,
    /// Per-row cross-products, kept for leave-one-out estimates.
    row_xy: Vec<f64>,
    row_xx: Vec<f64>,
    sum_xy: f64,
    sum_xx: f64,
}

impl PcgcFit {
    /// Slope with all pairs touching unit `i` removed.
    pub fn leave_one_out(&self, i: usize) -> f64 {
        (self.sum_xy - self.row_xy[i]) / (self.sum_xx - self.row_xx[i])
    }

    pub fn leave_one_out_all(&self) -> Vec<f64> {
        (0..self.row_xy.len()).map(|i| self.leave_one_out(i)).collect()
    }
}

/// Standardized outcomes and per-unit conversion factors.
fn unit_terms(y: &[u8], params: &ModelParams, scheme: &AscertainmentScheme) -> (Array1<f64>, Array1<f64>) {
    let s2 = 1.0 - params.sigma_c2;
    let s = s2.sqrt();
    let n = y.len();
    let mut ytil = Array1::zeros(n);
    let mut factor = Array1::zeros(n);
    for i in 0..n {
        let h = params.t[i] / s;
        let k = normal::sf(h);
        let mu = scheme.s1 * k / (scheme.s1 * k + scheme.s0 * (1.0 - k));
        let sd = (mu * (1.0 - mu)).sqrt();
        ytil[i] = (y[i] as f64 - mu) / sd;
        factor[i] = normal::pdf(h) * sd / (k * (1.0 - k) * s);
    }
    (ytil, factor)
}

/// Moment estimate of θ.
pub fn pcgc_estimate(
    dataset: &Dataset,
    kernel: &Kernel,
    params: &ModelParams,
    scheme: &AscertainmentScheme,
) -> Result<PcgcFit> {
    let n = dataset.n();
    if kernel.n() != n {
        return Err(Error::Dimension(format!("kernel order {} for {n} units", kernel.n())));
    }
    let g = kernel.matrix();
    let (ytil, factor) = unit_terms(dataset.y(), params, scheme);
    let mut row_xy = vec![0.0; n];
    let mut row_xx = vec![0.0; n];
    let (mut sum_xy, mut sum_xx) = (0.0, 0.0);
    let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let gij = g[[i, j]];
            gmin = gmin.min(gij);
            gmax = gmax.max(gij);
            let x = gij * factor[i] * factor[j];
            let p = x * ytil[i] * ytil[j];
            row_xy[i] += p;
            row_xy[j] += p;
            row_xx[i] += x * x;
            row_xx[j] += x * x;
            sum_xy += p;
            sum_xx += x * x;
        }
    }
    if !(gmax - gmin > 1e-12) {
        return Err(Error::DegenerateRegressor(
            "off-diagonal relatedness is constant across pairs".into(),
        ));
    }
    if !(sum_xx > 0.0) {
        return Err(Error::DegenerateRegressor("regressor is identically zero".into()));
    }
    Ok(PcgcFit {
        theta: sum_xy / sum_xx,
        row_xy,
        row_xx,
        sum_xy,
        sum_xx,
    })
}
