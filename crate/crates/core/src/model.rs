//! Domain types shared by every estimator: the study data, the relatedness
//! kernel, the case-control sampling scheme and the liability-scale parameters.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Smallest control sampling weight we carry; keeps every log finite.
pub const MIN_SAMPLING_WEIGHT: f64 = 1e-300;

/// One case-control study: fixed-effect covariates, standardized random-effect
/// covariates and binary outcomes. Every unit in a `Dataset` was sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    z: Array2<f64>,
    y: Vec<u8>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, z: Array2<f64>, y: Vec<u8>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::Dimension(format!("need at least 2 units, got {n}")));
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "X has {} rows, Z has {} rows, y has {n} entries",
                x.nrows(),
                z.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::Dimension("Z needs at least one column".into()));
        }
        if let Some(bad) = y.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!("y[{bad}] = {} is not 0/1", y[bad])));
        }
        Ok(Self { x, z, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of fixed-effect covariates.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Number of random-effect covariates.
    pub fn m(&self) -> usize {
        self.z.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn n_cases(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    /// In-sample case fraction.
    pub fn case_fraction(&self) -> f64 {
        self.n_cases() as f64 / self.n() as f64
    }

    /// Copy with unit `i` removed.
    pub fn without_unit(&self, i: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n()).filter(|&j| j != i).collect();
        Self::new(
            self.x.select(Axis(0), &keep),
            self.z.select(Axis(0), &keep),
            keep.iter().map(|&j| self.y[j]).collect(),
        )
    }
}

/// Normalized Gram matrix `G = Z Zᵀ / m`; the latent covariance is `θ·G`.
#[derive(Debug, Clone)]
pub struct Kernel(Array2<f64>);

impl Kernel {
    /// Wraps an existing matrix, symmetrizing it.
    pub fn from_matrix(g: Array2<f64>) -> Result<Self> {
        if g.nrows() != g.ncols() {
            return Err(Error::Dimension(format!("kernel is {}x{}", g.nrows(), g.ncols())));
        }
        let sym = (&g + &g.t()) * 0.5;
        Ok(Self(sym))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn mean_diag(&self) -> f64 {
        self.0.diag().mean().unwrap_or(0.0)
    }

    /// Coefficient of variation of the diagonal.
    pub fn diag_cv(&self) -> f64 {
        let d = self.0.diag();
        let mean = d.mean().unwrap_or(0.0);
        if mean == 0.0 {
            return 0.0;
        }
        d.std(0.0) / mean
    }

    /// Kernel with row and column `i` removed.
    pub fn without_unit(&self, i: usize) -> Self {
        let keep: Vec<usize> = (0..self.n()).filter(|&j| j != i).collect();
        Self(
            self.0
                .select(Axis(0), &keep)
                .select(Axis(1), &keep)
                .as_standard_layout()
                .into_owned(),
        )
    }
}

/// Unit-level case-control sampling: `P(s=1 | y=1) = s1`, `P(s=1 | y=0) = s0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscertainmentScheme {
    /// Population prevalence.
    pub k: f64,
    /// In-sample case fraction.
    pub p: f64,
    pub s1: f64,
    pub s0: f64,
}

impl AscertainmentScheme {
    pub fn new(k: f64, p: f64) -> Result<Self> {
        let (s0, s1) = sampling_weights(k, p)?;
        Ok(Self { k, p, s1, s0 })
    }

    /// Random sampling: both outcomes are kept with the same probability.
    pub fn unascertained(k: f64) -> Self {
        Self {
            k,
            p: k,
            s1: 1.0,
            s0: 1.0,
        }
    }

    /// Sampling probability for an outcome value.
    #[inline]
    pub fn weight(&self, y: u8) -> f64 {
        if y == 1 {
            self.s1
        } else {
            self.s0
        }
    }

    pub fn is_ascertained(&self) -> bool {
        self.s0 != self.s1
    }
}

/// Sampling weights `(s0, s1)` with `s1 = 1` and `s0/s1 = K(1−P)/((1−K)P)`.
pub fn sampling_weights(k: f64, p: f64) -> Result<(f64, f64)> {
    for (name, v) in [("K", k), ("P", p)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!("{name} = {v} must lie in (0, 1)")));
        }
    }
    if k == p {
        return Ok((1.0, 1.0));
    }
    let s0 = (k * (1.0 - p) / ((1.0 - k) * p)).max(MIN_SAMPLING_WEIGHT);
    Ok((s0, 1.0))
}

/// Liability-scale parameters. Total liability variance is one:
/// `θ + σ_c² + σ_ε² = 1`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelParams {
    pub theta: f64,
    pub beta: Array1<f64>,
    pub sigma_c2: f64,
    pub sigma_eps2: f64,
    /// Per-unit liability cutoffs `Φ⁻¹(1−K) − xᵢᵀβ`.
    pub t: Array1<f64>,
}

impl ModelParams {
    pub fn new(theta: f64, beta: Array1<f64>, sigma_c2: f64, k: f64, x: ArrayView2<'_, f64>) -> Result<Self> {
        if x.ncols() != beta.len() {
            return Err(Error::Dimension(format!(
                "beta has {} entries, X has {} columns",
                beta.len(),
                x.ncols()
            )));
        }
        if !(0.0..1.0).contains(&theta) || sigma_c2 < 0.0 || theta + sigma_c2 >= 1.0 {
            return Err(Error::Domain(format!(
                "theta = {theta}, sigma_c2 = {sigma_c2} leave no residual liability variance"
            )));
        }
        let t = thresholds(k, x, beta.view())?;
        Ok(Self {
            theta,
            beta,
            sigma_c2,
            sigma_eps2: 1.0 - theta - sigma_c2,
            t,
        })
    }

    /// Same fixed effects and cutoffs at a different variance component.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&theta) || theta + self.sigma_c2 >= 1.0 {
            return Err(Error::Domain(format!("theta = {theta} out of range")));
        }
        Ok(Self {
            theta,
            sigma_eps2: 1.0 - theta - self.sigma_c2,
            ..self.clone()
        })
    }

    pub fn without_unit(&self, i: usize) -> Self {
        let t = self
            .t
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .collect();
        Self { t, ..self.clone() }
    }
}

/// Standardizes each column of a genotype-like matrix.
///
/// Without `freqs`, columns are centered and scaled to unit (population)
/// variance. With allele frequencies `f`, column `j` becomes
/// `(z − 2f_j)/sqrt(2f_j(1−f_j))`.
pub fn standardize_columns(zraw: ArrayView2<'_, f64>, freqs: Option<&[f64]>) -> Result<Array2<f64>> {
    let (n, m) = zraw.dim();
    let mut out = Array2::zeros((n, m));
    match freqs {
        Some(f) => {
            if f.len() != m {
                return Err(Error::Dimension(format!("{} frequencies for {m} columns", f.len())));
            }
            for (j, &fj) in f.iter().enumerate() {
                if !(fj > 0.0 && fj < 1.0) {
                    return Err(Error::Domain(format!("frequency {fj} of column {j}")));
                }
                let (mean, sd) = (2.0 * fj, (2.0 * fj * (1.0 - fj)).sqrt());
                out.column_mut(j).assign(&zraw.column(j).mapv(|v| (v - mean) / sd));
            }
        }
        None => {
            for j in 0..m {
                let col = zraw.column(j);
                let mean = col.mean().unwrap_or(0.0);
                let var = col.mapv(|v| (v - mean) * (v - mean)).sum() / n as f64;
                if var <= 1e-300 {
                    return Err(Error::DegenerateColumn { column: j });
                }
                let sd = var.sqrt();
                out.column_mut(j).assign(&col.mapv(|v| (v - mean) / sd));
            }
        }
    }
    Ok(out)
}

/// `G = Z Zᵀ / m`, symmetrized.
pub fn grm(z: ArrayView2<'_, f64>) -> Kernel {
    let m = z.ncols().max(1) as f64;
    let g = z.dot(&z.t()) / m;
    Kernel((&g + &g.t()) * 0.5)
}

/// Liability cutoffs `tᵢ = Φ⁻¹(1−K) − xᵢᵀβ`.
pub fn thresholds(k: f64, x: ArrayView2<'_, f64>, beta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Domain(format!("prevalence {k} must lie in (0, 1)")));
    }
    if x.ncols() != beta.len() {
        return Err(Error::Dimension(
            "beta length must equal the number of columns of X".into(),
        ));
    }
    let tau = normal::quantile(1.0 - k);
    if beta.is_empty() {
        return Ok(Array1::from_elem(x.nrows(), tau));
    }
    Ok(x.dot(&beta).mapv(|xb| tau - xb))
}

/// `P(y | g)` under the liability threshold model with residual variance `σ_ε²`.
#[inline]
pub fn probit_conditional(y: u8, g: f64, t: f64, sigma_eps2: f64) -> f64 {
    let z = (g - t) / sigma_eps2.sqrt();
    if y == 1 {
        normal::cdf(z)
    } else {
        normal::sf(z)
    }
}
