//! Synthetic case-control studies under the liability threshold model.
//!
//! Draw order, all from one ChaCha8 stream seeded with `seed`:
//! allele frequencies (m), random effects `b` (m), fixed effects `β` (c),
//! standardization-noise multipliers (m, drawn even when `noise_e = 0`),
//! then the case and control subsamples. Each population row draws its
//! genotypes, covariates and residual, in that order, from its own stream
//! (`seed`, stream `row + 1`), so sampled rows are regenerated instead of
//! storing the population genotype matrix.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{standardize_columns, AscertainmentScheme, Dataset, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_pop: usize,
    pub n_study: usize,
    pub m: usize,
    pub c: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub sigma_g2: f64,
    pub sigma_c2: f64,
    pub balance: f64,
    pub noise_e: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_pop: 200_000,
            n_study: 300,
            m: 300,
            c: 1,
            k: 0.01,
            sigma_g2: 0.25,
            sigma_c2: 0.25,
            balance: 0.5,
            noise_e: 0.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    /// Full-scale protocol values.
    pub fn full_scale() -> Self {
        Self {
            n_pop: 1_000_000,
            n_study: 500,
            m: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.n_study < 2 || self.n_pop < self.n_study {
            return bad(format!(
                "need 2 <= n_study ({}) <= n_pop ({})",
                self.n_study, self.n_pop
            ));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return bad(format!("K = {} must lie in (0, 1)", self.k));
        }
        if !(self.balance > 0.0 && self.balance < 1.0) {
            return bad(format!("balance = {} must lie in (0, 1)", self.balance));
        }
        if self.sigma_g2 < 0.0 || self.sigma_c2 < 0.0 || self.sigma_g2 + self.sigma_c2 >= 1.0 {
            return bad(format!(
                "sigma_g2 = {} and sigma_c2 = {} must be non-negative with sum below 1",
                self.sigma_g2, self.sigma_c2
            ));
        }
        if self.sigma_c2 > 0.0 && self.c == 0 {
            return bad("sigma_c2 > 0 requires c >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_e) {
            return bad(format!("noise_e = {} must lie in [0, 1]", self.noise_e));
        }
        if self.balance == 0.5 && self.n_study % 2 == 1 {
            return bad(format!("n_study = {} must be even for a balanced design", self.n_study));
        }
        let expected_cases = self.k * self.n_pop as f64;
        if expected_cases < self.n_cases() as f64 {
            log::warn!(
                "population of {} expects {expected_cases:.0} cases, study needs {}",
                self.n_pop,
                self.n_cases()
            );
        }
        Ok(())
    }

    pub fn n_cases(&self) -> usize {
        (self.n_study as f64 * self.balance).round() as usize
    }

    pub fn scheme(&self) -> Result<AscertainmentScheme> {
        if self.k == self.balance {
            Ok(AscertainmentScheme::unascertained(self.k))
        } else {
            AscertainmentScheme::new(self.k, self.balance)
        }
    }
}

/// A simulated study with its generative truth.
#[derive(Debug, Clone)]
pub struct SimStudy {
    pub dataset: Dataset,
    pub true_params: ModelParams,
    pub scheme: AscertainmentScheme,
    /// Random effects `b`.
    pub b: Array1<f64>,
    pub true_freqs: Vec<f64>,
    /// Frequencies used to standardize the estimation-side `Z`.
    pub est_freqs: Vec<f64>,
    /// Liability cutoff in the population.
    pub threshold: f64,
    pub population_cases: usize,
    /// Population row of each sampled unit.
    pub rows: Vec<usize>,
}

/// Multiplies every frequency by `r ~ U(1/(1+e), 1+e)` and clips to `(0.001, 0.999)`.
pub fn apply_standardization_noise<R: Rng + ?Sized>(freqs: &[f64], e: f64, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = (1.0 / (1.0 + e), 1.0 + e);
    freqs
        .iter()
        .map(|&f| {
            let u: f64 = rng.random();
            (f * (lo + u * (hi - lo))).clamp(0.001, 0.999)
        })
        .collect()
}

/// Seed for replication `rep` derived from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, rep: u64) -> u64 {
    let mut z = master ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Generator<'a> {
    seed: u64,
    freqs: &'a [f64],
    sd: Vec<f64>,
    b: &'a Array1<f64>,
    beta: &'a Array1<f64>,
    eps: Normal<f64>,
}

impl Generator<'_> {
    /// Draws row `row`, filling raw genotypes and covariates, returning the liability.
    fn row(&self, row: usize, z: &mut [f64], x: &mut [f64]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(row as u64 + 1);
        let mut g = 0.0;
        for (j, zj) in z.iter_mut().enumerate() {
            let f = self.freqs[j];
            let a = (rng.random::<f64>() < f) as u8 + (rng.random::<f64>() < f) as u8;
            *zj = a as f64;
            g += (*zj - 2.0 * f) / self.sd[j] * self.b[j];
        }
        let mut xb = 0.0;
        for (k, xk) in x.iter_mut().enumerate() {
            *xk = StandardNormal.sample(&mut rng);
            xb += *xk * self.beta[k];
        }
        g + xb + self.eps.sample(&mut rng)
    }
}

pub fn simulate_study(cfg: &SimConfig) -> Result<SimStudy> {
    cfg.validate()?;
    let (m, c) = (cfg.m, cfg.c);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let true_freqs: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
    let b_dist = Normal::new(0.0, (cfg.sigma_g2 / m as f64).sqrt()).expect("finite sd");
    let b = Array1::from_iter((0..m).map(|_| b_dist.sample(&mut rng)));
    let beta_dist = Normal::new(0.0, (cfg.sigma_c2 / c.max(1) as f64).sqrt()).expect("finite sd");
    let beta = Array1::from_iter((0..c).map(|_| beta_dist.sample(&mut rng)));
    let est_freqs = apply_standardization_noise(&true_freqs, cfg.noise_e, &mut rng);

    let gen = Generator {
        seed: cfg.seed,
        freqs: &true_freqs,
        sd: true_freqs.iter().map(|f| (2.0 * f * (1.0 - f)).sqrt()).collect(),
        b: &b,
        beta: &beta,
        eps: Normal::new(0.0, (1.0 - cfg.sigma_g2 - cfg.sigma_c2).sqrt()).expect("finite sd"),
    };
    let liab: Vec<f64> = (0..cfg.n_pop)
        .into_par_iter()
        .map_init(|| (vec![0.0; m], vec![0.0; c]), |(z, x), p| gen.row(p, z, x))
        .collect();

    let pop_cases = (cfg.k * cfg.n_pop as f64).round() as usize;
    if pop_cases == 0 || pop_cases >= cfg.n_pop {
        return Err(Error::Config(format!("K = {} leaves no cases or no controls", cfg.k)));
    }
    let mut sorted = liab.clone();
    let cut = cfg.n_pop - pop_cases - 1;
    let (_, &mut threshold, _) = sorted.select_nth_unstable_by(cut, f64::total_cmp);
    let case_rows: Vec<usize> = (0..cfg.n_pop).filter(|&p| liab[p] > threshold).collect();
    let control_rows: Vec<usize> = (0..cfg.n_pop).filter(|&p| liab[p] <= threshold).collect();

    let need_cases = cfg.n_cases();
    let need_controls = cfg.n_study - need_cases;
    if case_rows.len() < need_cases {
        return Err(Error::Shortfall {
            label: "cases",
            available: case_rows.len(),
            required: need_cases,
        });
    }
    if control_rows.len() < need_controls {
        return Err(Error::Shortfall {
            label: "controls",
            available: control_rows.len(),
            required: need_controls,
        });
    }
    let mut rows: Vec<usize> = index::sample(&mut rng, case_rows.len(), need_cases)
        .into_iter()
        .map(|i| case_rows[i])
        .chain(
            index::sample(&mut rng, control_rows.len(), need_controls)
                .into_iter()
                .map(|i| control_rows[i]),
        )
        .collect();
    rows.sort_unstable();

    let n = rows.len();
    let mut zraw = Array2::zeros((n, m));
    let mut x = Array2::zeros((n, c));
    let mut y = Vec::with_capacity(n);
    let (mut zbuf, mut xbuf) = (vec![0.0; m], vec![0.0; c]);
    for (i, &p) in rows.iter().enumerate() {
        let l = gen.row(p, &mut zbuf, &mut xbuf);
        debug_assert_eq!(l, liab[p]);
        zraw.row_mut(i).assign(&ndarray::ArrayView1::from(&zbuf));
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&xbuf));
        y.push((l > threshold) as u8);
    }
    let z = standardize_columns(zraw.view(), Some(&est_freqs))?;
    let dataset = Dataset::new(x, z, y)?;
    let true_params = ModelParams::new(cfg.sigma_g2, beta, cfg.sigma_c2, cfg.k, dataset.x())?;
    Ok(SimStudy {
        dataset,
        true_params,
        scheme: cfg.scheme()?,
        b,
        true_freqs,
        est_freqs,
        threshold,
        population_cases: case_rows.len(),
        rows,
    })
}
