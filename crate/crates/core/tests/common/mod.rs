//! Brute-force reference computations shared by the integration tests and the
//! acceptance harness. Nothing here calls into the estimators; the only shared
//! numerics are the scalar normal CDF and survival function.

#![allow(dead_code)]

use ascep::normal;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Half-width of the whitened integration box.
const BOX: f64 = 9.0;

pub const DEFAULT_NODES: usize = 201;

/// A small liability-threshold problem: latent covariance `θG`, residual
/// variance `σ_ε²`, cutoffs `t` and outcomes `y`.
#[derive(Debug, Clone)]
pub struct SmallProblem {
    pub g: Vec<Vec<f64>>,
    pub theta: f64,
    pub t: Vec<f64>,
    pub sigma_eps2: f64,
    pub y: Vec<u8>,
}

impl SmallProblem {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Lower factor of a positive semidefinite matrix; zero pivots give zero columns.
fn psd_cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, String> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d < -1e-12 * scale {
            return Err(format!("covariance not positive semidefinite at pivot {j}"));
        }
        if d <= 1e-14 * scale {
            continue;
        }
        let root = d.sqrt();
        l[j][j] = root;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / root;
        }
    }
    Ok(l)
}

fn std_normal_density(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Trapezoid nodes and weights for `∫ φ(u) f(u) du` on `[−BOX, BOX]`.
fn grid(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * BOX / (nodes - 1) as f64;
    let u: Vec<f64> = (0..nodes).map(|k| -BOX + h * k as f64).collect();
    let w = u
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let end = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
            end * h * std_normal_density(x)
        })
        .collect();
    (u, w)
}

/// `∫ N(g; 0, θG) Πᵢ P(yᵢ|gᵢ) dg` and, when `weights = Some((s1, s0))`, the
/// sampled integral `∫ N(g; 0, θG) Πᵢ [s0 + (s1 − s0) Φᵢ(gᵢ)] dg`.
pub fn quadrature_integrals(p: &SmallProblem, weights: Option<(f64, f64)>, nodes: usize) -> Result<(f64, f64), String> {
    let n = p.n();
    if n == 0 || n > 3 {
        return Err(format!("quadrature supports 1 to 3 units, got {n}"));
    }
    let cov: Vec<Vec<f64>> = p.g.iter().map(|r| r.iter().map(|v| v * p.theta).collect()).collect();
    let l = psd_cholesky(&cov)?;
    let (u, w) = grid(nodes);
    let se = p.sigma_eps2.sqrt();
    let (s1, s0) = weights.unwrap_or((1.0, 1.0));

    // Recursive tensor product over the whitened coordinates.
    fn level(
        i: usize,
        acc: &[f64; 3],
        ctx: &(&SmallProblem, &Vec<Vec<f64>>, &Vec<f64>, &Vec<f64>, f64, f64, f64),
    ) -> (f64, f64) {
        let (p, l, u, w, se, s1, s0) = *ctx;
        let n = p.n();
        let mut num = 0.0;
        let mut den = 0.0;
        for (&uk, &wk) in u.iter().zip(w.iter()) {
            let mut next = *acc;
            for r in i..n {
                next[r] += l[r][i] * uk;
            }
            let z = (next[i] - p.t[i]) / se;
            let (f, d) = if p.y[i] == 1 {
                let pc = normal::cdf(z);
                (pc, s0 + (s1 - s0) * pc)
            } else {
                let ps = normal::sf(z);
                (ps, s1 - (s1 - s0) * ps)
            };
            if i + 1 == n {
                num += wk * f;
                den += wk * d;
            } else {
                let (a, b) = level(i + 1, &next, ctx);
                num += wk * f * a;
                den += wk * d * b;
            }
        }
        (num, den)
    }
    let ctx = (p, &l, &u, &w, se, s1, s0);
    Ok(level(0, &[0.0; 3], &ctx))
}

/// Exact likelihood of `p.y`. With `weights`, the ascertained likelihood
/// `Πᵢ s_{yᵢ} · numerator / sampled integral`.
pub fn quadrature_likelihood(p: &SmallProblem, weights: Option<(f64, f64)>, nodes: usize) -> Result<f64, String> {
    let (num, den) = quadrature_integrals(p, weights, nodes)?;
    match weights {
        None => Ok(num),
        Some((s1, s0)) => {
            let prod: f64 = p.y.iter().map(|&y| if y == 1 { s1 } else { s0 }).product();
            Ok(prod * num / den)
        }
    }
}

/// Likelihood at `DEFAULT_NODES` and the relative change when the node count
/// is doubled.
pub fn quadrature_checked(p: &SmallProblem, weights: Option<(f64, f64)>) -> Result<(f64, f64), String> {
    let a = quadrature_likelihood(p, weights, DEFAULT_NODES)?;
    let b = quadrature_likelihood(p, weights, 2 * DEFAULT_NODES - 1)?;
    Ok((b, ((a - b) / b).abs()))
}

/// Monte Carlo estimate of `P(yᵢ = a, yⱼ = b | both sampled)` for unit-variance
/// liabilities with correlation `rho`, thresholded at `Φ⁻¹(1 − K)`.
#[derive(Debug, Clone, Copy)]
pub struct PairMoments {
    /// Indexed `[a][b]`.
    pub p: [[f64; 2]; 2],
    pub se: [[f64; 2]; 2],
}

fn upper_cut(k: f64) -> f64 {
    // Bisection on the survival function; slow but independent of the
    // library quantile.
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal::sf(mid) > k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

struct Draws {
    z1: Vec<f64>,
    z2: Vec<f64>,
}

fn draws(n: usize, seed: u64) -> Draws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    for _ in 0..n {
        z1.push(StandardNormal.sample(&mut rng));
        z2.push(StandardNormal.sample(&mut rng));
    }
    Draws { z1, z2 }
}

/// Per-draw cell indices and sampling weights `s_a s_b` at one correlation.
fn cells(d: &Draws, rho: f64, ti: f64, tj: f64, s1: f64, s0: f64) -> Vec<(usize, usize, f64)> {
    let c = (1.0 - rho * rho).sqrt();
    d.z1.iter()
        .zip(&d.z2)
        .map(|(&a, &b)| {
            let li = a;
            let lj = rho * a + c * b;
            let yi = (li > ti) as usize;
            let yj = (lj > tj) as usize;
            let w = [s0, s1][yi] * [s0, s1][yj];
            (yi, yj, w)
        })
        .collect()
}

fn ratio_moments(cs: &[(usize, usize, f64)]) -> ([[f64; 2]; 2], f64) {
    let total: f64 = cs.iter().map(|c| c.2).sum();
    let mut p = [[0.0; 2]; 2];
    for &(a, b, w) in cs {
        p[a][b] += w;
    }
    for row in &mut p {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    (p, total)
}

pub fn mc_pair_moment(rho: f64, k_i: f64, k_j: f64, s1: f64, s0: f64, n_draws: usize, seed: u64) -> PairMoments {
    assert!(n_draws >= 100_000, "at least 1e5 draws");
    let d = draws(n_draws, seed);
    let cs = cells(&d, rho, upper_cut(k_i), upper_cut(k_j), s1, s0);
    let (p, total) = ratio_moments(&cs);
    let mut se = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let r = p[a][b];
            let ss: f64 = cs
                .iter()
                .map(|&(x, y, w)| {
                    let hit = (x == a && y == b) as u8 as f64;
                    let e = w * (hit - r);
                    e * e
                })
                .sum();
            se[a][b] = ss.sqrt() / total;
        }
    }
    PairMoments { p, se }
}

/// Central finite difference in `rho` of the Monte Carlo cell probabilities,
/// with common random numbers on both sides, and its standard error.
pub fn mc_pair_slope(
    rho: f64,
    delta: f64,
    k_i: f64,
    k_j: f64,
    s1: f64,
    s0: f64,
    n_draws: usize,
    seed: u64,
) -> PairMoments {
    assert!(n_draws >= 100_000, "at least 1e5 draws");
    let d = draws(n_draws, seed);
    let (ti, tj) = (upper_cut(k_i), upper_cut(k_j));
    let up = cells(&d, rho + delta, ti, tj, s1, s0);
    let dn = cells(&d, rho - delta, ti, tj, s1, s0);
    let (pu, tu) = ratio_moments(&up);
    let (pd, td) = ratio_moments(&dn);
    let mut p = [[0.0; 2]; 2];
    let mut se = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            p[a][b] = (pu[a][b] - pd[a][b]) / (2.0 * delta);
            let ss: f64 = up
                .iter()
                .zip(&dn)
                .map(|(&(x, y, w), &(x2, y2, w2))| {
                    let hu = (x == a && y == b) as u8 as f64;
                    let hd = (x2 == a && y2 == b) as u8 as f64;
                    let e = (w * (hu - pu[a][b]) / tu - w2 * (hd - pd[a][b]) / td) / (2.0 * delta);
                    e * e
                })
                .sum();
            se[a][b] = ss.sqrt();
        }
    }
    PairMoments { p, se }
}

/// A random problem with up to three units, paired with the library inputs
/// describing the same model.
pub struct Instance {
    pub problem: SmallProblem,
    pub kernel: ascep::Kernel,
    pub params: ascep::ModelParams,
    pub scheme: ascep::AscertainmentScheme,
}

pub fn random_instance(seed: u64, n: usize) -> Instance {
    use ndarray::{Array1, Array2};
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 20;
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = z[i].iter().zip(&z[j]).map(|(x, y)| x * y).sum::<f64>() / m as f64;
        }
    }
    let g: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (a[i][i] * a[j][j]).sqrt()).collect())
        .collect();
    let theta = rng.random_range(0.05..0.8);
    let k = rng.random_range(0.05..0.5);
    let p = rng.random_range(0.3..0.7);
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    let x = Array2::<f64>::zeros((n, 0));
    let params = ascep::ModelParams::new(theta, Array1::zeros(0), 0.0, k, x.view()).unwrap();
    let kernel = ascep::Kernel::from_matrix(Array2::from_shape_fn((n, n), |(i, j)| g[i][j])).unwrap();
    let scheme = ascep::AscertainmentScheme::new(k, p).unwrap();
    let problem = SmallProblem {
        g,
        theta,
        t: params.t.to_vec(),
        sigma_eps2: params.sigma_eps2,
        y,
    };
    Instance {
        problem,
        kernel,
        params,
        scheme,
    }
}

impl Instance {
    /// The same instance at a different θ.
    pub fn at_theta(&self, theta: f64) -> Instance {
        let params = self.params.with_theta(theta).unwrap();
        let problem = SmallProblem {
            theta,
            sigma_eps2: params.sigma_eps2,
            ..self.problem.clone()
        };
        Instance {
            problem,
            kernel: self.kernel.clone(),
            params,
            scheme: self.scheme,
        }
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.scheme.s1, self.scheme.s0)
    }
}

/// Probit maximum likelihood by Newton's method on the observed information.
/// `w` rows include any intercept column.
pub fn probit_mle(w: &[Vec<f64>], y: &[u8]) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let p = w[0].len();
    let mut b = DVector::<f64>::zeros(p);
    for _ in 0..100 {
        let mut score = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for (row, &yi) in w.iter().zip(y) {
            let eta: f64 = row.iter().zip(b.iter()).map(|(a, c)| a * c).sum();
            let lam = if yi == 1 {
                std_normal_density(eta) / normal::cdf(eta)
            } else {
                -std_normal_density(eta) / normal::sf(eta)
            };
            let curv = lam * (lam + eta);
            for a in 0..p {
                score[a] += lam * row[a];
                for c in 0..p {
                    info[(a, c)] += curv * row[a] * row[c];
                }
            }
        }
        let step = info.lu().solve(&score).expect("singular probit information");
        b += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    b.iter().copied().collect()
}
