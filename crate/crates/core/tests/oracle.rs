mod common;

use approx::assert_relative_eq;
use ascep::normal;
use common::{mc_pair_moment, mc_pair_slope, quadrature_checked, quadrature_likelihood, SmallProblem};

fn problem(g: Vec<Vec<f64>>, theta: f64, y: Vec<u8>) -> SmallProblem {
    let n = y.len();
    SmallProblem {
        g,
        theta,
        t: vec![0.9; n],
        sigma_eps2: 1.0 - theta,
        y,
    }
}

#[test]
fn vanishing_theta_reduces_to_the_probit_term() {
    let p = problem(vec![vec![1.0]], 0.0, vec![1]);
    let v = quadrature_likelihood(&p, None, 201).unwrap();
    assert_relative_eq!(v, normal::sf(0.9), max_relative = 1e-12);
}

#[test]
fn uncorrelated_pair_factorizes() {
    let p = problem(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0.4, vec![1, 0]);
    let joint = quadrature_likelihood(&p, None, 201).unwrap();
    let one = |y| quadrature_likelihood(&problem(vec![vec![1.0]], 0.4, vec![y]), None, 201).unwrap();
    assert_relative_eq!(joint, one(1) * one(0), max_relative = 1e-10);
    // Marginal case probability of unit-variance liability is 1 − Φ(t).
    assert_relative_eq!(one(1), normal::sf(0.9), max_relative = 1e-10);
}

#[test]
fn equal_weights_give_the_unascertained_value() {
    let p = problem(vec![vec![1.0, 0.3], vec![0.3, 1.0]], 0.5, vec![1, 1]);
    let plain = quadrature_likelihood(&p, None, 201).unwrap();
    let weighted = quadrature_likelihood(&p, Some((0.7, 0.7)), 201).unwrap();
    assert_relative_eq!(plain, weighted, max_relative = 1e-12);
}

#[test]
fn doubling_the_grid_changes_little() {
    for seed in 0..3 {
        let inst = common::random_instance(100 + seed, 3);
        let (_, rel) = quadrature_checked(&inst.problem, Some(inst.weights())).unwrap();
        assert!(rel < 1e-8, "seed {seed}: relative change {rel}");
    }
}

#[test]
fn rejects_indefinite_covariance() {
    let p = problem(vec![vec![1.0, 2.0], vec![2.0, 1.0]], 0.5, vec![1, 0]);
    assert!(quadrature_likelihood(&p, None, 51).is_err());
}

#[test]
fn pair_moments_at_zero_correlation_match_the_product_form() {
    let (k, s1, s0) = (0.2, 1.0, 0.4);
    let mc = mc_pair_moment(0.0, k, k, s1, s0, 200_000, 7);
    let w = [s0, s1];
    let km = [1.0 - k, k];
    let b = (s0 * (1.0 - k) + s1 * k).powi(2);
    for a in 0..2 {
        for c in 0..2 {
            let want = w[a] * w[c] * km[a] * km[c] / b;
            assert!(
                (mc.p[a][c] - want).abs() < 3.0 * mc.se[a][c],
                "cell ({a},{c}): {} vs {want} (se {})",
                mc.p[a][c],
                mc.se[a][c]
            );
        }
    }
}

#[test]
fn pair_moments_are_symmetric_for_equal_prevalence() {
    let mc = mc_pair_moment(0.3, 0.25, 0.25, 1.0, 0.5, 200_000, 11);
    assert!((mc.p[0][1] - mc.p[1][0]).abs() < 3.0 * (mc.se[0][1] + mc.se[1][0]));
}

#[test]
fn pair_slope_at_zero_matches_the_first_order_coefficient() {
    let (k, s1, s0) = (0.3, 1.0, 0.5);
    let mc = mc_pair_slope(0.0, 0.05, k, k, s1, s0, 400_000, 3);
    let h = normal::quantile(1.0 - k);
    let pp = normal::pdf(h).powi(2);
    let w = [s0, s1];
    let km = [1.0 - k, k];
    let b0 = (s0 * (1.0 - k) + s1 * k).powi(2);
    let db = pp * (s1 - s0).powi(2);
    for a in 0..2 {
        for c in 0..2 {
            let a0 = km[a] * km[c];
            let da = if a == c { pp } else { -pp };
            let want = w[a] * w[c] * (da * b0 - db * a0) / (b0 * b0);
            assert!(
                (mc.p[a][c] - want).abs() < 3.0 * mc.se[a][c] + 2e-3,
                "cell ({a},{c}): {} vs {want} (se {})",
                mc.p[a][c],
                mc.se[a][c]
            );
        }
    }
}
