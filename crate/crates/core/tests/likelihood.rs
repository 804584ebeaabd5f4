mod common;

use approx::assert_relative_eq;
use ascep::aep::{aep_fit, aep_ratio, AscertainedSites};
use ascep::ep::{ep_fit, gaussian_probit_integral, run_ep, EpOptions, ProbitSites};
use ascep::{AscertainmentScheme, Kernel};
use common::{quadrature_likelihood, random_instance, DEFAULT_NODES};
use ndarray::{array, Array2};

#[test]
fn ep_evidence_tracks_exact_likelihood_for_tiny_problems() {
    for seed in 0..24u64 {
        let n = 1 + (seed % 3) as usize;
        let inst = random_instance(seed, n);
        let st = ep_fit(&inst.kernel, &inst.params, &inst.problem.y, &EpOptions::default(), None).unwrap();
        let exact = quadrature_likelihood(&inst.problem, None, DEFAULT_NODES).unwrap().ln();
        assert!(
            (st.log_evidence - exact).abs() < 1e-3,
            "seed {seed} n {n}: EP {} vs exact {exact}",
            st.log_evidence
        );
    }
}

#[test]
fn single_unit_ep_is_exact() {
    for seed in 40..46u64 {
        let inst = random_instance(seed, 1);
        let st = ep_fit(&inst.kernel, &inst.params, &inst.problem.y, &EpOptions::default(), None).unwrap();
        let exact = quadrature_likelihood(&inst.problem, None, DEFAULT_NODES).unwrap().ln();
        assert!((st.log_evidence - exact).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn aep_is_exact_for_unrelated_units() {
    let grid = [0.1, 0.4, 0.7];
    for seed in 200..206u64 {
        let n = 1 + (seed % 3) as usize;
        let mut base = random_instance(seed, n);
        base.kernel = Kernel::from_matrix(Array2::eye(n)).unwrap();
        base.problem.g = (0..n)
            .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
            .collect();
        for &th in &grid {
            let inst = base.at_theta(th);
            let st = aep_fit(
                &inst.kernel,
                &inst.params,
                &inst.problem.y,
                &inst.scheme,
                &EpOptions::default(),
                None,
            )
            .unwrap();
            let exact = quadrature_likelihood(&inst.problem, Some(inst.weights()), DEFAULT_NODES)
                .unwrap()
                .ln();
            assert!((st.log_evidence - exact).abs() < 1e-8, "seed {seed} θ {th}");
        }
    }
}

/// Sensitivity of a log-likelihood to a small cross-covariance `k₁₂`.
fn slope(f: impl Fn(f64) -> f64, theta: f64) -> f64 {
    let eps = 1e-3;
    (f(eps) - f(-eps)) / (2.0 * eps * theta)
}

#[test]
fn correlation_slopes_match_their_first_order_forms() {
    // For two units with cross-covariance k₁₂ the exact ascertained
    // likelihood moves by k₁₂(n₁n₂ − d₁d₂) and the AEP objective by
    // k₁₂(n₁ − d₁)(n₂ − d₂), where n and d are the cavity-mean derivatives of
    // log P(y, s) and log P(s) at the prior.
    for seed in 220..226u64 {
        let base = random_instance(seed, 2);
        let th = 0.4;
        let inst = base.at_theta(th);
        let y = inst.problem.y.clone();
        let tight = EpOptions {
            tol: 1e-12,
            ..EpOptions::default()
        };
        let with_cov = |eps: f64| {
            let mut i2 = base.at_theta(th);
            i2.kernel = Kernel::from_matrix(array![[1.0, eps], [eps, 1.0]]).unwrap();
            i2.problem.g = vec![vec![1.0, eps], vec![eps, 1.0]];
            i2
        };
        let aep = |eps: f64| {
            let i2 = with_cov(eps);
            aep_fit(&i2.kernel, &i2.params, &y, &i2.scheme, &tight, None)
                .unwrap()
                .log_evidence
        };
        let exact = |eps: f64| {
            let i2 = with_cov(eps);
            quadrature_likelihood(&i2.problem, Some(i2.weights()), DEFAULT_NODES)
                .unwrap()
                .ln()
        };
        let p = &inst.params;
        let r: Vec<_> = (0..2)
            .map(|i| aep_ratio(0.0, th, p.t[i], p.sigma_eps2, y[i], &inst.scheme))
            .collect();
        let q: Vec<_> = (0..2)
            .map(|i| gaussian_probit_integral(0.0, th, p.t[i], p.sigma_eps2, y[i]))
            .collect();
        let d: Vec<f64> = (0..2).map(|i| q[i].d1 - r[i].d1).collect();
        let want_aep = r[0].d1 * r[1].d1;
        let want_exact = q[0].d1 * q[1].d1 - d[0] * d[1];
        assert_relative_eq!(slope(aep, th), want_aep, epsilon = 1e-4, max_relative = 1e-3);
        assert_relative_eq!(slope(exact, th), want_exact, epsilon = 1e-4, max_relative = 1e-3);
    }
}

#[test]
fn aep_without_ascertainment_is_plain_ep() {
    for seed in 300..310u64 {
        let inst = random_instance(seed, 3);
        let flat = AscertainmentScheme::unascertained(0.2);
        let opts = EpOptions::default();
        let k = inst.kernel.matrix() * inst.params.theta;
        let a = run_ep(
            k.view(),
            &AscertainedSites::new(&inst.problem.y, &inst.params, flat),
            &opts,
            None,
        )
        .unwrap();
        let e = run_ep(k.view(), &ProbitSites::new(&inst.problem.y, &inst.params), &opts, None).unwrap();
        assert_eq!(a.sites, e.sites);
        assert_eq!(a.log_evidence.to_bits(), e.log_evidence.to_bits());
    }
}
