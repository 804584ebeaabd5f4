//! Standard bivariate normal CDF.
//!
//! Drezner–Wesolowsky with Genz's double-precision refinements (the `bvnd`
//! routine of TVPACK): Gauss–Legendre quadrature of the Sheppard integrand for
//! `|r| ≤ 0.925`, and an asymptotic expansion plus quadrature near `|r| = 1`.
#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::normal;

const TWO_PI: f64 = 2.0 * PI;

// (weight, abscissa) pairs on [-1, 0]; the routine evaluates at 1 ± x.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705e+00, -0.9324695142031522e+00),
    (0.3607615730481384e+00, -0.6612093864662647e+00),
    (0.4679139345726904e+00, -0.2386191860831970e+00),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191e+00),
    (0.1069393259953183e+00, -0.9041172563704750e+00),
    (0.1600783285433464e+00, -0.7699026741943050e+00),
    (0.2031674267230659e+00, -0.5873179542866171e+00),
    (0.2334925365383547e+00, -0.3678314989981802e+00),
    (0.2491470458134029e+00, -0.1252334085114692e+00),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949e+00),
    (0.4060142980038694e-01, -0.9639719272779138e+00),
    (0.6267204833410906e-01, -0.9122344282513259e+00),
    (0.8327674157670475e-01, -0.8391169718222188e+00),
    (0.1019301198172404e+00, -0.7463319064601508e+00),
    (0.1181945319615184e+00, -0.6360536807265150e+00),
    (0.1316886384491766e+00, -0.5108670019508271e+00),
    (0.1420961093183821e+00, -0.3737060887154196e+00),
    (0.1491729864726037e+00, -0.2277858511416451e+00),
    (0.1527533871307259e+00, -0.7652652113349733e-01),
];

fn rule(r_abs: f64) -> &'static [(f64, f64)] {
    if r_abs < 0.3 {
        &GL6
    } else if r_abs < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// `P(X > dh, Y > dk)` for a standard bivariate normal with correlation `r`.
pub fn upper_orthant(dh: f64, dk: f64, r: f64) -> f64 {
    let (h, mut k) = (dh, dk);
    let mut hk = h * k;
    let quad = rule(r.abs());
    let mut bvn = 0.0;
    if r.abs() <= 0.925 {
        if r != 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = 0.5 * r.asin();
            for &(w, x) in quad {
                for sign in [-1.0, 1.0] {
                    let sn = (asr * (sign * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / TWO_PI;
        }
        return bvn + normal::cdf(-h) * normal::cdf(-k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -0.5 * (b_s / a_s + hk);
        if asr > -100.0 {
            bvn = a * asr.exp() * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if hk > -100.0 {
            let b = b_s.sqrt();
            bvn -= (-0.5 * hk).exp()
                * TWO_PI.sqrt()
                * normal::cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(w, x0) in quad {
            for sign in [-1.0, 1.0] {
                let x = a * (sign * x0 + 1.0);
                let xs = x * x;
                let rs = (1.0 - xs).sqrt();
                let asr = -0.5 * (b_s / xs + hk);
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / TWO_PI;
    }
    if r > 0.0 {
        bvn + normal::cdf(-h.max(k))
    } else {
        let mut v = -bvn;
        if k > h {
            v += if h < 0.0 {
                normal::cdf(k) - normal::cdf(h)
            } else {
                normal::cdf(-h) - normal::cdf(-k)
            };
        }
        v.max(0.0)
    }
}

/// `P(U ≤ h, V ≤ k)` for a standard bivariate normal with correlation `rho`.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("correlation {rho} must satisfy |rho| < 1")));
    }
    Ok(upper_orthant(-h, -k, rho))
}
