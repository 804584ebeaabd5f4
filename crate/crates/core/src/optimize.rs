//! Bounded scalar maximization: a coarse grid, then Brent's
//! golden-section/parabolic search on the bracket around the best probe.

use serde::Serialize;

use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 9;
const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalarMax {
    pub x: f64,
    pub f: f64,
    pub evals: usize,
    /// The maximizer sits on `lo` or `hi` (within tolerance).
    pub at_boundary: bool,
}

/// Upper bound on evaluations for an interval and tolerance.
pub fn eval_budget(lo: f64, hi: f64, tol: f64) -> usize {
    let golden_steps = (((hi - lo) / tol).ln() / (1.0 / 0.618f64).ln()).ceil().max(0.0) as usize;
    GRID_POINTS + golden_steps + 20
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(f64) -> f64> Counted<F> {
    fn call(&mut self, x: f64) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Maximizes `f` on `[lo, hi]`. Non-finite values count as `−∞`.
pub fn maximize_scalar<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<ScalarMax>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "invalid search interval [{lo}, {hi}] with tol {tol}"
        )));
    }
    let budget = eval_budget(lo, hi, tol);
    let mut f = Counted { f, evals: 0 };

    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| if i == GRID_POINTS - 1 { hi } else { lo + step * i as f64 })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| f.call(x)).collect();
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    let Some(ib) = best else {
        return Err(Error::NonFiniteObjective);
    };

    let mut a = grid[ib.saturating_sub(1)];
    let mut b = grid[(ib + 1).min(GRID_POINTS - 1)];

    // Brent minimization of −f on [a, b], seeded at the best grid point.
    let (mut x, mut w, mut v) = (grid[ib], grid[ib], grid[ib]);
    let (mut fx, mut fw, mut fv) = (-values[ib], -values[ib], -values[ib]);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let tol1 = tol / 3.0;
    let tol2 = 2.0 * tol1;
    while f.evals < budget {
        let xm = 0.5 * (a + b);
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if q != 0.0 && p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let u = u.clamp(lo, hi);
        let fu = -f.call(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Ok(ScalarMax {
        x,
        f: -fx,
        evals: f.evals,
        at_boundary: x - lo <= tol || hi - x <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic() {
        let r = maximize_scalar(|t| -(t - 0.3) * (t - 0.3), 0.0, 1.0, 1e-4).unwrap();
        assert!((r.x - 0.3).abs() <= 1e-4);
        assert!(!r.at_boundary);
        assert!(r.evals <= eval_budget(0.0, 1.0, 1e-4));
    }

    #[test]
    fn kink() {
        let r = maximize_scalar(|t: f64| -(t - 0.25).abs(), 0.0, 1.0, 1e-4).unwrap();
        assert!((r.x - 0.25).abs() <= 1e-3);
    }

    #[test]
    fn boundary_flagged() {
        let r = maximize_scalar(|t| t, 1e-4, 0.7, 1e-4).unwrap();
        assert!(r.at_boundary);
        assert!((r.x - 0.7).abs() <= 1e-4);
        let r = maximize_scalar(|t| -t, 1e-4, 0.7, 1e-4).unwrap();
        assert!(r.at_boundary && r.x <= 2e-4);
    }

    #[test]
    fn non_finite_probes_excluded() {
        let r = maximize_scalar(|t| if t > 0.5 { f64::NAN } else { -(t - 0.2).powi(2) }, 0.0, 1.0, 1e-4).unwrap();
        assert!((r.x - 0.2).abs() <= 1e-4);
        assert!(matches!(
            maximize_scalar(|_| f64::NEG_INFINITY, 0.0, 1.0, 1e-4),
            Err(Error::NonFiniteObjective)
        ));
    }

    proptest! {
        #[test]
        fn stays_in_bounds_and_finds_unimodal_max(c in 0.0f64..1.0, s in 0.1f64..50.0, lo in -1.0f64..0.0) {
            let hi = lo + 1.5;
            let r = maximize_scalar(|t| -s * (t - c).powi(2), lo, hi, 1e-4).unwrap();
            prop_assert!(r.x >= lo && r.x <= hi);
            prop_assert!((r.x - c.clamp(lo, hi)).abs() <= 1e-4);
            prop_assert!(r.evals <= eval_budget(lo, hi, 1e-4));
            let again = maximize_scalar(|t| -s * (t - c).powi(2), lo, hi, 1e-4).unwrap();
            prop_assert_eq!(r.x, again.x);
        }
    }
}
