//! Dense lower-triangular Cholesky machinery on row-major `ndarray` storage.
//!
//! The leave-one-out jackknife needs the factor of a matrix with one row and
//! column removed. Deleting row/column `k` from `L` leaves the trailing block
//! needing a rank-one *update* `L₃₃L₃₃ᵀ + l₃₂l₃₂ᵀ`, restored with Givens
//! rotations in `O((n−k)²)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("cholesky of {}x{}", n, a.ncols())));
    }
    let mut l = a.as_standard_layout().into_owned();
    cholesky_in_place(&mut l)?;
    Ok(l)
}

/// Overwrites the lower triangle of `a` with its Cholesky factor and zeroes the
/// strict upper triangle.
pub fn cholesky_in_place(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    if !a.is_standard_layout() {
        *a = a.as_standard_layout().into_owned();
    }
    let data = a.as_slice_mut().expect("standard layout");
    for j in 0..n {
        let (head, tail) = data.split_at_mut(j * n);
        let row_j = &mut tail[..n];
        // Row j left of the diagonal: L[j,k] = (A[j,k] - <L[j,:k], L[k,:k]>) / L[k,k]
        for k in 0..j {
            let row_k = &head[k * n..k * n + k];
            let dot: f64 = row_j[..k].iter().zip(row_k).map(|(a, b)| a * b).sum();
            row_j[k] = (row_j[k] - dot) / head[k * n + k];
        }
        let sq: f64 = row_j[..j].iter().map(|v| v * v).sum();
        let d = row_j[j] - sq;
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        row_j[j] = d.sqrt();
        for v in &mut row_j[j + 1..] {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Solves `L x = b` in place.
pub fn solve_lower_in_place(l: ArrayView2<'_, f64>, b: &mut [f64]) {
    let n = l.nrows();
    let l = l.as_standard_layout();
    let data = l.as_slice().expect("standard layout");
    for i in 0..n {
        let row = &data[i * n..i * n + i];
        let dot: f64 = row.iter().zip(&b[..i]).map(|(a, c)| a * c).sum();
        b[i] = (b[i] - dot) / data[i * n + i];
    }
}

/// Solves `L X = B` for a matrix right-hand side, overwriting `b`.
pub fn solve_lower_matrix_in_place(l: ArrayView2<'_, f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    let cols = b.ncols();
    let l = l.as_standard_layout();
    let ld = l.as_slice().expect("standard layout");
    let bd = b.as_slice_mut().expect("standard layout");
    for i in 0..n {
        let lii = ld[i * n + i];
        let (done, rest) = bd.split_at_mut(i * cols);
        let row_i = &mut rest[..cols];
        for k in 0..i {
            let lik = ld[i * n + k];
            if lik == 0.0 {
                continue;
            }
            let row_k = &done[k * cols..(k + 1) * cols];
            for (r, v) in row_i.iter_mut().zip(row_k) {
                *r -= lik * v;
            }
        }
        for r in row_i.iter_mut() {
            *r /= lii;
        }
    }
}

/// `Σ log L_ii`, i.e. half the log-determinant of `L Lᵀ`.
pub fn half_log_det(l: ArrayView2<'_, f64>) -> f64 {
    l.diag().iter().map(|v| v.ln()).sum()
}

/// In-place rank-one update: replaces `L` by the factor of `L Lᵀ + x xᵀ`.
/// `x` is consumed as scratch.
pub fn rank_one_update(l: &mut Array2<f64>, x: &mut [f64]) -> Result<()> {
    let n = l.nrows();
    let data = l.as_slice_mut().expect("standard layout");
    for k in 0..n {
        let lkk = data[k * n + k];
        let xk = x[k];
        if xk == 0.0 {
            continue;
        }
        let r = lkk.hypot(xk);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: k });
        }
        let (c, s) = (r / lkk, xk / lkk);
        data[k * n + k] = r;
        for i in k + 1..n {
            let lik = (data[i * n + k] + s * x[i]) / c;
            x[i] = c * x[i] - s * lik;
            data[i * n + k] = lik;
        }
    }
    Ok(())
}

/// Cholesky factor of `A` with row and column `k` deleted, computed from the
/// factor `L` of `A` by Givens rotations rather than refactorization.
pub fn delete_row_col(l: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>> {
    let n = l.nrows();
    assert!(k < n, "row {k} out of range for order {n}");
    let l = l.as_standard_layout();
    let src = l.as_slice().expect("standard layout");
    let m = n - 1;
    let mut out = Array2::zeros((m, m));
    {
        let dst = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            if i == k {
                continue;
            }
            let ri = if i < k { i } else { i - 1 };
            let upto = (i + 1).min(n);
            for j in 0..upto {
                if j == k {
                    continue;
                }
                let rj = if j < k { j } else { j - 1 };
                dst[ri * m + rj] = src[i * n + j];
            }
        }
    }
    if k == m {
        return Ok(out);
    }
    // Column k below the diagonal feeds a rank-one update of the trailing block.
    let mut x: Vec<f64> = (k + 1..n).map(|i| src[i * n + k]).collect();
    let p = m - k;
    let dst = out.as_slice_mut().expect("standard layout");
    for a in 0..p {
        let kk = (k + a) * m + (k + a);
        let lkk = dst[kk];
        let xa = x[a];
        if xa == 0.0 {
            continue;
        }
        let r = lkk.hypot(xa);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: k + a });
        }
        let (c, s) = (r / lkk, xa / lkk);
        dst[kk] = r;
        for b in a + 1..p {
            let idx = (k + b) * m + (k + a);
            let lik = (dst[idx] + s * x[b]) / c;
            x[b] = c * x[b] - s * lik;
            dst[idx] = lik;
        }
    }
    Ok(out)
}

/// `Lᵀ` solve: `Lᵀ x = b` in place.
pub fn solve_upper_transpose_in_place(l: ArrayView2<'_, f64>, b: &mut [f64]) {
    let n = l.nrows();
    let l = l.as_standard_layout();
    let data = l.as_slice().expect("standard layout");
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= data[k * n + i] * b[k];
        }
        b[i] = v / data[i * n + i];
    }
}

/// Solves the SPD system `A x = b` given its factor.
pub fn cholesky_solve(l: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut x = b.to_vec();
    solve_lower_in_place(l, &mut x);
    solve_upper_transpose_in_place(l, &mut x);
    Array1::from(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n + 3), |_| rng.random::<f64>() - 0.5);
        a.dot(&a.t()) + Array2::<f64>::eye(n) * 0.1
    }

    fn frob(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).mapv(|v| v * v).sum().sqrt()
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = random_spd(12, 1);
        let l = cholesky(a.view()).unwrap();
        assert!(frob(&l.dot(&l.t()), &a) < 1e-12);
        assert!(l[[0, 5]] == 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = ndarray::array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            cholesky(a.view()),
            Err(Error::NotPositiveDefinite { pivot: 1 })
        ));
    }

    #[test]
    fn deletion_matches_refactorization_every_position() {
        let a = random_spd(9, 2);
        let l = cholesky(a.view()).unwrap();
        for k in 0..9 {
            let keep: Vec<usize> = (0..9).filter(|&j| j != k).collect();
            let reduced = a.select(Axis(0), &keep).select(Axis(1), &keep);
            let direct = cholesky(reduced.view()).unwrap();
            let givens = delete_row_col(l.view(), k).unwrap();
            assert!(frob(&direct, &givens) < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn rank_one_update_matches_refactorization() {
        let a = random_spd(7, 3);
        let mut l = cholesky(a.view()).unwrap();
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 0.7).sin()).collect();
        let xa = Array1::from(x.clone());
        let updated = &a + &xa.view().insert_axis(Axis(1)).dot(&xa.view().insert_axis(Axis(0)));
        let mut scratch = x;
        rank_one_update(&mut l, &mut scratch).unwrap();
        assert!(frob(&l, &cholesky(updated.view()).unwrap()) < 1e-12);
    }

    #[test]
    fn solves_round_trip() {
        let a = random_spd(6, 4);
        let l = cholesky(a.view()).unwrap();
        let b = Array1::from(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);
        let x = cholesky_solve(l.view(), b.view());
        let back = a.dot(&x);
        for (u, v) in back.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-10);
        }
        let mut m = Array2::from_shape_fn((6, 2), |(i, j)| (i + j) as f64);
        let orig = m.clone();
        solve_lower_matrix_in_place(l.view(), &mut m);
        assert!(frob(&l.dot(&m), &orig) < 1e-10);
    }
}
