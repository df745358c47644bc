use super::ops::transpose_data;
use super::Tensor;
use crate::error::{Error, Result};

/// Relative asymmetry tolerated by [`Tensor::cholesky`] before it symmetrizes.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// `c[m×p] = a[m×n] · b[n×p]`, with `(row_stride, col_stride)` for `a` and
/// `b` so transposed operands need no copy. `c` is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    n: usize,
    p: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    assert!(c.len() >= m * p);
    if m == 0 || p == 0 {
        return;
    }
    if n == 0 {
        c[..m * p].iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (n - 1) * csa);
    assert!(b.len() > (n - 1) * rsb + (p - 1) * csb);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            p,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            p as isize,
            1,
        );
    }
}

/// Unblocked Cholesky–Banachiewicz factorization of a row-major `k×k`
/// matrix, reading only its lower triangle. Returns `L` with `L Lᵀ = s`.
pub fn cholesky_factor(s: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|p| l[i * k + p] * l[j * k + p]).sum();
            let v = s[i * k + j] - dot;
            if i == j {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: v });
                }
                l[i * k + i] = v.sqrt();
            } else {
                l[i * k + j] = v / l[j * k + j];
            }
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
fn lower_inverse(l: &[f64], k: usize) -> Vec<f64> {
    let mut inv = vec![0.0; k * k];
    for col in 0..k {
        for i in col..k {
            let mut v = if i == col { 1.0 } else { 0.0 };
            for p in col..i {
                v -= l[i * k + p] * inv[p * k + col];
            }
            inv[i * k + col] = v / l[i * k + i];
        }
    }
    inv
}

/// Reverse-mode rule for `L = chol(S)`:
/// `Φ = tril(Lᵀ L̄)` with its diagonal halved, `S̄ = L⁻ᵀ Φ L⁻¹`, then
/// symmetrized since only the symmetric part of `S` is read.
pub(super) fn cholesky_backward(l: &[f64], gl: &[f64], k: usize) -> Vec<f64> {
    let mut phi = vec![0.0; k * k];
    gemm(k, k, k, l, (1, k), gl, (k, 1), &mut phi);
    for i in 0..k {
        for j in i + 1..k {
            phi[i * k + j] = 0.0;
        }
        phi[i * k + i] *= 0.5;
    }
    let linv = lower_inverse(l, k);
    let mut tmp = vec![0.0; k * k];
    // L⁻ᵀ Φ
    gemm(k, k, k, &linv, (1, k), &phi, (k, 1), &mut tmp);
    let mut gs = vec![0.0; k * k];
    gemm(k, k, k, &tmp, (k, 1), &linv, (k, 1), &mut gs);
    let gt = transpose_data(&gs, k, k);
    gs.iter().zip(&gt).map(|(a, b)| 0.5 * (a + b)).collect()
}

pub(super) fn pairwise_sq_dist_backward(x: &Tensor, y: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let m = y.shape()[0];
    let (xd, yd) = (x.data(), y.data());
    let mut gx = vec![0.0; n * d];
    let mut gy = vec![0.0; m * d];
    for i in 0..n {
        for j in 0..m {
            let w = 2.0 * g[i * m + j];
            if w == 0.0 {
                continue;
            }
            for c in 0..d {
                let diff = xd[i * d + c] - yd[j * d + c];
                gx[i * d + c] += w * diff;
                gy[j * d + c] -= w * diff;
            }
        }
    }
    (gx, gy)
}

impl Tensor {
    /// Lower-triangular `R` with positive diagonal and `R Rᵀ = S`.
    ///
    /// The input is symmetrized as `(S + Sᵀ)/2` before factorization; an
    /// asymmetry larger than [`SYMMETRY_TOLERANCE`] (relative to the largest
    /// entry) is rejected as a domain error.
    pub fn cholesky(&self) -> Result<Tensor> {
        let k = self.square_dim("cholesky")?;
        let s = self.data();
        let scale = s.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let mut sym = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let (a, b) = (s[i * k + j], s[j * k + i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::Domain(format!(
                        "cholesky input is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                sym[i * k + j] = 0.5 * (a + b);
            }
        }
        let factor = cholesky_factor(&sym, k)?;
        self.cholesky_node(factor, k)
    }

    /// `log |S|` of a symmetric positive definite matrix, as
    /// `2 Σ log Rⱼⱼ` over its Cholesky factor.
    pub fn logdet_spd(&self) -> Result<Tensor> {
        self.cholesky()?.diag()?.log()?.sum()?.scale(2.0)
    }

    /// `D[i, j] = ‖xᵢ − yⱼ‖²` for row sets `x[n×d]` and `y[m×d]`.
    pub fn pairwise_sq_dist(&self, other: &Tensor) -> Result<Tensor> {
        let (n, d) = self.matrix_dims("pairwise_sq_dist")?;
        let (m, d2) = other.matrix_dims("pairwise_sq_dist")?;
        if d != d2 {
            return Err(Error::dim(format!(
                "pairwise_sq_dist needs equal row widths, got {d} and {d2}"
            )));
        }
        let (xd, yd) = (self.data(), other.data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let xi = &xd[i * d..(i + 1) * d];
            for j in 0..m {
                let yj = &yd[j * d..(j + 1) * d];
                out[i * m + j] = xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
        self.pairwise_node(other, out, n, m)
    }
}
