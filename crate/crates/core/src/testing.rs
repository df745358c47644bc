//! Helpers shared by unit tests: a central finite-difference oracle and
//! random well-conditioned inputs.

use crate::rng::{Purpose, RngStream};

/// Central differences of `f` at `x` with step `h`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn uniform_vec(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut s = RngStream::new(seed).substream(Purpose::Test, 0, 0);
    (0..n).map(|_| s.uniform(lo, hi)).collect()
}

/// `B Bᵀ + k·I` for uniform `B`: symmetric, eigenvalues bounded away from 0.
pub fn random_spd(seed: u64, k: usize) -> Vec<f64> {
    let b = uniform_vec(seed, k * k, -1.0, 1.0);
    let mut s = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            s[i * k + j] = (0..k).map(|p| b[i * k + p] * b[j * k + p]).sum::<f64>();
        }
        s[i * k + i] += k as f64;
    }
    s
}
