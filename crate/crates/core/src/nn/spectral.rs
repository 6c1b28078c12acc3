//! Spectral normalization by power iteration.
//!
//! A weight tensor is viewed as a `rows × cols` matrix (output channels by
//! flattened receptive field). Persistent left/right singular vector
//! estimates are refined by power iteration and the weight is divided by the
//! estimated top singular value `σ = uᵀ W v`.

use super::tensor::Real;

/// Persistent power-iteration state for one weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerState<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
}

fn normalize<T: Real>(x: &mut [T]) -> T {
    let norm = x.iter().map(|&a| a * a).sum::<T>().sqrt();
    if norm > T::zero() {
        x.iter_mut().for_each(|a| *a = *a / norm);
    }
    norm
}

/// Run `iters` rounds of `v ← Wᵀu/‖Wᵀu‖`, `u ← Wv/‖Wv‖`.
///
/// A zero matrix leaves the vectors untouched.
pub fn power_iterate<T: Real>(w: &[T], rows: usize, cols: usize, u: &mut [T], v: &mut [T], iters: usize) {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(u.len(), rows);
    assert_eq!(v.len(), cols);
    let mut wtu = vec![T::zero(); cols];
    let mut wv = vec![T::zero(); rows];
    for _ in 0..iters {
        wtu.iter_mut().for_each(|a| *a = T::zero());
        for (r, &ur) in u.iter().enumerate() {
            for (acc, &wrc) in wtu.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *acc += wrc * ur;
            }
        }
        if normalize(&mut wtu) == T::zero() {
            return;
        }
        v.copy_from_slice(&wtu);
        for (r, out) in wv.iter_mut().enumerate() {
            *out = w[r * cols..(r + 1) * cols]
                .iter()
                .zip(v.iter())
                .map(|(&a, &b)| a * b)
                .sum();
        }
        if normalize(&mut wv) == T::zero() {
            return;
        }
        u.copy_from_slice(&wv);
    }
}

/// `uᵀ W v` for the current vectors.
pub fn sigma<T: Real>(w: &[T], rows: usize, cols: usize, u: &[T], v: &[T]) -> T {
    let mut total = T::zero();
    for r in 0..rows {
        let row: T = w[r * cols..(r + 1) * cols]
            .iter()
            .zip(v)
            .map(|(&a, &b)| a * b)
            .sum();
        total += u[r] * row;
    }
    total
}

/// Refine `state` by `iters` power iterations and return `W / σ`.
///
/// A zero weight matrix is returned unchanged.
pub fn spectral_normalize<T: Real>(
    w: &[T],
    rows: usize,
    cols: usize,
    state: &mut PowerState<T>,
    iters: usize,
) -> Vec<T> {
    assert!(iters >= 1, "spectral normalization needs at least one power iteration");
    power_iterate(w, rows, cols, &mut state.u, &mut state.v, iters);
    let s = sigma(w, rows, cols, &state.u, &state.v);
    if s == T::zero() {
        return w.to_vec();
    }
    w.iter().map(|&a| a / s).collect()
}

/// Gradient of `W / σ(W)` with the singular vectors held fixed:
/// `dL/dW = (G − ⟨G, W/σ⟩ u vᵀ) / σ`.
pub fn normalized_weight_grad<T: Real>(
    grad_eff: &[T],
    w_eff: &[T],
    sigma: T,
    u: &[T],
    v: &[T],
) -> Vec<T> {
    if sigma == T::zero() {
        return grad_eff.to_vec();
    }
    let inner: T = grad_eff.iter().zip(w_eff).map(|(&g, &w)| g * w).sum();
    let cols = v.len();
    grad_eff
        .iter()
        .enumerate()
        .map(|(idx, &g)| (g - inner * u[idx / cols] * v[idx % cols]) / sigma)
        .collect()
}
