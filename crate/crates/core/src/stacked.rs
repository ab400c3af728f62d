//! Stacked network vectors `x = (x_1ᵀ, …, x_nᵀ)ᵀ ∈ ℝ^{nd}` and the action of
//! `W̃ = W ⊗ I_d` on them without materializing the Kronecker product.

use nalgebra::{DVector, DVectorView};

use crate::graph::MixingMatrix;

/// Block `i` (length `d`) of a stacked vector.
pub fn block(x: &DVector<f64>, d: usize, i: usize) -> DVectorView<'_, f64> {
    x.rows(i * d, d)
}

pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let d = parts.first().map_or(0, |p| p.len());
    let mut out = DVector::zeros(parts.len() * d);
    for (i, p) in parts.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(p);
    }
    out
}

pub fn unstack(x: &DVector<f64>, d: usize) -> Vec<DVector<f64>> {
    (0..x.len() / d).map(|i| block(x, d, i).into_owned()).collect()
}

/// `(W ⊗ I_d) x`, using only the nonzero pattern of `W`.
pub fn kron_apply(w: &MixingMatrix, d: usize, x: &DVector<f64>) -> DVector<f64> {
    let n = w.n();
    debug_assert_eq!(x.len(), n * d);
    let mut out = DVector::zeros(n * d);
    for i in 0..n {
        let mut acc = out.rows_mut(i * d, d);
        acc.axpy(w.weight(i, i), &x.rows(i * d, d), 1.0);
        for &j in w.graph().neighbors(i) {
            acc.axpy(w.weight(i, j), &x.rows(j * d, d), 1.0);
        }
    }
    out
}

/// Network average `x̄ = (1/n) Σ_i x_i`.
pub fn mean_block(x: &DVector<f64>, d: usize) -> DVector<f64> {
    let n = x.len() / d;
    let mut m = DVector::zeros(d);
    for i in 0..n {
        m += x.rows(i * d, d);
    }
    m / n as f64
}

/// `max_i ‖x_i − x̄‖`.
pub fn consensus_error(x: &DVector<f64>, d: usize) -> f64 {
    let mean = mean_block(x, d);
    (0..x.len() / d)
        .map(|i| (x.rows(i * d, d) - &mean).norm())
        .fold(0.0, f64::max)
}
