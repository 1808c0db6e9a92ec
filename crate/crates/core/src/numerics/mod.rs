//! Dense tensors, a reverse-mode differentiation tape and the seeded PRNG
//! that every other module draws from.

mod graph;
mod rng;
mod tensor;

pub use graph::{grad, Graph, Var};
pub use rng::{gaussian_sample, Rng};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("ragged rows: expected length {expected}, found {found}")]
    RaggedRows { expected: usize, found: usize },
    #[error("gradient requested of non-scalar output with shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("node {0} is not a leaf of the graph")]
    NotALeaf(usize),
    #[error("node {0} does not belong to this graph")]
    UnknownVar(usize),
}

/// Euclidean norm of a slice.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Numerically stable `log Σ exp(v_i)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9); accurate to ~1e-13.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}
