//! Differentiable numerics: dense matrices, a reverse-mode gradient tape
//! over a fixed operation vocabulary, and a finite-difference checker.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{finite_difference, gradient_check};
pub use matrix::{cosine, FeatureMatrix, Role};
pub use tape::{Gradients, Param, ParamSet, Tape, TapeBindings, VarId};

use crate::error::Result;

/// Guard threshold below which a row is treated as zero when normalizing.
pub const NORM_EPS: f64 = 1e-12;

/// Standard matrix product.
pub fn matmul(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<FeatureMatrix> {
    a.matmul(b)
}

/// Rescales each row to unit Euclidean norm; rows with norm below `eps`
/// pass through unchanged.
pub fn l2_normalize_rows(a: &FeatureMatrix, eps: f64) -> Result<FeatureMatrix> {
    a.l2_normalize_rows(eps)
}

/// Entry `(i, j)` is the cosine of row `a_i` and row `b_j`.
pub fn cosine_similarity_matrix(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<FeatureMatrix> {
    if a.cols() != b.cols() {
        return Err(crate::error::CoreError::Dimension {
            op: "cosine_similarity_matrix",
            lhs: a.shape_string(),
            rhs: b.shape_string(),
        });
    }
    let na = a.l2_normalize_rows(NORM_EPS)?;
    let nb = b.l2_normalize_rows(NORM_EPS)?;
    na.matmul(&nb.transpose())
}

/// Probability vector `softmax(logits / tau)` with max-subtraction.
pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    let row = FeatureMatrix::row_vector(logits);
    Ok(row.softmax_rows(tau)?.data().to_vec())
}
