//! Entropic optimal transport: cost construction, the Sinkhorn solver in
//! standard and log-domain form, an exact permutation-enumeration oracle for
//! small uniform square instances, and the per-class OT classification head.

mod classify;
mod dump;
mod exact;
mod sinkhorn;

pub use classify::{ot_class_distances, ot_class_plans, ot_prediction, MarginalPolicy};
pub use dump::dump_solve;
pub use exact::exact_ot_uniform_square;
pub use sinkhorn::{plan_entropy, sinkhorn, Marginals, SinkhornConfig, TransportPlan};

use crate::diffmath::{cosine_similarity_matrix, FeatureMatrix, Role};
use crate::error::Result;

/// Cosine-distance cost matrix: `C[n, m] = 1 - cos(text_n, visual_m)`.
/// Rows are normalized internally; entries land in `[0, 2]`.
pub fn build_cost_matrix(visual: &FeatureMatrix, text: &FeatureMatrix) -> Result<FeatureMatrix> {
    if visual.cols() != text.cols() {
        return Err(crate::error::CoreError::Dimension {
            op: "build_cost_matrix",
            lhs: text.shape_string(),
            rhs: visual.shape_string(),
        });
    }
    let sims = cosine_similarity_matrix(text, visual)?;
    let mut cost = sims.affine(-1.0, 1.0).with_role(Role::Cost);
    for v in cost.data_mut() {
        *v = v.clamp(0.0, 2.0);
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_matrix_trivial_geometry() {
        let visual = FeatureMatrix::new(3, 2, vec![2.0, 0.0, 0.0, 1.0, -1.0, 0.0], Role::Feature).unwrap();
        let text = FeatureMatrix::new(1, 2, vec![1.0, 0.0], Role::Feature).unwrap();
        let c = build_cost_matrix(&visual, &text).unwrap();
        assert_eq!(c.shape(), (1, 3));
        assert!(c.get(0, 0).abs() < 1e-12, "same direction costs zero");
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12, "orthogonal costs one");
        assert!((c.get(0, 2) - 2.0).abs() < 1e-12, "antipodal costs two");
    }

    #[test]
    fn cost_matrix_rejects_mixed_dims() {
        let visual = FeatureMatrix::zeros(3, 4);
        let text = FeatureMatrix::zeros(2, 5);
        assert!(build_cost_matrix(&visual, &text).is_err());
    }
}
