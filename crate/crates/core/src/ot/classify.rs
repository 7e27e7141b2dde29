//! Per-class OT distances and the prediction head built on them.

use crate::diffmath::FeatureMatrix;
use crate::error::{CoreError, Result};
use crate::ot::{build_cost_matrix, sinkhorn, Marginals, SinkhornConfig};

/// How marginals are chosen for per-class solves. The text and visual sides
/// are never learned; uniform weights are the default and only policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MarginalPolicy {
    #[default]
    Uniform,
}

impl MarginalPolicy {
    pub fn marginals(&self, n: usize, m: usize) -> Marginals {
        match self {
            MarginalPolicy::Uniform => Marginals::uniform(n, m),
        }
    }
}

/// Element `k` is the transport cost between the visual feature set and the
/// text point set of class `k` under the cosine-distance cost. Solves are
/// independent per class and assembled in class-index order.
///
/// The returned distances are plain numbers: the plan each one comes from is
/// treated as a constant by any surrounding differentiation, which recovers
/// the fix-the-plan-then-backpropagate training split.
pub fn ot_class_distances(
    visual: &FeatureMatrix,
    class_text_sets: &[FeatureMatrix],
    policy: MarginalPolicy,
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>> {
    if class_text_sets.len() < 2 {
        return Err(CoreError::Parameter {
            name: "class_text_sets",
            reason: format!("need at least 2 classes, got {}", class_text_sets.len()),
        });
    }
    let mut distances = Vec::with_capacity(class_text_sets.len());
    for text in class_text_sets {
        let cost = build_cost_matrix(visual, text)?;
        let marg = policy.marginals(cost.rows(), cost.cols());
        let plan = sinkhorn(&cost, &marg, cfg)?;
        distances.push(plan.transport_cost);
    }
    Ok(distances)
}

/// Plans for the same solves, for callers that need the couplings themselves.
pub fn ot_class_plans(
    visual: &FeatureMatrix,
    class_text_sets: &[FeatureMatrix],
    policy: MarginalPolicy,
    cfg: &SinkhornConfig,
) -> Result<Vec<crate::ot::TransportPlan>> {
    class_text_sets
        .iter()
        .map(|text| {
            let cost = build_cost_matrix(visual, text)?;
            let marg = policy.marginals(cost.rows(), cost.cols());
            sinkhorn(&cost, &marg, cfg)
        })
        .collect()
}

/// Prediction probabilities `softmax((1 - d_k) / tau)`. Smaller distance
/// means larger probability, so the argmin distance is the argmax output.
pub fn ot_prediction(distances: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(CoreError::Parameter {
            name: "tau",
            reason: format!("temperature must be > 0, got {tau}"),
        });
    }
    let logits: Vec<f64> = distances.iter().map(|d| 1.0 - d).collect();
    crate::diffmath::softmax_with_temperature(&logits, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Role;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_text_and_visual_rows_give_zero_distance() {
        let visual = FeatureMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], Role::Feature).unwrap();
        let same = visual.clone();
        let other = FeatureMatrix::new(1, 3, vec![0.0, 1.0, 0.0], Role::Feature).unwrap();
        let d = ot_class_distances(&visual, &[same, other], MarginalPolicy::Uniform, &SinkhornConfig::default())
            .unwrap();
        assert!(d[0].abs() < 1e-9, "all-zero cost class: {}", d[0]);
        assert!((d[1] - 1.0).abs() < 1e-6, "orthogonal class: {}", d[1]);
    }

    #[test]
    fn single_text_row_reduces_to_weighted_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let visual = FeatureMatrix::gaussian(4, 5, 1.0, &mut rng);
        let t0 = FeatureMatrix::gaussian(1, 5, 1.0, &mut rng);
        let t1 = FeatureMatrix::gaussian(1, 5, 1.0, &mut rng);
        let d = ot_class_distances(
            &visual,
            &[t0.clone(), t1.clone()],
            MarginalPolicy::Uniform,
            &SinkhornConfig::default(),
        )
        .unwrap();
        for (k, t) in [t0, t1].iter().enumerate() {
            let cost = build_cost_matrix(&visual, t).unwrap();
            let expected: f64 = cost.data().iter().sum::<f64>() / 4.0;
            assert!((d[k] - expected).abs() < 1e-9, "forced 1xM plan");
        }
    }

    #[test]
    fn distances_match_per_class_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let visual = FeatureMatrix::gaussian(4, 6, 1.0, &mut rng);
        let sets: Vec<FeatureMatrix> = (0..3).map(|_| FeatureMatrix::gaussian(3, 6, 1.0, &mut rng)).collect();
        let cfg = SinkhornConfig::default();
        let batch = ot_class_distances(&visual, &sets, MarginalPolicy::Uniform, &cfg).unwrap();
        for (k, text) in sets.iter().enumerate() {
            let cost = build_cost_matrix(&visual, text).unwrap();
            let marg = Marginals::uniform(cost.rows(), cost.cols());
            let solo = sinkhorn(&cost, &marg, &cfg).unwrap();
            assert_eq!(batch[k], solo.transport_cost, "class {k} must match an independent solve");
        }
    }

    #[test]
    fn prediction_is_symmetric_and_normalized() {
        let p = ot_prediction(&[0.4, 0.4, 0.4], 0.5).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let d: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
            let p = ot_prediction(&d, 0.1).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let argmin = d
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmin, argmax);
        }
    }

    #[test]
    fn prediction_hand_value() {
        // logits (0.8, 0.6) at tau 1.
        let p = ot_prediction(&[0.2, 0.4], 1.0).unwrap();
        assert!((p[0] - 0.5498).abs() < 1e-4);
        assert!((p[1] - 0.4502).abs() < 1e-4);
    }

    #[test]
    fn prediction_rejects_bad_tau() {
        assert!(ot_prediction(&[0.1, 0.2], 0.0).is_err());
    }
}
