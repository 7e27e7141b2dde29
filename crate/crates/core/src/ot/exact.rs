//! Exact transport cost for uniform marginals on square instances.
//!
//! With both marginals uniform the feasible set is the Birkhoff polytope
//! scaled by `1/n`, whose extreme points are permutation matrices, so the
//! linear objective is minimized at a permutation. Enumerating all `n!`
//! of them is exact and fast enough up to `n = 8`.

use crate::diffmath::FeatureMatrix;
use crate::error::{CoreError, Result};

pub const MAX_BRUTE_FORCE_N: usize = 8;

/// Minimum of `(1/n) * sum_i C[i, sigma(i)]` over all permutations `sigma`,
/// together with one minimizing permutation.
pub fn exact_ot_uniform_square(cost: &FeatureMatrix) -> Result<(f64, Vec<usize>)> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(CoreError::Dimension {
            op: "exact_ot_uniform_square",
            lhs: cost.shape_string(),
            rhs: format!("{n}x{n} (square required)"),
        });
    }
    if n > MAX_BRUTE_FORCE_N {
        return Err(CoreError::Size { n, max: MAX_BRUTE_FORCE_N });
    }
    cost.check_finite("exact_ot_uniform_square")?;

    let mut best_cost = f64::INFINITY;
    let mut best_perm = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();

    // Heap's algorithm, iterative form.
    let mut counters = vec![0usize; n];
    let evaluate = |perm: &[usize], best_cost: &mut f64, best_perm: &mut Vec<usize>| {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        let avg = total / n as f64;
        if avg < *best_cost {
            *best_cost = avg;
            *best_perm = perm.to_vec();
        }
    };
    evaluate(&perm, &mut best_cost, &mut best_perm);
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            evaluate(&perm, &mut best_cost, &mut best_perm);
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }

    Ok((best_cost, best_perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Role;

    #[test]
    fn diagonal_optimum_is_identity() {
        let mut cost = FeatureMatrix::filled(3, 3, 5.0);
        for i in 0..3 {
            cost.set(i, i, 0.0);
        }
        let (value, perm) = exact_ot_uniform_square(&cost).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(perm, vec![0, 1, 2]);
    }

    #[test]
    fn singleton_cost_is_the_entry() {
        let cost = FeatureMatrix::new(1, 1, vec![0.7], Role::Cost).unwrap();
        let (value, perm) = exact_ot_uniform_square(&cost).unwrap();
        assert_eq!(value, 0.7);
        assert_eq!(perm, vec![0]);
    }

    #[test]
    fn oversize_instance_is_rejected() {
        let cost = FeatureMatrix::zeros(9, 9);
        assert!(matches!(
            exact_ot_uniform_square(&cost),
            Err(CoreError::Size { n: 9, max: 8 })
        ));
    }

    #[test]
    fn non_square_is_rejected() {
        let cost = FeatureMatrix::zeros(3, 4);
        assert!(exact_ot_uniform_square(&cost).is_err());
    }

    /// Independent second enumeration: walk permutations in lexicographic
    /// order, reversed, and compare the minimum.
    fn brute_force_reverse_lex(cost: &FeatureMatrix) -> f64 {
        fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut tail in permutations(rest) {
                    tail.insert(0, head);
                    out.push(tail);
                }
            }
            out
        }
        let n = cost.rows();
        let mut all = permutations((0..n).collect());
        all.reverse();
        all.iter()
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn seeded_4x4_matches_independent_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let data: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..2.0)).collect();
            let cost = FeatureMatrix::new(4, 4, data, Role::Cost).unwrap();
            let (value, _) = exact_ot_uniform_square(&cost).unwrap();
            let reference = brute_force_reverse_lex(&cost);
            assert!((value - reference).abs() < 1e-15);
        }
    }
}
