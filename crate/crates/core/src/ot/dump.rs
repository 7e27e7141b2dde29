//! Structured text record of a single solve, for offline inspection.

use std::fmt::Write;

use crate::diffmath::FeatureMatrix;
use crate::ot::{Marginals, TransportPlan};

fn write_matrix(out: &mut String, key: &str, m: &FeatureMatrix) {
    let _ = writeln!(out, "{key} {} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn write_vector(out: &mut String, key: &str, v: &[f64]) {
    let _ = writeln!(out, "{key} {}", v.len());
    let line: Vec<String> = v.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(out, "{}", line.join(" "));
}

/// Renders cost, marginals, plan and diagnostics as keyed arrays, row-major,
/// with 17 significant decimal digits per value.
pub fn dump_solve(cost: &FeatureMatrix, marg: &Marginals, plan: &TransportPlan) -> String {
    let mut out = String::new();
    write_matrix(&mut out, "cost", cost);
    write_vector(&mut out, "theta", marg.theta());
    write_vector(&mut out, "beta", marg.beta());
    write_matrix(&mut out, "plan", &plan.plan);
    let _ = writeln!(out, "transport_cost {:.16e}", plan.transport_cost);
    let _ = writeln!(out, "entropy {:.16e}", plan.entropy);
    let _ = writeln!(out, "iterations {}", plan.iterations_used);
    let _ = writeln!(out, "converged {}", plan.converged);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{sinkhorn, SinkhornConfig};

    #[test]
    fn dump_contains_all_sections_and_full_precision() {
        let cost = FeatureMatrix::filled(2, 2, 1.0 / 3.0);
        let marg = Marginals::uniform(2, 2);
        let plan = sinkhorn(&cost, &marg, &SinkhornConfig::default()).unwrap();
        let dump = dump_solve(&cost, &marg, &plan);
        for key in ["cost 2 2", "theta 2", "beta 2", "plan 2 2", "transport_cost", "entropy", "iterations", "converged"] {
            assert!(dump.contains(key), "missing `{key}` in:\n{dump}");
        }
        assert!(dump.contains("3.3333333333333331e-1"), "17 significant digits:\n{dump}");
    }
}
