//! Sinkhorn iteration for entropy-regularized transport.
//!
//! The kernel convention is `K = exp(-C / lambda)`: the objective subtracts
//! `lambda * h(T)`, so a larger `lambda` smooths the plan toward the
//! independent coupling and a smaller one sharpens it toward the exact
//! optimum. The reported `transport_cost` is the pure `<T, C>` without the
//! entropy term.

use crate::diffmath::{FeatureMatrix, Role};
use crate::error::{CoreError, Result};

/// Row and column marginals of the coupling.
#[derive(Debug, Clone)]
pub struct Marginals {
    theta: Vec<f64>,
    beta: Vec<f64>,
}

impl Marginals {
    pub fn new(theta: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        for (name, v) in [("theta", &theta), ("beta", &beta)] {
            if v.is_empty() {
                return Err(CoreError::Parameter { name: "marginals", reason: format!("{name} is empty") });
            }
            if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(CoreError::Parameter {
                    name: "marginals",
                    reason: format!("{name} must have strictly positive finite entries"),
                });
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CoreError::Parameter {
                    name: "marginals",
                    reason: format!("{name} sums to {sum}, expected 1 within 1e-9"),
                });
            }
        }
        Ok(Self { theta, beta })
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self {
            theta: vec![1.0 / n as f64; n],
            beta: vec![1.0 / m as f64; m],
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
}

/// Solver knobs. `lambda` is the entropic weight; `log_domain` selects the
/// underflow-safe potential form.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_iterations: 100,
            marginal_tolerance: 1e-6,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(CoreError::Parameter {
                name: "lambda",
                reason: format!("entropic weight must be > 0, got {}", self.lambda),
            });
        }
        if self.max_iterations == 0 {
            return Err(CoreError::Parameter { name: "max_iterations", reason: "must be >= 1".into() });
        }
        if !(self.marginal_tolerance > 0.0) {
            return Err(CoreError::Parameter {
                name: "marginal_tolerance",
                reason: format!("must be > 0, got {}", self.marginal_tolerance),
            });
        }
        Ok(())
    }
}

/// A solved coupling together with its diagnostics.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: FeatureMatrix,
    pub transport_cost: f64,
    pub entropy: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

impl TransportPlan {
    /// L1 deviations of the plan's marginals from the prescribed ones.
    pub fn marginal_errors(&self, marg: &Marginals) -> (f64, f64) {
        let row_err: f64 = self
            .plan
            .row_sums()
            .iter()
            .zip(marg.theta())
            .map(|(s, t)| (s - t).abs())
            .sum();
        let col_err: f64 = self
            .plan
            .col_sums()
            .iter()
            .zip(marg.beta())
            .map(|(s, b)| (s - b).abs())
            .sum();
        (row_err, col_err)
    }
}

/// Entropy `h(T) = -sum T_ij log T_ij`, with `0 log 0 = 0`.
pub fn plan_entropy(plan: &FeatureMatrix) -> f64 {
    plan.data()
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| -t * t.ln())
        .sum()
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = terms.collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Alternating-scaling solver for `min <T, C> - lambda h(T)` under marginal
/// constraints. Stops when both marginal L1 errors drop to
/// `marginal_tolerance` or the iteration budget runs out; hitting the budget
/// is reported through `converged`, not as an error.
pub fn sinkhorn(cost: &FeatureMatrix, marg: &Marginals, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    cost.check_finite("sinkhorn cost")?;
    let (n, m) = cost.shape();
    if n != marg.theta().len() || m != marg.beta().len() {
        return Err(CoreError::Dimension {
            op: "sinkhorn",
            lhs: cost.shape_string(),
            rhs: format!("{}x{} marginals", marg.theta().len(), marg.beta().len()),
        });
    }
    if cfg.log_domain {
        sinkhorn_log(cost, marg, cfg)
    } else {
        sinkhorn_scaling(cost, marg, cfg)
    }
}

fn finish(
    plan: FeatureMatrix,
    cost: &FeatureMatrix,
    iterations_used: usize,
    converged: bool,
) -> Result<TransportPlan> {
    plan.check_finite("sinkhorn plan")?;
    let transport_cost = plan.dot(cost)?;
    let entropy = plan_entropy(&plan);
    Ok(TransportPlan {
        plan: plan.with_role(Role::Plan),
        transport_cost,
        entropy,
        iterations_used,
        converged,
    })
}

fn sinkhorn_scaling(cost: &FeatureMatrix, marg: &Marginals, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    let kernel = {
        let mut k = cost.clone();
        for v in k.data_mut() {
            *v = (-*v / cfg.lambda).exp();
        }
        k
    };

    let underflow = || {
        CoreError::Numeric(
            "sinkhorn kernel underflow produced a zero row or column; retry with log_domain enabled"
                .to_string(),
        )
    };
    for i in 0..n {
        if kernel.row(i).iter().all(|&v| v == 0.0) {
            return Err(underflow());
        }
    }
    for j in 0..m {
        if (0..n).all(|i| kernel.get(i, j) == 0.0) {
            return Err(underflow());
        }
    }

    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut iterations_used = 0;
    let mut converged = false;

    for iter in 1..=cfg.max_iterations {
        // u = theta / (K v)
        for i in 0..n {
            let kv: f64 = (0..m).map(|j| kernel.get(i, j) * v[j]).sum();
            if kv == 0.0 || !kv.is_finite() {
                return Err(underflow());
            }
            u[i] = marg.theta()[i] / kv;
        }
        // v = beta / (K^T u)
        for j in 0..m {
            let ktu: f64 = (0..n).map(|i| kernel.get(i, j) * u[i]).sum();
            if ktu == 0.0 || !ktu.is_finite() {
                return Err(underflow());
            }
            v[j] = marg.beta()[j] / ktu;
        }
        iterations_used = iter;

        // Marginal residuals of T = diag(u) K diag(v).
        let mut row_err = 0.0;
        for i in 0..n {
            let s: f64 = (0..m).map(|j| u[i] * kernel.get(i, j) * v[j]).sum();
            row_err += (s - marg.theta()[i]).abs();
        }
        let mut col_err = 0.0;
        for j in 0..m {
            let s: f64 = (0..n).map(|i| u[i] * kernel.get(i, j) * v[j]).sum();
            col_err += (s - marg.beta()[j]).abs();
        }
        if row_err <= cfg.marginal_tolerance && col_err <= cfg.marginal_tolerance {
            converged = true;
            break;
        }
    }

    let mut plan = FeatureMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            plan.set(i, j, u[i] * kernel.get(i, j) * v[j]);
        }
    }
    finish(plan, cost, iterations_used, converged)
}

fn sinkhorn_log(cost: &FeatureMatrix, marg: &Marginals, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    let lambda = cfg.lambda;
    let log_theta: Vec<f64> = marg.theta().iter().map(|t| t.ln()).collect();
    let log_beta: Vec<f64> = marg.beta().iter().map(|b| b.ln()).collect();

    // Dual potentials; T_ij = exp((f_i + g_j - C_ij) / lambda).
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations_used = 0;
    let mut converged = false;

    let build_plan = |f: &[f64], g: &[f64]| {
        let mut plan = FeatureMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                plan.set(i, j, ((f[i] + g[j] - cost.get(i, j)) / lambda).exp());
            }
        }
        plan
    };

    for iter in 1..=cfg.max_iterations {
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - cost.get(i, j)) / lambda));
            f[i] = lambda * (log_theta[i] - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - cost.get(i, j)) / lambda));
            g[j] = lambda * (log_beta[j] - lse);
        }
        iterations_used = iter;

        let plan = build_plan(&f, &g);
        let row_err: f64 = plan
            .row_sums()
            .iter()
            .zip(marg.theta())
            .map(|(s, t)| (s - t).abs())
            .sum();
        let col_err: f64 = plan
            .col_sums()
            .iter()
            .zip(marg.beta())
            .map(|(s, b)| (s - b).abs())
            .sum();
        if row_err <= cfg.marginal_tolerance && col_err <= cfg.marginal_tolerance {
            converged = true;
            break;
        }
    }

    finish(build_plan(&f, &g), cost, iterations_used, converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cost_uniform_marginals_gives_independent_coupling() {
        let cost = FeatureMatrix::zeros(2, 2);
        let marg = Marginals::uniform(2, 2);
        for log_domain in [false, true] {
            let cfg = SinkhornConfig { log_domain, ..Default::default() };
            let plan = sinkhorn(&cost, &marg, &cfg).unwrap();
            assert!(plan.converged);
            for v in plan.plan.data() {
                assert!((v - 0.25).abs() < 1e-12);
            }
            assert!(plan.transport_cost.abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_plan_is_forced_by_marginals() {
        let cost = FeatureMatrix::new(1, 2, vec![0.2, 0.4], Role::Cost).unwrap();
        let marg = Marginals::new(vec![1.0], vec![0.5, 0.5]).unwrap();
        let plan = sinkhorn(&cost, &marg, &SinkhornConfig::default()).unwrap();
        assert!((plan.plan.get(0, 0) - 0.5).abs() < 1e-9);
        assert!((plan.plan.get(0, 1) - 0.5).abs() < 1e-9);
        assert!((plan.transport_cost - 0.3).abs() < 1e-9);
    }

    #[test]
    fn non_log_mode_reports_underflow_with_retry_hint() {
        // lambda 1e-3 with cost 2 gives exp(-2000) == 0 for a whole row.
        let cost = FeatureMatrix::new(2, 2, vec![2.0, 2.0, 0.0, 0.0], Role::Cost).unwrap();
        let marg = Marginals::uniform(2, 2);
        let cfg = SinkhornConfig { lambda: 1e-3, log_domain: false, ..Default::default() };
        let err = sinkhorn(&cost, &marg, &cfg).unwrap_err();
        assert!(err.to_string().contains("log_domain"), "got: {err}");

        // The log-domain solver must handle the same instance.
        let cfg = SinkhornConfig { lambda: 1e-3, log_domain: true, ..Default::default() };
        let plan = sinkhorn(&cost, &marg, &cfg).unwrap();
        assert!(plan.plan.is_finite());
    }

    #[test]
    fn entropy_trivial_values() {
        let point = FeatureMatrix::new(1, 1, vec![1.0], Role::Plan).unwrap();
        assert_eq!(plan_entropy(&point), 0.0);

        let uniform = FeatureMatrix::filled(2, 2, 0.25);
        assert!((plan_entropy(&uniform) - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_flagged_not_raised() {
        let cost = FeatureMatrix::new(2, 2, vec![0.1, 1.9, 1.7, 0.2], Role::Cost).unwrap();
        let marg = Marginals::new(vec![0.9, 0.1], vec![0.2, 0.8]).unwrap();
        let starved = SinkhornConfig {
            lambda: 1.0,
            max_iterations: 1,
            marginal_tolerance: 1e-12,
            ..Default::default()
        };
        let plan = sinkhorn(&cost, &marg, &starved).unwrap();
        assert!(!plan.converged);
        assert_eq!(plan.iterations_used, 1);

        let generous = SinkhornConfig { max_iterations: 10_000, ..starved };
        assert!(sinkhorn(&cost, &marg, &generous).unwrap().converged);
    }

    #[test]
    fn marginals_reject_bad_input() {
        assert!(Marginals::new(vec![0.5, 0.6], vec![1.0]).is_err(), "sum != 1");
        assert!(Marginals::new(vec![1.0, 0.0], vec![1.0]).is_err(), "zero entry");
        assert!(Marginals::new(vec![], vec![1.0]).is_err(), "empty");
    }
}
