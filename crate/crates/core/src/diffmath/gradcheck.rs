//! Central-finite-difference verification of tape gradients.

use crate::diffmath::matrix::FeatureMatrix;
use crate::diffmath::tape::{ParamSet, Tape, TapeBindings, VarId};
use crate::error::{CoreError, Result};

/// Builds a scalar loss on a tape from bound parameters. The closure must be
/// deterministic: the check evaluates it many times under perturbation.
pub trait LossBuilder: Fn(&mut Tape, &TapeBindings) -> Result<VarId> {}
impl<F: Fn(&mut Tape, &TapeBindings) -> Result<VarId>> LossBuilder for F {}

fn eval_loss<F: LossBuilder>(build: &F, params: &ParamSet) -> Result<f64> {
    let mut tape = Tape::new();
    let bindings = tape.register(params);
    let loss = build(&mut tape, &bindings)?;
    let value = tape.value(loss).scalar();
    if !value.is_finite() {
        return Err(CoreError::Evaluation("loss is not finite".into()));
    }
    Ok(value)
}

/// Compares the reverse-mode gradient of `build` against central finite
/// differences with the given step, over every entry of every learnable
/// parameter. Returns the largest relative error, where the relative error
/// uses the denominator `max(|g|, |fd|, 1e-8)`.
///
/// Frozen parameters are asserted to carry an exactly-zero gradient and are
/// excluded from the finite-difference sweep.
pub fn gradient_check<F: LossBuilder>(build: F, params: &ParamSet, step: f64) -> Result<f64> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(CoreError::Parameter {
            name: "step",
            reason: format!("finite-difference step must be in (0, 1e-2], got {step}"),
        });
    }

    // Analytic gradients from one recorded pass.
    let mut tape = Tape::new();
    let bindings = tape.register(params);
    let loss = build(&mut tape, &bindings)?;
    if !tape.value(loss).scalar().is_finite() {
        return Err(CoreError::Evaluation("loss is not finite".into()));
    }
    let grads = tape.backward(loss)?;

    let mut max_rel = 0.0f64;
    for (name, param) in params.iter() {
        let grad = grads.get(name).expect("gradient for every registered leaf");
        if param.frozen {
            assert!(
                grad.data().iter().all(|&v| v == 0.0),
                "frozen parameter `{name}` received a non-zero gradient"
            );
            continue;
        }
        for idx in 0..param.value.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().value.data_mut()[idx] += step;
            let f_plus = eval_loss(&build, &plus)?;

            let mut minus = params.clone();
            minus.get_mut(name).unwrap().value.data_mut()[idx] -= step;
            let f_minus = eval_loss(&build, &minus)?;

            let fd = (f_plus - f_minus) / (2.0 * step);
            let g = grad.data()[idx];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Finite-difference gradient of an arbitrary scalar function of a matrix,
/// for tests that check expressions outside the tape.
pub fn finite_difference<F: Fn(&FeatureMatrix) -> f64>(
    f: F,
    at: &FeatureMatrix,
    step: f64,
) -> FeatureMatrix {
    let mut grad = FeatureMatrix::zeros(at.rows(), at.cols());
    for idx in 0..at.len() {
        let mut plus = at.clone();
        plus.data_mut()[idx] += step;
        let mut minus = at.clone();
        minus.data_mut()[idx] -= step;
        grad.data_mut()[idx] = (f(&plus) - f(&minus)) / (2.0 * step);
    }
    grad
}
