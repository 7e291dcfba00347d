//! Central finite-difference check of tape gradients.

use crate::autodiff::{OpKind, ParamSet, Tape, Var};
use crate::error::{NoradError, Result};

#[derive(Clone, Debug, serde::Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of `loss` against
/// `(f(p+ε) − f(p−ε)) / 2ε` for every coordinate of every trainable
/// parameter. The relative error uses `max(|analytic|, |numeric|, 1e-8)` as
/// denominator.
pub fn grad_check<F>(params: &ParamSet, epsilon: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<Var>,
{
    grad_check_with_fault(params, epsilon, None, loss)
}

/// Like [`grad_check`] but with a deliberately corrupted derivative rule on
/// the analytic pass.
pub fn grad_check_with_fault<F>(
    params: &ParamSet,
    epsilon: f64,
    fault: Option<(OpKind, f64)>,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(NoradError::Contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut tape = Tape::new();
    if let Some((kind, factor)) = fault {
        tape.inject_fault(kind, factor);
    }
    let out = loss(params, &mut tape)?;
    check_finite(tape.scalar(out))?;
    let grads = params.gradients(&tape.backward(out)?);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(p, &mut tape)?;
        let v = tape.scalar(out);
        check_finite(v)?;
        Ok(v)
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for slot in 0..params.len() {
        let param = params.iter().nth(slot).expect("slot in range");
        if !param.trainable {
            continue;
        }
        for i in 0..param.tensor.len() {
            let orig = param.tensor.data()[i];
            probe.tensor_mut(slot).data_mut()[i] = orig + epsilon;
            let plus = eval(&probe)?;
            probe.tensor_mut(slot).data_mut()[i] = orig - epsilon;
            let minus = eval(&probe)?;
            probe.tensor_mut(slot).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads[slot].data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = param.name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NoradError::Numeric(format!("loss is not finite: {v}")))
    }
}
