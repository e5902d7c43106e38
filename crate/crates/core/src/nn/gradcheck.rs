//! Central finite-difference check of the analytic gradients.

use crate::error::{Error, Result};
use crate::nn::network::{AuxState, Target};
use crate::nn::{Matrix, Network};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |a - n| / max(|a|, |n|, 1e-8)
    pub max_rel_error: f64,
    /// Coordinate with the largest error. Shared parameters come first, then
    /// the LHUC xi entries in layer order.
    pub worst_index: usize,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn eval_loss(net: &Network, input: &Matrix, target: &Target<'_>, aux: AuxState<'_>) -> Result<f64> {
    let out = net.infer(input, aux)?;
    let t = match target {
        Target::Classes(c) => Target::Classes(c),
        Target::Values(v) => Target::Values(v),
    };
    Ok(net.loss(&out, t)?.0)
}

/// Compares backprop against `(L(p + eps) - L(p - eps)) / (2 eps)` for every
/// shared parameter and every LHUC coordinate supplied in `aux`.
pub fn grad_check(
    net: &Network,
    input: &Matrix,
    target: Target<'_>,
    epsilon: f64,
    aux: AuxState<'_>,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::config(format!("epsilon must be in (0, 1e-2], got {epsilon}")));
    }
    let pass = net.forward(input, aux)?;
    let t = match &target {
        Target::Classes(c) => Target::Classes(c),
        Target::Values(v) => Target::Values(v),
    };
    let (base, grad_out) = net.loss(&pass.output, t)?;
    if !base.is_finite() {
        return Err(Error::GradCheck {
            index: 0,
            reason: "loss at the unperturbed point is not finite".into(),
        });
    }
    let analytic = net.backward(&pass, aux, &grad_out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    let mut record = |index: usize, a: f64, plus: f64, minus: f64| -> Result<()> {
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::GradCheck {
                index,
                reason: "perturbed loss is not finite".into(),
            });
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let e = rel_error(a, numeric);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_index = index;
        }
        report.checked += 1;
        Ok(())
    };

    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let orig = net.params()[i];
        probe.params_mut()[i] = orig + epsilon;
        let plus = eval_loss(&probe, input, &target, aux)?;
        probe.params_mut()[i] = orig - epsilon;
        let minus = eval_loss(&probe, input, &target, aux)?;
        probe.params_mut()[i] = orig;
        record(i, analytic.params[i], plus, minus)?;
    }

    if let Some(xi) = aux.lhuc {
        let mut xi_probe: Vec<Vec<f64>> = xi.to_vec();
        let mut index = net.param_count();
        for l in 0..xi.len() {
            for j in 0..xi[l].len() {
                let orig = xi[l][j];
                xi_probe[l][j] = orig + epsilon;
                let plus = eval_loss(
                    net,
                    input,
                    &target,
                    AuxState {
                        lhuc: Some(&xi_probe),
                        ..aux
                    },
                )?;
                xi_probe[l][j] = orig - epsilon;
                let minus = eval_loss(
                    net,
                    input,
                    &target,
                    AuxState {
                        lhuc: Some(&xi_probe),
                        ..aux
                    },
                )?;
                xi_probe[l][j] = orig;
                record(index, analytic.lhuc[l][j], plus, minus)?;
                index += 1;
            }
        }
    }
    Ok(report)
}
