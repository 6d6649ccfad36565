//! Central finite-difference verification of reverse-mode gradients.
//!
//! Only forward evaluations are used for the numerical side, so the check is
//! independent of every backward rule it verifies.

use crate::{Result, Tape, Tensor, Var};

/// Relative error per input: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Scalar value of `f` on fresh parameter leaves holding `inputs`.
pub fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Numerical gradient of `f` with respect to every element of every input.
pub fn numeric_grads<F>(inputs: &[Tensor], step: f64, f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = evaluate(&work, f)?;
            work[i].data_mut()[j] = orig - step;
            let minus = evaluate(&work, f)?;
            work[i].data_mut()[j] = orig;
            g.push((plus - minus) / (2.0 * step));
        }
        out.push(g);
    }
    Ok(out)
}

/// Runs `f` once with the tape and once per perturbed element, returning the
/// relative error of each input's gradient.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let numeric = numeric_grads(inputs, step, &f)?;
    let rel_errors = vars
        .iter()
        .zip(&numeric)
        .map(|(v, n)| {
            let zeros = vec![0.0; n.len()];
            let a = grads.get(*v).map(|t| t.data()).unwrap_or(&zeros);
            rel_error(a, n)
        })
        .collect();
    Ok(GradCheck { rel_errors })
}
