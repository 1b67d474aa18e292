//! Central finite-difference gradient checking in f64.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Result for one named input.
#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub elements: usize,
    /// `max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub grad_norm_inf: f64,
}

impl GroupReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

/// Compare the tape gradient of the scalar `f` against central differences
/// for every element of every named input.
///
/// `f` is called once on leaves for the analytic pass and then twice per
/// element on constants.
pub fn check<F>(inputs: &[(&str, Tensor<f64>)], step: f64, f: F) -> Result<Vec<GroupReport>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if tape.value(root).numel() != 1 {
        return Err(Error::NonScalarRoot(tape.shape(root).to_vec()));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, (_, t))| grads.get_or_zeros(v, t.shape()))
        .collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        tape.value(root).item()
    };

    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (g, (name, _)) in inputs.iter().enumerate() {
        let n = values[g].numel();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = values[g].data()[i];
            values[g].data_mut()[i] = orig + step;
            let plus = eval(&values)?;
            values[g].data_mut()[i] = orig - step;
            let minus = eval(&values)?;
            values[g].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let a = analytic[g].data();
        let max_abs_error = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let norm_a = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let norm_n = numeric.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let scale = norm_a.max(norm_n);
        let max_rel_error = if scale == 0.0 { 0.0 } else { max_abs_error / scale };
        reports.push(GroupReport {
            group: name.to_string(),
            elements: n,
            max_rel_error,
            max_abs_error,
            grad_norm_inf: norm_a,
        });
    }
    Ok(reports)
}
