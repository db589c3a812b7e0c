//! Central finite-difference verification of tape gradients.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    /// Per input: `max|analytic − numeric| / max(max|analytic|, max|numeric|)`
    /// over the checked coordinates (0 when both gradients vanish).
    pub per_input: Vec<Real>,
    pub max_rel_error: Real,
    pub tol: Real,
    /// Number of coordinates that were perturbed.
    pub checked: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compares the tape gradient of scalar-valued `f` against central finite
/// differences for every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: Real, tol: Real) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    grad_check_at(f, inputs, eps, tol, &coords)
}

/// Like [`grad_check`], but only perturbs `coords[i]` of input `i`.
pub fn grad_check_at<F>(
    f: F,
    inputs: &[Tensor],
    eps: Real,
    tol: Real,
    coords: &[Vec<usize>],
) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(TensorError::invalid("grad_check", format!("eps {eps} outside (0, 1e-2]")));
    }
    if coords.len() != inputs.len() {
        return Err(TensorError::invalid("grad_check", "one coordinate list per input"));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    check_finite(tape.value(out))?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("leaf gradient"))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<Real> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        check_finite(tape.value(out))?;
        Ok(tape.value(out).item())
    };

    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (i, idxs) in coords.iter().enumerate() {
        let (mut max_diff, mut max_a, mut max_n) = (0.0 as Real, 0.0 as Real, 0.0 as Real);
        for &j in idxs {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[j];
            max_diff = max_diff.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
            checked += 1;
        }
        let scale = max_a.max(max_n);
        per_input.push(if scale > 0.0 { max_diff / scale } else { max_diff });
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, Real::max);
    Ok(CheckReport {
        per_input,
        max_rel_error,
        tol,
        checked,
    })
}

fn check_finite(t: &Tensor) -> Result<()> {
    if t.len() != 1 {
        return Err(TensorError::NonScalarOutput(t.shape().to_vec()));
    }
    if !t.item().is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    Ok(())
}
