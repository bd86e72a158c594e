//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it is used to verify.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Default perturbation for central differences.
pub const STEP: f64 = 1e-5;
/// Default relative tolerance.
pub const REL_TOL: f64 = 1e-4;
/// Magnitude below which errors are measured absolutely instead of relatively.
pub const FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.map_or(0.0, |m| m.rel_error)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compare backward gradients of a scalar function against central
/// differences with step `step`, over every element of every input.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        g.backward(loss)?;
        vars.iter().map(|v| g.grad(*v)).collect::<Vec<_>>()
    };

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        for index in 0..grad.numel() {
            let orig = work[input].data()[index];
            work[input].data_mut()[index] = orig + step;
            let plus = eval(&work)?;
            work[input].data_mut()[index] = orig - step;
            let minus = eval(&work)?;
            work[input].data_mut()[index] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[index];
            let err = rel_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none_or(|w| err > w.rel_error) {
                report.worst = Some(Mismatch {
                    input,
                    index,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(report)
}
