//! Central finite-difference checks for the gradient tape.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor for [`relative_error`]; below it errors are absolute.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(input, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn record(&mut self, input: usize, coord: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst.is_none() || e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = Some((input, coord, analytic, numeric));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// `(f(x + h) - f(x - h)) / 2h` along coordinate `i`, restoring `x[i]`.
pub fn central_difference(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x)?;
    x[i] = orig - h;
    let down = f(x)?;
    x[i] = orig;
    Ok((up - down) / (2.0 * h))
}

/// Compares tape gradients of `build` against central differences on every
/// coordinate of every input. `build` must return a one-element node.
pub fn check_op<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let orig = work[k].data[i];
            work[k].data[i] = orig + h;
            let up = eval(&work)?;
            work[k].data[i] = orig - h;
            let down = eval(&work)?;
            work[k].data[i] = orig;
            report.record(k, i, analytic[k][i], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}
