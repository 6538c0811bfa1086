use super::{AdError, Tape, Var};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic - numeric| / max(1e-8, |numeric|)`
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst coordinate
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares tape gradients of `f` against central differences with `step`.
///
/// `f` is rebuilt on a fresh tape for every evaluation.
pub fn grad_check<F>(f: F, params: &[Matrix], step: f64) -> Result<GradCheckReport, AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let eval = |ps: &[Matrix]| -> Result<f64, AdError> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&tape, &vars);
        match tape.error() {
            Some(e) => Err(e),
            None => Ok(out.item()),
        }
    };

    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars.iter().map(|v| grads.wrt(v)).collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, coordinates: 0 };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let x0 = p.as_slice()[k];
            work[pi].as_mut_slice()[k] = x0 + step;
            let up = eval(&work)?;
            work[pi].as_mut_slice()[k] = x0 - step;
            let down = eval(&work)?;
            work[pi].as_mut_slice()[k] = x0;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].as_slice()[k];
            let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
