//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so these checks stay independent
//! of the reverse pass they verify.

use crate::autodiff::{Parameter, Tape, Tensor, Var};
use crate::error::Result;

/// Largest error seen across all checked entries.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64, floor: f64) {
        let err = relative_error(analytic, numeric, floor);
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((name.to_string(), index, analytic, numeric));
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x`, one coordinate at a time.
pub fn central_difference(
    x: &mut [f64],
    step: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(x)?;
        x[i] = orig - step;
        let down = f(x)?;
        x[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Checks the reverse pass of the scalar function built by `build` with
/// respect to every entry of every input.
pub fn check_function(
    inputs: &[Tensor],
    step: f64,
    floor: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let params: Vec<Parameter> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| Parameter::new(format!("input{i}"), t.clone()))
        .collect();
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.param(p)).collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::default();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut values = inputs.to_vec();
        let mut x = input.data().to_vec();
        let numeric = central_difference(&mut x, step, |xs| {
            values[i].data_mut().copy_from_slice(xs);
            eval(&values)
        })?;
        for (j, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            report.record(&params[i].name, j, *a, *n, floor);
        }
    }
    Ok(report)
}
