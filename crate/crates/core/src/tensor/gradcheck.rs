use std::fmt;

use super::{Graph, ParamSet, Result, TensorError, Var};
use crate::scalar::Scalar;

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-6;

/// Worst coordinate of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<24} n={:<6} max_rel={:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
                p.name, p.coordinates, p.max_rel_error, p.worst_index, p.analytic, p.numeric
            )?;
        }
        write!(
            f,
            "{} max_rel={:.3e} tol={:.1e} step={:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tol,
            self.step
        )
    }
}

pub(crate) fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval<S, F>(params: &ParamSet<S>, build: &mut F) -> Result<S>
where
    S: Scalar,
    F: for<'p> FnMut(&mut Graph<'p, S>, &'p ParamSet<S>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    Ok(g.scalar(loss))
}

/// Compares reverse-mode gradients of `build`'s scalar output against central
/// differences over every coordinate of every parameter.
///
/// `build` records the loss on the graph it is handed and returns it. It is
/// evaluated twice at the unperturbed point first; any difference between the
/// two values means the function is not deterministic and the check is
/// refused.
pub fn finite_diff_check<S, F>(
    params: &ParamSet<S>,
    mut build: F,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: for<'p> FnMut(&mut Graph<'p, S>, &'p ParamSet<S>) -> Result<Var>,
{
    if !(step > 0.0 && tol > 0.0) {
        return Err(TensorError::GradCheck(
            "step and tol must be positive".into(),
        ));
    }
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        let first = g.scalar(loss);
        let again = eval(params, &mut build)?;
        if first.f64().to_bits() != again.f64().to_bits() {
            return Err(TensorError::GradCheck(format!(
                "function is not deterministic: {first} then {again}"
            )));
        }
        g.backward(loss)?
    };
    analytic.check_against(params)?;

    let mut work = params.clone();
    let mut report = GradCheckReport {
        step,
        tol,
        params: Vec::with_capacity(params.len()),
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let exact = analytic.get_or_zeros(id, n);
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            coordinates: n,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, a) in exact.iter().enumerate() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = S::of(orig.f64() + step);
            let plus = eval(&work, &mut build)?.f64();
            work.get_mut(id).data_mut()[i] = S::of(orig.f64() - step);
            let minus = eval(&work, &mut build)?.f64();
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = a.f64();
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
