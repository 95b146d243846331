use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Gradients smaller than this are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Relative error `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// Uses the five-point central stencil, whose O(h^4) truncation error
/// stays well below `tol` at `h = 1e-3` for smooth maps.
pub fn finite_diff_check<F>(mut f: F, analytic: &Tensor, params: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if analytic.numel() != params.numel() {
        return Err(Error::shape("finite_diff_check", "gradient and parameter sizes differ"));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("finite_diff_check params".into()));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, tol, passed: true };
    for i in 0..params.numel() {
        let x0 = params.data()[i];
        let mut at = |offset: f64| -> Result<f64> {
            probe.data_mut()[i] = x0 + offset;
            let v = f(&probe)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("finite_diff_check at index {i}")));
            }
            Ok(v)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        probe.data_mut()[i] = x0;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let a = analytic.data()[i];
        let e = rel_err(a, numeric);
        if i == 0 || e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}

/// Differentiates a tape-built scalar function of a single input with
/// respect to that input, then checks it against finite differences.
pub fn check_tape_fn<F>(build: F, params: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let (_, grad) = tape_value_and_grad(&build, params)?;
    finite_diff_check(|p| tape_value_and_grad(&build, p).map(|(v, _)| v), &grad, params, h, tol)
}

pub fn tape_value_and_grad<F>(build: &F, params: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut p = params.clone();
    p.requires_grad = true;
    let x = tape.leaf(p);
    let loss = build(&mut tape, x)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    let grad = tape.grad(x).unwrap_or_else(|| Tensor::zeros(params.shape()));
    Ok((value, grad))
}
