//! Central finite-difference verification of analytic gradients.

use super::{Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Compare `analytic` against `(f(p + h e_i) - f(p - h e_i)) / 2h` for every
/// coordinate. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_difference_check<F>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    h: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + h;
        let plus = loss(&probe);
        probe[i] = original - h;
        let minus = loss(&probe);
        probe[i] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_relative_error || rel.is_nan() {
            report = GradCheckReport {
                max_relative_error: rel,
                worst_index: i,
                analytic_at_worst: a,
                numeric_at_worst: numeric,
            };
        }
    }
    report
}

/// Check [`Mlp::backward`] against finite differences of `probe(output)`.
///
/// `probe` returns the scalar loss and its gradient with respect to the
/// network output.
pub fn gradient_check<P>(
    mlp: &Mlp,
    params: &[f64],
    input: &[f64],
    probe: P,
    h: f64,
) -> Result<GradCheckReport, NnError>
where
    P: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let output = mlp.forward(params, input)?;
    let (_, output_grad) = probe(&output);
    let analytic = mlp.backward(params, input, &output_grad)?;
    let mut failure = None;
    let report = finite_difference_check(
        params,
        &analytic,
        |p| match mlp.forward(p, input) {
            Ok(out) => probe(&out).0,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
