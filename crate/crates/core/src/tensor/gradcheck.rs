use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_relative_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_coordinate: usize,
    pub coordinates: usize,
}

/// Compares analytic gradients against central differences.
///
/// `value_and_grad` returns `f(params)` and its analytic gradient. It is
/// evaluated once at `params` and twice more per coordinate with that
/// coordinate shifted by ±`epsilon`.
pub fn grad_check<F>(params: &[f64], epsilon: f64, mut value_and_grad: F) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid("grad_check", "epsilon must be positive"));
    }
    let (value, analytic) = value_and_grad(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check: value at the base point".into(),
        });
    }
    if analytic.len() != params.len() {
        return Err(Error::invalid(
            "grad_check",
            format!(
                "gradient has {} entries for {} parameters",
                analytic.len(),
                params.len()
            ),
        ));
    }

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_coordinate: 0,
        coordinates: params.len(),
    };
    for i in 0..params.len() {
        if !analytic[i].is_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check: analytic gradient at coordinate {i}"),
            });
        }
        probe[i] = params[i] + epsilon;
        let (plus, _) = value_and_grad(&probe)?;
        probe[i] = params[i] - epsilon;
        let (minus, _) = value_and_grad(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check: perturbed value at coordinate {i}"),
            });
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_coordinate = i;
        }
    }
    Ok(report)
}
