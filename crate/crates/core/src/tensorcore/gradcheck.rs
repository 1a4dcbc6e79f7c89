use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale, so that
/// round-off in near-zero components does not dominate the report.
const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    /// Flat index of the parameter with the largest error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic gradients against central differences.
///
/// `f` maps a flat parameter vector to `(loss, analytic gradient)`; the
/// analytic gradient is only read at `params`. `f` must be deterministic.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dim {
            expected: params.len(),
            got: analytic.len(),
            context: "analytic gradient",
        });
    }

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        n_params: params.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: analytic.first().copied().unwrap_or(0.0),
        worst_numeric: 0.0,
        tolerance,
    };
    for i in 0..params.len() {
        probe[i] = params[i] + FD_STEP;
        let (plus, _) = f(&probe)?;
        probe[i] = params[i] - FD_STEP;
        let (minus, _) = f(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        if i == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{mse, LinearLayer, Parameterized, Rng};

    #[test]
    fn quadratic_passes() {
        let f = |p: &[f64]| {
            Ok((
                p.iter().map(|v| v * v).sum(),
                p.iter().map(|v| 2.0 * v).collect(),
            ))
        };
        let report = finite_diff_check(f, &[1.0, -2.0, 0.5], 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |p: &[f64]| Ok((p[0] * p[0], vec![p[0]]));
        let report = finite_diff_check(f, &[1.0], 1e-4).unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst_index, 0);
    }

    #[test]
    fn non_finite_loss_is_error() {
        let f = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(
            finite_diff_check(f, &[1.0], 1e-4),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn linear_mse_composite() {
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let layer = LinearLayer::new(4, 3, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let target: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let f = |p: &[f64]| {
                let mut l = layer.clone();
                l.load_flat(p);
                let y = l.forward(&x)?;
                let (loss, dy) = mse(&y, &target)?;
                let (g, _) = l.backward(&x, &dy)?;
                Ok((loss, g.flat_params()))
            };
            let report = finite_diff_check(f, &layer.flat_params(), 1e-6).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }
}
