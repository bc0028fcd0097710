use crate::error::{Error, Result};

/// `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares `analytic` against central differences
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` at every coordinate of `point`.
pub fn grad_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if point.len() != analytic.len() {
        return Err(Error::shape(
            "gradient check",
            &[point.len()],
            &[analytic.len()],
        ));
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        checked: 0,
        tolerance,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite difference at coordinate {i}"
            )));
        }
        let rel = relative_error(analytic[i], numeric);
        if i == 0 || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}
