//! Central finite-difference gradient verification harness.
//!
//! Analytic gradients are compared against (f(x+h) - f(x-h)) / 2h in f64.
//! The relative error uses max(1, |a|, |n|) in the denominator so that
//! near-zero gradients are compared absolutely.

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Check `analytic` against central differences of `f` at `point`.
/// `f` is re-evaluated with one coordinate perturbed at a time.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    h: f64,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len());
    let mut buf = point.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for i in 0..point.len() {
        buf[i] = point[i] + h;
        let fp = f(&buf);
        buf[i] = point[i] - h;
        let fm = f(&buf);
        buf[i] = point[i];
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_index,
        checked: point.len(),
    }
}
