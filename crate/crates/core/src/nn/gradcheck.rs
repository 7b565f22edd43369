/// Settings for a centered finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Absolute floor on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

/// Largest elementwise relative error between `analytic` and centered
/// differences of the scalar map `f` around `point`.
pub fn finite_difference_check<F>(mut f: F, point: &[f64], analytic: &[f64], check: &GradCheck) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    let mut p = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + check.step;
        let up = f(&p);
        p[i] = orig - check.step;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * check.step);
        let denom = analytic[i].abs().max(numeric.abs()).max(check.floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
