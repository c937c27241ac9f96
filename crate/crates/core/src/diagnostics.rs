//! Numerical checks for factor implementations.

use nalgebra::DMatrix;

use crate::graph::{Factor, Values};

/// Comparison of analytic and numerical Jacobians for one factor.
#[derive(Debug, Clone)]
pub struct JacobianCheck {
    pub analytic: Vec<DMatrix<f64>>,
    pub numerical: Vec<DMatrix<f64>>,
    /// Largest `|analytic − numerical| / max(1, ‖numerical block‖_max)`.
    pub max_relative_error: f64,
}

/// Central finite differences of a factor's residual through each
/// variable's retraction.
///
/// Returns `None` when the factor cannot be evaluated at `values` or at one
/// of the perturbed points.
pub fn numerical_jacobians(factor: &dyn Factor, values: &Values, step: f64) -> Option<Vec<DMatrix<f64>>> {
    let dim = factor.dim();
    let mut out = Vec::with_capacity(factor.keys().len());
    for key in factor.keys() {
        let base = *values.get(key)?;
        let n = base.dim();
        let mut jac = DMatrix::zeros(dim, n);
        let mut delta = vec![0.0; n];
        for c in 0..n {
            let mut shifted = values.clone();
            delta[c] = step;
            shifted.insert(*key, base.retract(&delta)).ok()?;
            let plus = factor.residual(&shifted)?;
            delta[c] = -step;
            shifted.insert(*key, base.retract(&delta)).ok()?;
            let minus = factor.residual(&shifted)?;
            delta[c] = 0.0;
            jac.set_column(c, &((plus - minus) / (2.0 * step)));
        }
        out.push(jac);
    }
    Some(out)
}

/// Compares a factor's analytic Jacobians with central differences.
pub fn check_jacobians(factor: &dyn Factor, values: &Values, step: f64) -> Option<JacobianCheck> {
    let analytic = factor.linearize(values)?.jacobians;
    let numerical = numerical_jacobians(factor, values, step)?;
    let mut worst = 0.0_f64;
    for (a, n) in analytic.iter().zip(&numerical) {
        if a.shape() != n.shape() {
            return None;
        }
        let scale = n.amax().max(1.0);
        worst = worst.max((a - n).amax() / scale);
    }
    Some(JacobianCheck { analytic, numerical, max_relative_error: worst })
}
