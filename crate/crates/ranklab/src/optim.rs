//! Quasi-Newton (BFGS) maximizer over value + gradient, plus the
//! finite-difference Hessian used for standard errors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const GRAD_TOL: f64 = 1e-6;
pub const REL_F_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 500;

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Maximize `f` (returning value and gradient) by BFGS with backtracking
/// line search. Converged when the gradient max-norm falls below `GRAD_TOL`
/// or the relative objective change below `REL_F_TOL`.
pub fn maximize<F>(f: F, x0: &[f64], max_iters: usize) -> Result<Solution>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g) = f(x.as_slice())?;
    let mut grad = DVector::from_vec(g);
    let mut h_inv = DMatrix::<f64>::identity(n, n);

    for iter in 0..max_iters {
        let gnorm = grad.amax();
        if gnorm <= GRAD_TOL {
            return Ok(Solution {
                x: x.as_slice().to_vec(),
                value: fx,
                iterations: iter,
                grad_norm: gnorm,
            });
        }

        // ascent direction
        let mut dir = &h_inv * &grad;
        if dir.dot(&grad) <= 0.0 {
            // reset a corrupted approximation
            h_inv = DMatrix::identity(n, n);
            dir = grad.clone();
        }

        // backtracking Armijo line search
        let mut step = 1.0;
        let slope = dir.dot(&grad);
        let mut accepted = None;
        for _ in 0..60 {
            let x_new = &x + &dir * step;
            match f(x_new.as_slice()) {
                Ok((f_new, g_new)) if f_new.is_finite() && f_new >= fx + 1e-4 * step * slope => {
                    accepted = Some((x_new, f_new, DVector::from_vec(g_new)));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let (x_new, f_new, g_new) = accepted.ok_or_else(|| {
            Error::Numerical("line search failed to find an ascent step".into())
        })?;

        // internally this is BFGS on -f, so the curvature pair uses the
        // negated gradient difference
        let s = &x_new - &x;
        let y = &grad - &g_new;
        let sy = s.dot(&y);
        // skip the update when curvature is unusable
        if sy > 1e-12 * s.norm() * y.norm().max(1e-300) {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // BFGS inverse update
            h_inv = &h_inv + (sy + yhy) * rho * rho * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }

        let rel_change = (f_new - fx).abs() / (1.0 + fx.abs());
        x = x_new;
        fx = f_new;
        grad = g_new;
        if rel_change <= REL_F_TOL {
            return Ok(Solution {
                x: x.as_slice().to_vec(),
                value: fx,
                iterations: iter + 1,
                grad_norm: grad.amax(),
            });
        }
    }

    Err(Error::Numerical(format!(
        "BFGS did not converge in {max_iters} iterations (|grad| = {:.3e})",
        grad.amax()
    )))
}

/// Observed-information standard errors: central finite differences of the
/// analytic gradient give the Hessian of the log-likelihood; SEs are the
/// square roots of the diagonal of (-H)^-1.
pub fn observed_info_se<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let dx = step * (1.0 + x[j].abs());
        let mut up = x.to_vec();
        up[j] += dx;
        let mut dn = x.to_vec();
        dn[j] -= dx;
        let gu = f(&up)?.1;
        let gd = f(&dn)?.1;
        for i in 0..n {
            h[(i, j)] += (gu[i] - gd[i]) / (2.0 * dx);
        }
    }
    // symmetrize
    let h = (&h + h.transpose()) * 0.5;
    let neg_h = -h;
    let inv = neg_h.try_inverse().ok_or_else(|| {
        Error::Numerical("observed information matrix is singular".into())
    })?;
    let mut se = Vec::with_capacity(n);
    for i in 0..n {
        let v = inv[(i, i)];
        if v <= 0.0 {
            return Err(Error::Numerical(format!(
                "observed information not positive definite (var[{i}] = {v:.3e})"
            )));
        }
        se.push(v.sqrt());
    }
    Ok(se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn maximizes_concave_quadratic() {
        // f(x) = -(x0-1)^2 - 2(x1+2)^2
        let f = |x: &[f64]| {
            let v = -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 2.0).powi(2);
            Ok((v, vec![-2.0 * (x[0] - 1.0), -4.0 * (x[1] + 2.0)]))
        };
        let sol = maximize(f, &[0.0, 0.0], 100).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(sol.x[1], -2.0, epsilon = 1e-5);
    }

    #[test]
    fn se_for_quadratic_matches_curvature() {
        // f = -0.5 * a x^2 => -H = a, var = 1/a
        let a = 4.0;
        let f = move |x: &[f64]| Ok((-0.5 * a * x[0] * x[0], vec![-a * x[0]]));
        let se = observed_info_se(f, &[0.3], 1e-5).unwrap();
        assert_relative_eq!(se[0], (1.0f64 / a).sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn rosenbrock_style_nonquadratic() {
        let f = |x: &[f64]| {
            let v = -((1.0 - x[0]).powi(2) + 10.0 * (x[1] - x[0] * x[0]).powi(2));
            let g = vec![
                2.0 * (1.0 - x[0]) + 40.0 * x[0] * (x[1] - x[0] * x[0]),
                -20.0 * (x[1] - x[0] * x[0]),
            ];
            Ok((v, g))
        };
        let sol = maximize(f, &[-1.2, 1.0], 500).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-3, "{:?}", sol.x);
        assert!((sol.x[1] - 1.0).abs() < 1e-3, "{:?}", sol.x);
    }
}
