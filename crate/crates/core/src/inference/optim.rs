//! Box-constrained quasi-Newton minimization with numerical gradients.
//!
//! Projected BFGS: the inverse-Hessian approximation acts on the variables
//! not held at a bound, steps are projected back onto the box, and a
//! backtracking Armijo search along the projected path keeps every accepted
//! step strictly decreasing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Convergence when the projected-gradient ∞-norm falls below this.
    pub gradient_tolerance: f64,
    /// Convergence when the relative objective decrease falls below this.
    pub relative_tolerance: f64,
    /// Central-difference step relative to `max(|x|, 1)`.
    pub gradient_step: f64,
    /// Largest move per coordinate in the first iteration.
    pub initial_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            relative_tolerance: 1e-12,
            gradient_step: 1e-6,
            initial_step: 1.0,
        }
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    RelativeChange,
    /// No decrease found along the projected steepest-descent path.
    LineSearch,
    MaxIterations,
    /// The start point has a non-finite objective.
    NonFiniteStart,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::Gradient | StopReason::RelativeChange | StopReason::LineSearch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

struct Counted<'a> {
    f: &'a dyn Fn(&[f64]) -> f64,
    evaluations: usize,
}

impl Counted<'_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn step_size(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient; one-sided where a side is non-finite.
fn gradient(f: &mut Counted, x: &[f64], fx: f64, rel: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let h = step_size(x[i], rel);
        y[i] = x[i] + h;
        let fp = f.eval(&y);
        y[i] = x[i] - h;
        let fm = f.eval(&y);
        y[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Components of `g` that can still move the point inside the box.
fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            if (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0` (projected onto the box).
pub fn minimize_box(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &OptimOptions,
) -> OptimOutcome {
    let p = x0.len();
    let mut fc = Counted { f, evaluations: 0 };
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = fc.eval(&x);
    if !fx.is_finite() {
        return OptimOutcome {
            x,
            value: fx,
            iterations: 0,
            evaluations: fc.evaluations,
            stop: StopReason::NonFiniteStart,
        };
    }
    let mut g = gradient(&mut fc, &x, fx, opts.gradient_step);
    let mut h_inv = DMatrix::<f64>::identity(p, p);
    let mut fresh = true;
    let mut first = true;
    let mut iterations = 0;
    let stop = loop {
        let pg = projected_gradient(&x, &g, lower, upper);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.gradient_tolerance {
            break StopReason::Gradient;
        }
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }
        iterations += 1;

        let free: Vec<usize> = (0..p).filter(|&i| pg[i] != 0.0).collect();
        let mut d = vec![0.0; p];
        for &i in &free {
            d[i] = -free.iter().map(|&j| h_inv[(i, j)] * g[j]).sum::<f64>();
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(p, p);
            fresh = true;
            d = pg.iter().map(|v| -v).collect();
        }
        let mut alpha = 1.0;
        if first {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > opts.initial_step {
                alpha = opts.initial_step / dmax;
            }
        }

        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = (0..p).map(|i| x[i] + alpha * d[i]).collect();
            project(&mut xn, lower, upper);
            let dec: f64 = (0..p).map(|i| g[i] * (xn[i] - x[i])).sum();
            if xn == x {
                break;
            }
            let fnew = fc.eval(&xn);
            let ok = if dec < 0.0 {
                fnew <= fx + 1e-4 * dec
            } else {
                fnew < fx
            };
            if ok && fnew.is_finite() {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break StopReason::LineSearch;
            }
            h_inv = DMatrix::identity(p, p);
            fresh = true;
            continue;
        };
        first = false;

        let gn = gradient(&mut fc, &xn, fnew, opts.gradient_step);
        let s = DVector::from_iterator(p, (0..p).map(|i| xn[i] - x[i]));
        let y = DVector::from_iterator(p, (0..p).map(|i| gn[i] - g[i]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                // scale the initial approximation to the observed curvature
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let rel = (fx - fnew).abs() / fx.abs().max(fnew.abs()).max(1.0);
        x = xn;
        fx = fnew;
        g = gn;
        if rel < opts.relative_tolerance {
            break StopReason::RelativeChange;
        }
    };
    OptimOutcome {
        x,
        value: fx,
        iterations,
        evaluations: fc.evaluations,
        stop,
    }
}

/// Central-difference Hessian with per-coordinate step `rel · max(|x|, 1)`.
///
/// Points outside any box are evaluated as-is; the caller's objective must
/// accept them.
pub fn finite_difference_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], rel: f64) -> DMatrix<f64> {
    let p = x.len();
    let h: Vec<f64> = x.iter().map(|&v| step_size(v, rel)).collect();
    let f0 = f(x);
    let mut y = x.to_vec();
    let mut hess = DMatrix::zeros(p, p);
    for i in 0..p {
        y[i] = x[i] + h[i];
        let fp = f(&y);
        y[i] = x[i] - h[i];
        let fm = f(&y);
        y[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                y[i] = x[i] + si * h[i];
                y[j] = x[j] + sj * h[j];
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_interior_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + x[0] * x[1];
        let out = minimize_box(&f, &[0.0, 0.0], &[-5.0, -5.0], &[5.0, 5.0], &OptimOptions::default());
        // ∇f = 0: 2(x−1) + y = 0, 20(y+2) + x = 0
        let y = (-40.0 - 1.0) / (20.0 - 0.5);
        let x = 1.0 - y / 2.0;
        assert!((out.x[0] - x).abs() < 1e-5 && (out.x[1] - y).abs() < 1e-5, "{out:?}");
        assert!(out.stop.converged());
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let out = minimize_box(&f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &OptimOptions::default());
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{out:?}");
    }

    #[test]
    fn bound_constrained_minimum() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let out = minimize_box(&f, &[0.0, 0.0], &[-1.0, 0.0], &[1.0, 1.0], &OptimOptions::default());
        assert_eq!(out.x, vec![1.0, 0.0]);
    }

    #[test]
    fn monotone_and_nonfinite_start() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 0.5).powi(2) };
        let out = minimize_box(&f, &[2.0], &[-1.0], &[3.0], &OptimOptions::default());
        assert!((out.x[0] - 0.5).abs() < 1e-6);
        let out = minimize_box(&f, &[-0.5], &[-1.0], &[3.0], &OptimOptions::default());
        assert_eq!(out.stop, StopReason::NonFiniteStart);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1];
        let h = finite_difference_hessian(&f, &[0.3, -2.0], 1e-4);
        let want = [[6.0, 2.0], [2.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[(i, j)] - want[i][j]).abs() < 1e-6);
            }
        }
    }
}
