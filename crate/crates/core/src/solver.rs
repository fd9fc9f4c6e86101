//! Small bounded quasi-Newton minimizer.
//!
//! BFGS with box bounds handled by projection, central-difference gradients,
//! a per-iteration step clamp, and a backtracking line search that only ever
//! accepts improving points. The iterate trace is therefore monotone in the
//! objective, which downstream contracts rely on.

use nalgebra::DVector;
use nalgebra::DMatrix;

/// Inclusive per-variable bounds.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(upper.iter()).all(|(l, u)| l <= u));
        Self { lower, upper }
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuasiNewtonOptions {
    pub max_iterations: usize,
    /// Cap on the Euclidean norm of a single step.
    pub max_step: f64,
    /// Central finite-difference half step.
    pub fd_step: f64,
    pub gradient_tolerance: f64,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            max_step: 0.1,
            fd_step: 1e-6,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: DVector<f64>,
    pub value: f64,
    /// Objective after every accepted step, starting at the initial point.
    /// Monotone non-increasing by construction.
    pub trace: Vec<f64>,
    pub accepted_steps: usize,
}

fn central_gradient(
    f: &mut impl FnMut(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Minimize `f` within `bounds`, starting at `x0` (projected inside if
/// needed). Every iterate respects the bounds and every accepted step
/// strictly improves the objective.
pub fn minimize_bounded(
    mut f: impl FnMut(&DVector<f64>) -> f64,
    x0: DVector<f64>,
    bounds: &Bounds,
    options: &QuasiNewtonOptions,
) -> MinimizeResult {
    let n = x0.len();
    let mut x = bounds.project(&x0);
    let mut value = f(&x);
    let mut trace = vec![value];
    let mut accepted = 0usize;

    let mut inv_hessian = DMatrix::<f64>::identity(n, n);
    let mut gradient = central_gradient(&mut f, &x, options.fd_step);

    for _ in 0..options.max_iterations {
        if gradient.norm() < options.gradient_tolerance {
            break;
        }
        let mut direction = -(&inv_hessian * &gradient);
        if direction.dot(&gradient) >= 0.0 {
            // Curvature information went stale; fall back to steepest descent.
            inv_hessian = DMatrix::identity(n, n);
            direction = -gradient.clone();
        }
        let norm = direction.norm();
        if norm > options.max_step {
            direction *= options.max_step / norm;
        }

        // Backtracking onto the feasible set, accepting only improvements.
        let mut alpha = 1.0;
        let mut candidate = None;
        for _ in 0..40 {
            let trial = bounds.project(&(&x + &direction * alpha));
            let trial_value = f(&trial);
            if trial_value < value && trial != x {
                candidate = Some((trial, trial_value));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next_x, next_value)) = candidate else {
            break;
        };

        let next_gradient = central_gradient(&mut f, &next_x, options.fd_step);
        let s = &next_x - &x;
        let y = &next_gradient - &gradient;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            // Standard BFGS inverse update.
            let rho = 1.0 / sy;
            let identity = DMatrix::<f64>::identity(n, n);
            let left = &identity - &s * y.transpose() * rho;
            let right = &identity - &y * s.transpose() * rho;
            inv_hessian = &left * inv_hessian * &right + &s * s.transpose() * rho;
        }

        x = next_x;
        value = next_value;
        gradient = next_gradient;
        trace.push(value);
        accepted += 1;
    }

    MinimizeResult {
        x,
        value,
        trace,
        accepted_steps: accepted,
    }
}
