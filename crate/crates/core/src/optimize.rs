//! Minimizers used by the variational modules: quasi-Newton descent (via
//! `argmin`), Brent's method in one variable, and a damped Newton method for
//! small convex problems with an analytic Hessian.

use std::sync::Mutex;

use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason};
use argmin::solver::brent::BrentOpt;
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Stopping rules for the descent methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    /// Stop once the gradient sup-norm falls below this.
    pub grad_tol: f64,
    pub max_iter: u64,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 500,
            memory: 12,
        }
    }
}

/// Result of a descent run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Sup-norm of the gradient at `x`.
    pub grad_norm: f64,
    pub iterations: u64,
    pub converged: bool,
    /// Objective values at successive accepted iterates.
    pub trace: Vec<f64>,
}

type Evaluation = (Vec<f64>, f64, Vec<f64>);

struct Problem<'a, F> {
    f: &'a F,
    last: Mutex<Option<Evaluation>>,
}

impl<F> Problem<'_, F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut last = self.last.lock().expect("evaluation cache poisoned");
        if let Some((p, v, g)) = last.as_ref() {
            if p.as_slice() == x {
                return (*v, g.clone());
            }
        }
        let (v, g) = (self.f)(x);
        *last = Some((x.to_vec(), v, g.clone()));
        (v, g)
    }
}

impl<F> CostFunction for Problem<'_, F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(p).0)
    }
}

impl<F> Gradient for Problem<'_, F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(p).1)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes a smooth function given as `x ↦ (value, gradient)` by L-BFGS
/// with a More–Thuente line search.
pub fn lbfgs<F>(f: F, x0: Vec<f64>, opts: &DescentOptions) -> Result<Minimum>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (v0, g0) = f(&x0);
    if !v0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Err(Error::Optimization {
            message: "objective is not finite at the starting point".into(),
            trace: vec![v0],
        });
    }
    if sup(&g0) < opts.grad_tol {
        return Ok(Minimum {
            x: x0,
            value: v0,
            grad_norm: sup(&g0),
            iterations: 0,
            converged: true,
            trace: vec![v0],
        });
    }
    let problem = Problem {
        f: &f,
        last: Mutex::new(None),
    };
    let n = x0.len() as f64;
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), opts.memory)
        .with_tolerance_grad(opts.grad_tol * 1e-2)
        .and_then(|s| s.with_tolerance_cost(0.0))
        .map_err(|e| Error::Optimization {
            message: e.to_string(),
            trace: vec![v0],
        })?;
    let mut trace = vec![v0];
    let mut x = x0;
    let mut iterations = 0;
    // restart in short rounds so the sup-norm test and the trace are ours
    let round = 50u64.min(opts.max_iter.max(1));
    let mut stalled = false;
    while iterations < opts.max_iter {
        let run = Executor::new(
            Problem {
                f: problem.f,
                last: Mutex::new(None),
            },
            solver.clone(),
        )
        .configure(|st| st.param(x.clone()).max_iters(round.min(opts.max_iter - iterations)))
        .run();
        let res = match run {
            Ok(r) => r,
            Err(e) => {
                if iterations > 0 {
                    stalled = true;
                    log::debug!("line search stopped after {iterations} iterations: {e}");
                    break;
                }
                return Err(Error::Optimization {
                    message: e.to_string(),
                    trace,
                });
            }
        };
        let state = res.state();
        iterations += state.get_iter().max(1);
        let best = state.get_best_param().cloned().unwrap_or_else(|| x.clone());
        let value = state.get_best_cost();
        if !value.is_finite() {
            return Err(Error::Optimization {
                message: "objective diverged".into(),
                trace,
            });
        }
        let improved = value < *trace.last().expect("nonempty") - 1e-15 * value.abs().max(1.0);
        x = best;
        trace.push(value);
        let g = problem.eval(&x).1;
        if sup(&g) < opts.grad_tol {
            break;
        }
        if !improved || matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged)) {
            stalled = true;
            break;
        }
    }
    let (value, g) = problem.eval(&x);
    let grad_norm = sup(&g);
    let converged = grad_norm < opts.grad_tol || (stalled && grad_norm < opts.grad_tol * n.sqrt() * 1e2);
    Ok(Minimum {
        x,
        value,
        grad_norm,
        iterations,
        converged,
        trace,
    })
}

struct Scalar<'a, F>(&'a F);

impl<F: Fn(f64) -> f64> CostFunction for Scalar<'_, F> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, p: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok((self.0)(*p))
    }
}

/// Brent's method on `[a, b]`; returns `(argmin, min)`.
pub fn brent<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let solver = BrentOpt::new(a, b).set_tolerance(tol, tol * 1e-2);
    let res = Executor::new(Scalar(&f), solver)
        .configure(|st| st.max_iters(500))
        .run()
        .map_err(|e| Error::Optimization {
            message: e.to_string(),
            trace: vec![],
        })?;
    let x = *res.state().get_best_param().ok_or_else(|| Error::Optimization {
        message: "Brent's method returned no point".into(),
        trace: vec![],
    })?;
    Ok((x, f(x)))
}

/// Damped Newton iteration for a convex objective with analytic Hessian,
/// `x ↦ (value, gradient, hessian)`, with Armijo backtracking.
pub fn newton<F>(f: F, x0: Vec<f64>, opts: &DescentOptions) -> Result<Minimum>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>, DMatrix<f64>),
{
    let mut x = x0;
    let (mut value, mut grad, mut hess) = f(&x);
    let mut trace = vec![value];
    let mut iterations = 0;
    while sup(&grad) >= opts.grad_tol && iterations < opts.max_iter {
        iterations += 1;
        let n = x.len();
        // Levenberg-style shift keeps the step a descent direction
        let scale = hess.diagonal().amax().max(1e-300);
        let mut shift = 0.0;
        let step = loop {
            let mut m = hess.clone();
            for i in 0..n {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&DVector::from_column_slice(&grad));
            }
            shift = if shift == 0.0 { 1e-12 * scale } else { shift * 10.0 };
            if shift > 1e6 * scale {
                return Err(Error::Optimization {
                    message: "Newton system could not be regularized".into(),
                    trace,
                });
            }
        };
        let slope: f64 = -step.dot(&DVector::from_column_slice(&grad));
        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - t * d).collect();
            let (v, g, h) = f(&trial);
            if v.is_finite() && v <= value + 1e-4 * t * slope {
                break Some((trial, v, g, h));
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((xn, v, g, h)) => {
                x = xn;
                value = v;
                grad = g;
                hess = h;
                trace.push(value);
            }
            None => break,
        }
    }
    let grad_norm = sup(&grad);
    Ok(Minimum {
        x,
        value,
        grad_norm,
        iterations,
        converged: grad_norm < opts.grad_tol,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (v, g)
    }

    #[test]
    fn lbfgs_finds_rosenbrock_minimum() {
        let m = lbfgs(rosenbrock, vec![-1.2, 1.0], &DescentOptions::default()).unwrap();
        assert!(m.converged, "{m:?}");
        assert_relative_eq!(m.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(m.x[1], 1.0, epsilon = 1e-6);
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lbfgs_reports_divergence() {
        let err = lbfgs(|_| (f64::NAN, vec![0.0]), vec![0.0], &DescentOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Optimization { .. }));
    }

    #[test]
    fn brent_finds_interior_minimum() {
        let (x, v) = brent(|r| r.cosh() + 0.5 * r.sinh(), -5.0, 5.0, 1e-12).unwrap();
        assert_relative_eq!(x.tanh(), -0.5, epsilon = 1e-8);
        assert_relative_eq!(v, 3f64.sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn newton_solves_log_sum_exp() {
        // f(z) = Σ_ij a_ij e^{z_j - z_i} + (z_0)^2, convex with unique minimizer
        let a = [[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [3.0, 0.5, 0.0]];
        let f = |z: &[f64]| {
            let mut v = z[0] * z[0];
            let mut g = vec![0.0; 3];
            let mut h = DMatrix::zeros(3, 3);
            g[0] += 2.0 * z[0];
            h[(0, 0)] += 2.0;
            for i in 0..3 {
                for j in 0..3 {
                    let e = a[i][j] * (z[j] - z[i]).exp();
                    v += e;
                    g[j] += e;
                    g[i] -= e;
                    h[(j, j)] += e;
                    h[(i, i)] += e;
                    h[(i, j)] -= e;
                    h[(j, i)] -= e;
                }
            }
            (v, g, h)
        };
        let m = newton(f, vec![0.0; 3], &DescentOptions::default()).unwrap();
        assert!(m.converged);
        let l = lbfgs(
            |z| {
                let (v, g, _) = f(z);
                (v, g)
            },
            vec![0.0; 3],
            &DescentOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(m.value, l.value, max_relative = 1e-10);
    }
}
