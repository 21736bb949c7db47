//! Principal eigenpair of the discrete operator, the sup-characterization,
//! the min-max value over finite families, and the comparison-principle
//! counterexample for large drift oscillation.
//!
//! With `ℒ_V` the assembled matrix, the principal eigenvalue `λ₁` is the
//! eigenvalue of `-ℒ_V` with a positive eigenvector. For positive `φ` the
//! Collatz–Wielandt quotients `q_i = (-ℒ_V φ)_i / φ_i` bracket it:
//! `min q ≤ λ₁ ≤ max q`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::discretize::{AssembledOperator, GridFunction};
use crate::error::{Error, Result};
use crate::function::SmoothFunction;
use crate::kernel_field::KernelSpec;
use crate::nonlocal_ops::{apply_b, apply_lk, QuadratureScheme};

/// Principal eigenpair.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    /// Positive, normalized to unit sup-norm.
    pub phi1: GridFunction,
    /// `‖ℒ_V φ₁ + λ₁ φ₁‖_∞`.
    pub residual: f64,
    pub iterations: usize,
    /// Final Collatz–Wielandt bracket.
    pub bracket: (f64, f64),
}

/// Collatz–Wielandt quotients `(-ℒ_V φ)_i / φ_i`.
pub fn cw_quotients(op: &AssembledOperator, phi: &[f64]) -> Vec<f64> {
    let lphi = op.apply(phi);
    lphi.iter().zip(phi).map(|(l, p)| -l / p).collect()
}

fn bracket(q: &[f64]) -> (f64, f64) {
    q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    })
}

/// Principal eigenpair by shifted inverse iteration: `φ_{k+1}` solves
/// `(ℒ_V + σ) φ_{k+1} = -φ_k`, is normalized in sup-norm, and the shift
/// `σ` is raised to the current lower Collatz–Wielandt bound a few times.
/// Stops when the bracket width is below `tol · max(1, |λ|)`.
pub fn principal_eigenpair(op: &AssembledOperator, tol: f64, max_iter: usize) -> Result<EigenPair> {
    let n = op.len();
    if op.drift_osc >= 1.0 {
        log::warn!(
            "drift oscillation {} ≥ 1: positivity of the principal eigenfunction is not guaranteed",
            op.drift_osc
        );
    }
    let minus = -&op.matrix;
    let mut phi = vec![1.0; n];
    let (mut lo, mut hi) = bracket(&cw_quotients(op, &phi));
    let width = |lo: f64, hi: f64| hi - lo;
    let gap_floor = 1e-3 * (hi - lo).abs().max(1.0) * f64::EPSILON.sqrt();
    let mut sigma = lo - (hi - lo).max(1.0);
    let mut lu = factor(&minus, sigma)?;
    let mut refactors = 0;
    let mut residual_history: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let next = lu
            .solve(&DVector::from_column_slice(&phi))
            .ok_or_else(|| Error::Solver {
                message: "shifted operator became singular".into(),
                condition: f64::INFINITY,
            })?;
        let scale = next.amax();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: f64::NAN,
            });
        }
        let candidate: Vec<f64> = next.iter().map(|v| v / scale).collect();
        let min = candidate.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            return Err(Error::Positivity(format!(
                "iterate changes sign (min {min:.3e}) after {it} steps; drift oscillation {}",
                op.drift_osc
            )));
        }
        phi = candidate;
        let (l, h) = bracket(&cw_quotients(op, &phi));
        lo = l;
        hi = h;
        let lambda = 0.5 * (lo + hi);
        residual_history.push(width(lo, hi));
        if width(lo, hi) <= tol * lambda.abs().max(1.0) {
            let lambda1 = rayleigh_like(op, &phi, lo, hi);
            let residual = eigen_residual(op, &phi, lambda1);
            return Ok(EigenPair {
                lambda1,
                phi1: op.grid(phi)?,
                residual,
                iterations: it,
                bracket: (lo, hi),
            });
        }
        // raise the shift towards λ₁ while staying below it
        if refactors < 6 && it % 3 == 0 {
            let target = lo - (0.05 * width(lo, hi)).max(gap_floor);
            if target > sigma {
                sigma = target;
                lu = factor(&minus, sigma)?;
                refactors += 1;
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: residual_history.last().copied().unwrap_or(f64::NAN),
    })
}

fn factor(minus: &DMatrix<f64>, sigma: f64) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let mut a = minus.clone();
    for i in 0..a.nrows() {
        a[(i, i)] -= sigma;
    }
    let lu = a.lu();
    if !lu.is_invertible() {
        return Err(Error::Solver {
            message: format!("shift {sigma} hits the spectrum"),
            condition: f64::INFINITY,
        });
    }
    Ok(lu)
}

/// `λ` inside the bracket minimizing `‖-ℒ_V φ - λ φ‖₂`.
fn rayleigh_like(op: &AssembledOperator, phi: &[f64], lo: f64, hi: f64) -> f64 {
    let lphi = op.apply(phi);
    let num: f64 = lphi.iter().zip(phi).map(|(l, p)| -l * p).sum();
    let den: f64 = phi.iter().map(|p| p * p).sum();
    (num / den).clamp(lo, hi)
}

/// `‖ℒ_V φ + λ φ‖_∞ / ‖φ‖_∞`.
pub fn eigen_residual(op: &AssembledOperator, phi: &[f64], lambda: f64) -> f64 {
    let lphi = op.apply(phi);
    let r = lphi
        .iter()
        .zip(phi)
        .fold(0.0f64, |m, (l, p)| m.max((l + lambda * p).abs()));
    let s = phi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    r / s
}

/// Principal eigenvalue from a dense eigensolve of `-ℒ_V`: the symmetric
/// solver when the matrix is symmetric, otherwise the real eigenvalue of
/// smallest real part (complex pairs are not principal).
pub fn dense_principal(op: &AssembledOperator) -> Result<f64> {
    let minus = -&op.matrix;
    let asym = (&minus - minus.transpose()).amax();
    if asym <= 1e-13 * minus.amax() {
        let sym = (&minus + minus.transpose()) * 0.5;
        return Ok(sym.symmetric_eigenvalues().min());
    }
    let ev = minus.complex_eigenvalues();
    let scale = minus.amax().max(1.0);
    ev.iter()
        .filter(|z| z.im.abs() <= 1e-8 * scale)
        .map(|z| z.re)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .ok_or_else(|| Error::Solver {
            message: "no real eigenvalue found".into(),
            condition: f64::NAN,
        })
}

/// Outcome of the sup-characterization test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupCheck {
    pub admissible: bool,
    /// `min_i (-ℒ_V φ - λ φ)_i / φ_i`; nonnegative iff `ℒ_V φ ≤ -λ φ`.
    pub margin: f64,
}

/// Checks `ℒ_V φ ≤ -λ φ` row-wise for a positive `φ`, up to `slack`.
pub fn sup_characterization_check(op: &AssembledOperator, phi: &[f64], lambda: f64, slack: f64) -> Result<SupCheck> {
    if phi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Domain("candidate must be strictly positive".into()));
    }
    let margin = cw_quotients(op, phi)
        .iter()
        .map(|q| q - lambda)
        .fold(f64::INFINITY, f64::min);
    Ok(SupCheck {
        admissible: margin >= -slack,
        margin,
    })
}

/// Largest `λ` admissible for the candidate `φ`: `min_i (-ℒ_V φ)_i / φ_i`.
pub fn admissible_lambda(op: &AssembledOperator, phi: &[f64]) -> Result<f64> {
    if phi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Domain("candidate must be strictly positive".into()));
    }
    Ok(bracket(&cw_quotients(op, phi)).0)
}

/// Value of the min-max problem over finite families.
#[derive(Debug, Clone, Serialize)]
pub struct MinMax {
    pub value: f64,
    /// Index of the minimizing measure.
    pub measure: usize,
    /// Index of the maximizing test function for that measure.
    pub test: usize,
}

/// `min_μ max_φ Σ_i μ_i (-ℒ_V φ)_i / φ_i` over discrete probability vectors
/// `μ` and positive test vectors `φ`.
pub fn minmax_value(op: &AssembledOperator, measures: &[Vec<f64>], tests: &[Vec<f64>]) -> Result<MinMax> {
    if measures.is_empty() || tests.is_empty() {
        return Err(Error::Input("families must be nonempty".into()));
    }
    for (k, mu) in measures.iter().enumerate() {
        let total: f64 = mu.iter().sum();
        if mu.len() != op.len() || mu.iter().any(|m| *m < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("measure {k} is not a probability vector")));
        }
    }
    let quotients: Vec<Vec<f64>> = tests
        .iter()
        .map(|phi| {
            if phi.len() != op.len() || phi.iter().any(|p| !(*p > 0.0)) {
                Err(Error::Input("test functions must be positive".into()))
            } else {
                Ok(cw_quotients(op, phi))
            }
        })
        .collect::<Result<_>>()?;
    let mut best = MinMax {
        value: f64::INFINITY,
        measure: 0,
        test: 0,
    };
    for (k, mu) in measures.iter().enumerate() {
        let (test, value) = quotients
            .iter()
            .map(|q| mu.iter().zip(q).map(|(m, v)| m * v).sum::<f64>())
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
            );
        if value < best.value {
            best = MinMax {
                value,
                measure: k,
                test,
            };
        }
    }
    Ok(best)
}

/// Left principal eigenvector `ψ` (positive, unit sum), from inverse
/// iteration on the transpose at the converged shift.
pub fn left_eigenvector(op: &AssembledOperator, lambda1: f64) -> Result<Vec<f64>> {
    let minus_t = -op.matrix.transpose();
    let mut shift = lambda1 - 1e-8 * lambda1.abs().max(1.0);
    let mut lu = factor(&minus_t, shift);
    while lu.is_err() {
        shift -= 1e-6 * lambda1.abs().max(1.0);
        lu = factor(&minus_t, shift);
    }
    let lu = lu?;
    let mut psi = DVector::from_element(op.len(), 1.0);
    for _ in 0..50 {
        let next = lu.solve(&psi).ok_or_else(|| Error::Solver {
            message: "transpose solve failed".into(),
            condition: f64::INFINITY,
        })?;
        psi = &next / next.amax();
    }
    let total: f64 = psi.iter().sum();
    if psi.iter().any(|v| *v <= 0.0) {
        return Err(Error::Positivity("left eigenvector changes sign".into()));
    }
    Ok(psi.iter().map(|v| v / total).collect())
}

/// Report of the comparison-principle counterexample.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub s: f64,
    /// Height of the drift outside `(-1, 1)`.
    pub drift_height: f64,
    pub points: Vec<f64>,
    /// `(-Δ)^s u + B(h, u)` at the points.
    pub values: Vec<f64>,
    pub max_value: f64,
    pub u_at_origin: f64,
}

/// `u = (1 - x²)_+^{1+s}`.
pub fn critical_profile(s: f64) -> SmoothFunction {
    SmoothFunction::new(1, move |x| {
        let r = 1.0 - x[0] * x[0];
        if r > 0.0 {
            r.powf(1.0 + s)
        } else {
            0.0
        }
    })
    .with_support(vec![0.0], 1.0)
    .with_range(0.0, 1.0)
    .with_label("(1-x^2)_+^{1+s}")
}

/// `h = H · 1_{|x| ≥ 1}`.
pub fn outer_step_drift(height: f64) -> SmoothFunction {
    SmoothFunction::new(1, move |x| if x[0].abs() >= 1.0 { height } else { 0.0 })
        .with_range(0.0_f64.min(height), 0.0_f64.max(height))
        .with_label("outer step drift")
}

/// Evaluates `(-Δ)^s u + B(h, u)` for `u = (1 - x²)_+^{1+s}` and a drift
/// vanishing on `(-1, 1)` and equal to `height` outside, at `points`.
/// For large heights the values are `≤ 0` although `u(0) = 1 > 0`.
pub fn maxprinciple_violation_demo(
    s: f64,
    height: f64,
    points: &[f64],
    quad: &QuadratureScheme,
) -> Result<ViolationReport> {
    let spec = KernelSpec::fractional_laplacian(1, s)?;
    let u = critical_profile(s);
    let h = outer_step_drift(height);
    let values = points
        .iter()
        .map(|&x| {
            let lk = apply_lk(&u, &spec, &[x], quad)?;
            let b = if height == 0.0 {
                0.0
            } else {
                apply_b(&h, &u, &spec, &[x], quad)?
            };
            Ok(-lk + b)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_value = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(ViolationReport {
        s,
        drift_height: height,
        points: points.to_vec(),
        values,
        max_value,
        u_at_origin: u.eval(&[0.0]),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::discretize::{assemble, LatticeDomain};
    use approx::assert_relative_eq;

    fn op_1d(n: usize, s: f64, h: SmoothFunction, v: impl Fn(f64) -> f64) -> AssembledOperator {
        let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, 2.0 / n as f64).unwrap());
        let pot: Vec<f64> = lat.points().iter().map(|p| v(p[0])).collect();
        assemble(&lat, &KernelSpec::fractional_laplacian(1, s).unwrap(), &h, &pot).unwrap()
    }

    #[test]
    fn symmetric_case_matches_dense_solver() {
        let op = op_1d(60, 0.5, SmoothFunction::constant(1, 0.0), |x| -x * x);
        let ep = principal_eigenpair(&op, 1e-10, 500).unwrap();
        let dense = dense_principal(&op).unwrap();
        assert!(
            (ep.lambda1 - dense).abs() < 1e-9 * dense.abs(),
            "{} {dense}",
            ep.lambda1
        );
        assert!(ep.phi1.min() > 0.0);
        assert!(ep.residual < 1e-8);
        assert_relative_eq!(ep.phi1.sup_norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn drifted_case_matches_dense_solver() {
        let h = SmoothFunction::new(1, |x| 0.45 * (3.0 * x[0]).sin()).with_range(-0.45, 0.45);
        let op = op_1d(50, 0.7, h, |_| 0.0);
        let ep = principal_eigenpair(&op, 1e-10, 500).unwrap();
        let dense = dense_principal(&op).unwrap();
        assert!((ep.lambda1 - dense).abs() < 1e-8 * dense.abs());
    }

    #[test]
    fn shift_identity_and_monotonicity_in_v() {
        let h = SmoothFunction::new(1, |x| 0.3 * x[0]).with_range(-0.3, 0.3);
        let op = op_1d(40, 0.4, h, |_| 0.0);
        let base = principal_eigenpair(&op, 1e-11, 500).unwrap().lambda1;
        let c = 2.75;
        let shifted = principal_eigenpair(&op.shifted(c), 1e-11, 500).unwrap().lambda1;
        assert!((shifted - (base - c)).abs() < 1e-9 * base.abs());
        let lower: Vec<f64> = op.lattice.points().iter().map(|p| -p[0] * p[0]).collect();
        let below = principal_eigenpair(&op.with_potential(&lower).unwrap(), 1e-11, 500)
            .unwrap()
            .lambda1;
        assert!(below >= base);
    }

    #[test]
    fn sup_characterization() {
        let op = op_1d(40, 0.5, SmoothFunction::constant(1, 0.0), |_| 0.0);
        let ep = principal_eigenpair(&op, 1e-11, 500).unwrap();
        let phi = &ep.phi1.values;
        let ok = sup_characterization_check(&op, phi, ep.lambda1, 1e-8).unwrap();
        assert!(ok.admissible && ok.margin.abs() < 1e-8);
        let bad = sup_characterization_check(&op, phi, ep.lambda1 * 1.1, 1e-8).unwrap();
        assert!(!bad.admissible);
        let other: Vec<f64> = op.lattice.points().iter().map(|p| 1.1 - p[0] * p[0]).collect();
        assert!(admissible_lambda(&op, &other).unwrap() <= ep.lambda1 + 1e-10);
    }

    #[test]
    fn minmax_with_eigenfunction_is_exact() {
        let h = SmoothFunction::new(1, |x| 0.2 * x[0]).with_range(-0.2, 0.2);
        let op = op_1d(30, 0.6, h, |_| 0.0);
        let ep = principal_eigenpair(&op, 1e-11, 500).unwrap();
        let n = op.len();
        let uniform = vec![1.0 / n as f64; n];
        let mut point = vec![0.0; n];
        point[3] = 1.0;
        let mm = minmax_value(&op, &[uniform.clone(), point], std::slice::from_ref(&ep.phi1.values)).unwrap();
        assert!((mm.value - ep.lambda1).abs() < 1e-8 * ep.lambda1);
        let bad = minmax_value(&op, &[vec![0.5; n]], std::slice::from_ref(&ep.phi1.values));
        assert!(bad.is_err());
    }

    #[test]
    fn left_eigenvector_is_positive() {
        let h = SmoothFunction::new(1, |x| 0.4 * x[0]).with_range(-0.4, 0.4);
        let op = op_1d(30, 0.5, h, |_| 0.0);
        let ep = principal_eigenpair(&op, 1e-11, 500).unwrap();
        let psi = left_eigenvector(&op, ep.lambda1).unwrap();
        let lt = op.matrix.transpose() * DVector::from_column_slice(&psi);
        for (a, b) in lt.iter().zip(&psi) {
            assert!((a + ep.lambda1 * b).abs() < 1e-7 * ep.lambda1 * psi.iter().cloned().fold(0.0, f64::max));
        }
    }

    #[test]
    fn outer_step_drift_term_has_closed_form() {
        // B(h, u)(x) = -½ H u(x) ∫_{|y|>1} K dy for |x| < 1
        let s = 0.5;
        let quad = QuadratureScheme::default();
        let spec = KernelSpec::fractional_laplacian(1, s).unwrap();
        let height = 20.0;
        for &x in &[0.0, 0.4, -0.7] {
            let u = critical_profile(s).eval(&[x]);
            let mass = spec.scale() * ((1.0 - x).powf(-2.0 * s) + (1.0 + x).powf(-2.0 * s)) / (2.0 * s);
            let b = apply_b(&outer_step_drift(height), &critical_profile(s), &spec, &[x], &quad).unwrap();
            assert_relative_eq!(b, -0.5 * height * u * mass, max_relative = 1e-7);
        }
    }
}
