//! Boundary-layer integrals and barrier functions.
//!
//! Near a flat boundary `{y₁ = 0}` the kernel integrated over the tangential
//! variables is
//!
//! ```text
//! J(A, y₁) = ∫_{ℝ^{N-1}} (yᵀ A y)^{-(N+2s)/2} dy'
//!          = |y₁|^{-(1+2s)} |det A'|^s |det A|^{-(1+2s)/2} C*(N, s),
//! C*(N, s) = ∫_{ℝ^{N-1}} (1 + |t|²)^{-(N+2s)/2} dt,
//! ```
//!
//! with `A'` the lower-right `(N-1)×(N-1)` block. Barrier functions `d^α` of
//! the distance to the boundary satisfy `L_K d^α ≍ d^{α-2s}` with a sign
//! fixed by `α` versus `s`.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::function::SmoothFunction;
use crate::inverse_problem::loglog_slope;
use crate::kernel_field::{quad_form, KernelSpec, SpdMatrix};
use crate::nonlocal_ops::{apply_b, apply_lk, QuadratureScheme};
use crate::quadrature::{integrate_adaptive, AdaptiveOptions};

fn check_s(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("s = {s} must lie in (0, 1)")))
    }
}

/// `C*(N, s)` by the radial reduction
/// `|S^{N-2}| ∫₀^∞ r^{N-2} (1 + r²)^{-(N+2s)/2} dr = π^{(N-1)/2} Γ(½ + s) / Γ(N/2 + s)`.
/// For `N = 1` the integral is over a point and `C* = 1`.
pub fn c_star(dim: usize, s: f64) -> Result<f64> {
    check_s(s)?;
    if dim == 0 {
        return Err(Error::Input("dimension must be positive".into()));
    }
    if dim == 1 {
        return Ok(1.0);
    }
    let n = dim as f64;
    Ok((0.5 * (n - 1.0) * std::f64::consts::PI.ln() + ln_gamma(0.5 + s) - ln_gamma(0.5 * n + s)).exp())
}

fn quad_opts() -> AdaptiveOptions {
    AdaptiveOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-12,
        max_intervals: 2000,
    }
}

/// `∫_{ℝ^m} φ(t) dt` by nested adaptive rules in Cartesian coordinates,
/// each axis mapped by `t = c_k + w x/(1 - x²)`.
fn nested_integral(m: usize, center: &[f64], width: f64, phi: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    fn level(
        k: usize,
        m: usize,
        t: &mut Vec<f64>,
        center: &[f64],
        width: f64,
        phi: &dyn Fn(&[f64]) -> f64,
        outer: &mut f64,
    ) -> f64 {
        if k == m {
            return phi(t);
        }
        let est = integrate_adaptive(
            |x: f64| {
                let one = 1.0 - x * x;
                if one <= 0.0 {
                    return 0.0;
                }
                t[k] = center[k] + width * x / one;
                let jac = width * (1.0 + x * x) / (one * one);
                jac * level(k + 1, m, t, center, width, phi, &mut 0.0)
            },
            -1.0,
            1.0,
            &quad_opts(),
        );
        // inner levels feed their error into the outer estimate
        *outer = est.error / est.value.abs().max(1e-300);
        est.value
    }
    let mut t = vec![0.0; m];
    let mut worst: f64 = 0.0;
    let v = level(0, m, &mut t, center, width, phi, &mut worst);
    if worst > 1e-7 {
        return Err(Error::Resolution(format!(
            "tangential integral not resolved (relative error estimate {worst:.2e})"
        )));
    }
    Ok(v)
}

/// `C*(N, s)` by direct quadrature over `ℝ^{N-1}`.
pub fn c_star_quadrature(dim: usize, s: f64) -> Result<f64> {
    check_s(s)?;
    if dim <= 1 {
        return c_star(dim.max(1), s);
    }
    let p = 0.5 * (dim as f64 + 2.0 * s);
    let m = dim - 1;
    nested_integral(m, &vec![0.0; m], 1.0, &|t: &[f64]| {
        (1.0 + t.iter().map(|v| v * v).sum::<f64>()).powf(-p)
    })
}

fn split_blocks(a: &SpdMatrix) -> (f64, Vec<f64>, DMatrix<f64>) {
    let m = a.matrix();
    let n = m.nrows();
    let v = (1..n).map(|i| m[(i, 0)]).collect();
    (m[(0, 0)], v, m.view((1, 1), (n - 1, n - 1)).into_owned())
}

/// `J(A, y₁)` by direct quadrature over the tangential variables.
pub fn j_quadrature(a: &SpdMatrix, y1: f64, s: f64) -> Result<f64> {
    check_s(s)?;
    if y1 == 0.0 || !y1.is_finite() {
        return Err(Error::Domain("J needs y₁ ≠ 0".into()));
    }
    let n = a.dim();
    let p = 0.5 * (n as f64 + 2.0 * s);
    let full = a.matrix().clone();
    if n == 1 {
        return Ok((full[(0, 0)] * y1 * y1).powf(-p));
    }
    let (_, v, ap) = split_blocks(a);
    // centre the tangential rule on the minimizer y' = -y₁ A'^{-1} v
    let apinv = ap
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Ellipticity("tangential block is singular".into()))?;
    let vv = nalgebra::DVector::from_vec(v);
    let center: Vec<f64> = (-y1 * &apinv * vv).iter().cloned().collect();
    let width = y1.abs() / ap.symmetric_eigen().eigenvalues.max().sqrt();
    nested_integral(n - 1, &center, width, &|t: &[f64]| {
        let mut y = Vec::with_capacity(n);
        y.push(y1);
        y.extend_from_slice(t);
        quad_form(&full, &y).powf(-p)
    })
}

/// Closed form `|y₁|^{-(1+2s)} |det A'|^s |det A|^{-(1+2s)/2} C*(N, s)`.
pub fn j_closed_form(a: &SpdMatrix, y1: f64, s: f64) -> Result<f64> {
    check_s(s)?;
    if y1 == 0.0 || !y1.is_finite() {
        return Err(Error::Domain("J needs y₁ ≠ 0".into()));
    }
    let n = a.dim();
    let det_p = if n == 1 { 1.0 } else { split_blocks(a).2.determinant() };
    Ok(y1.abs().powf(-(1.0 + 2.0 * s)) * det_p.powf(s) * a.det().powf(-0.5 - s) * c_star(n, s)?)
}

/// Closed form for block-diagonal `A` (no coupling between `y₁` and `y'`):
/// `a₁₁^{-s} |y₁|^{-(1+2s)} |det A|^{-1/2} C*(N, s)`.
pub fn j_closed_form_block(a: &SpdMatrix, y1: f64, s: f64) -> Result<f64> {
    check_s(s)?;
    if y1 == 0.0 || !y1.is_finite() {
        return Err(Error::Domain("J needs y₁ ≠ 0".into()));
    }
    let (a11, v, _) = split_blocks(a);
    if v.iter().any(|x| *x != 0.0) {
        return Err(Error::Input("block formula needs a vanishing coupling column".into()));
    }
    Ok(a11.powf(-s) * y1.abs().powf(-(1.0 + 2.0 * s)) * a.det().powf(-0.5) * c_star(a.dim(), s)?)
}

/// Domain with an exact distance function.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierDomain {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl BarrierDomain {
    pub fn dim(&self) -> usize {
        match self {
            BarrierDomain::Interval { .. } => 1,
            BarrierDomain::Ball { center, .. } => center.len(),
        }
    }

    /// Distance to the complement (0 outside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            BarrierDomain::Interval { a, b } => (x[0] - a).min(b - x[0]).max(0.0),
            BarrierDomain::Ball { center, radius } => (radius - crate::function::dist(x, center)).max(0.0),
        }
    }

    fn inradius(&self) -> f64 {
        match self {
            BarrierDomain::Interval { a, b } => 0.5 * (b - a),
            BarrierDomain::Ball { radius, .. } => *radius,
        }
    }

    fn middle(&self) -> Vec<f64> {
        match self {
            BarrierDomain::Interval { a, b } => vec![0.5 * (a + b)],
            BarrierDomain::Ball { center, .. } => center.clone(),
        }
    }

    /// Interior point at distance `d` along the first coordinate axis.
    pub fn point_at(&self, d: f64) -> Vec<f64> {
        let mut x = self.middle();
        x[0] += self.inradius() - d;
        x
    }

    /// `d(x)^α` as a function vanishing outside the domain.
    pub fn barrier(&self, alpha: f64) -> SmoothFunction {
        let dom = self.clone();
        let r = self.inradius();
        SmoothFunction::new(self.dim(), move |x| {
            let d = dom.distance(x);
            if d > 0.0 {
                d.powf(alpha)
            } else {
                0.0
            }
        })
        .with_support(self.middle(), r)
        .with_range(0.0, r.powf(alpha))
        .with_label(format!("d^{alpha}"))
    }
}

/// Parameters of [`barrier_scan`].
#[derive(Debug, Clone)]
pub struct BarrierConfig {
    pub domain: BarrierDomain,
    pub alpha: f64,
    /// Width of the scanned boundary layer.
    pub delta: f64,
    /// Scan floor; the quadrature cannot resolve `d^{α-2s}` below it.
    pub d_min: f64,
    /// Number of scan points, geometric in `d` from `delta` to `d_min`.
    pub points: usize,
    pub spec: KernelSpec,
    pub h: SmoothFunction,
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.spec.s();
        if !(self.alpha > 0.0 && self.alpha < 2.0 * s + 1.0) {
            return Err(Error::Domain(format!("α = {} must lie in (0, 2s + 1)", self.alpha)));
        }
        if !(self.delta > 0.0 && self.d_min > 0.0 && self.d_min < self.delta) {
            return Err(Error::Input("need 0 < d_min < delta".into()));
        }
        if self.delta >= self.domain.inradius() {
            return Err(Error::Input("boundary layer wider than the domain".into()));
        }
        if self.points < 3 {
            return Err(Error::Input("a scan needs at least 3 points".into()));
        }
        if self.domain.dim() != self.spec.dim() || self.h.dim() != self.spec.dim() {
            return Err(Error::Input("domain, kernel and drift dimensions differ".into()));
        }
        Ok(())
    }
}

/// Sign expected for `d^{2s-α} L_K d^α` near the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPrediction {
    /// `α > s`: bounded below by a positive constant.
    Positive,
    /// `α < s`: bounded above by a negative constant.
    Negative,
    /// `α = s`: no prediction.
    Threshold,
}

/// Output of [`barrier_scan`].
#[derive(Debug, Clone, Serialize)]
pub struct BarrierScan {
    pub alpha: f64,
    pub s: f64,
    pub d: Vec<f64>,
    /// `d^{2s-α} (L_K d^α + B(h, d^α))`.
    pub normalized: Vec<f64>,
    /// `B(h, d^α)`.
    pub drift_term: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub prediction: SignPrediction,
    /// Whether the normalized values have the predicted sign (`None` at the
    /// threshold).
    pub prediction_holds: Option<bool>,
    /// Slope of `log |B(d_k) - B(d_{k+1})|` against `log d_k`; the bounded
    /// part of `B` cancels in the differences.
    pub drift_exponent: f64,
    /// `α - 2s + 1`.
    pub expected_drift_exponent: f64,
    /// Smallest distance scanned.
    pub floor: f64,
}

/// Evaluates the normalized barrier quantity on a geometric sequence of
/// distances to the boundary.
pub fn barrier_scan(config: &BarrierConfig, quad: &QuadratureScheme) -> Result<BarrierScan> {
    config.validate()?;
    let s = config.spec.s();
    let alpha = config.alpha;
    let u = config.domain.barrier(alpha);
    let ratio = (config.d_min / config.delta).powf(1.0 / (config.points - 1) as f64);
    let d: Vec<f64> = (0..config.points)
        .map(|k| config.delta * ratio.powi(k as i32))
        .collect();
    let rows: Vec<(f64, f64)> = d
        .par_iter()
        .map(|&dk| {
            let x = config.domain.point_at(dk);
            let q = quad.clone().with_inner_radius(quad.inner_radius.min(0.5 * dk));
            let lk = apply_lk(&u, &config.spec, &x, &q)?;
            let b = apply_b(&config.h, &u, &config.spec, &x, &q)?;
            Ok((dk.powf(2.0 * s - alpha) * (lk + b), b))
        })
        .collect::<Result<_>>()?;
    let normalized: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let drift_term: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let min = normalized.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = normalized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let prediction = if (alpha - s).abs() < 1e-12 {
        SignPrediction::Threshold
    } else if alpha > s {
        SignPrediction::Positive
    } else {
        SignPrediction::Negative
    };
    let prediction_holds = match prediction {
        SignPrediction::Positive => Some(min > 0.0),
        SignPrediction::Negative => Some(max < 0.0),
        SignPrediction::Threshold => None,
    };
    let diffs: Vec<f64> = drift_term.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    let drift_exponent = loglog_slope(&d[..d.len() - 1], &diffs);
    Ok(BarrierScan {
        alpha,
        s,
        d,
        normalized,
        drift_term,
        min,
        max,
        prediction,
        prediction_holds,
        drift_exponent,
        expected_drift_exponent: alpha - 2.0 * s + 1.0,
        floor: config.d_min,
    })
}

/// Writes `d, normalized_value, drift_term` rows.
pub fn write_scan_csv(scan: &BarrierScan, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["d", "normalized_value", "drift_term"])?;
    for ((d, v), b) in scan.d.iter().zip(&scan.normalized).zip(&scan.drift_term) {
        w.write_record(&[format!("{d:.17e}"), format!("{v:.17e}"), format!("{b:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn c_star_exact_values() {
        assert_relative_eq!(c_star(2, 0.5).unwrap(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(c_star(3, 0.5).unwrap(), std::f64::consts::PI, epsilon = 1e-14);
        assert_eq!(c_star(1, 0.3).unwrap(), 1.0);
        assert!(c_star(2, 1.2).is_err());
    }

    #[test]
    fn c_star_radial_matches_direct() {
        for dim in [2, 3] {
            for s in [0.25, 0.5, 0.75] {
                let r = c_star(dim, s).unwrap();
                let q = c_star_quadrature(dim, s).unwrap();
                assert!((r - q).abs() < 1e-6, "N = {dim}, s = {s}: {r} vs {q}");
            }
        }
    }

    #[test]
    fn j_reduces_to_c_star_and_scales() {
        let id = SpdMatrix::identity(2);
        assert_relative_eq!(j_quadrature(&id, 1.0, 0.5).unwrap(), 2.0, max_relative = 1e-9);
        let a = SpdMatrix::from_rows(&[vec![1.3, 0.4], vec![0.4, 0.9]]).unwrap();
        let s = 0.35;
        let r = j_quadrature(&a, 2.0, s).unwrap() / j_quadrature(&a, 1.0, s).unwrap();
        assert_relative_eq!(r, 2f64.powf(-(1.0 + 2.0 * s)), max_relative = 1e-9);
        let c = 2.5;
        let scaled = SpdMatrix::new(a.matrix() * c).unwrap();
        let ratio = j_quadrature(&scaled, 0.7, s).unwrap() / j_quadrature(&a, 0.7, s).unwrap();
        assert_relative_eq!(ratio, c.powf(-(2.0 + 2.0 * s) / 2.0), max_relative = 1e-9);
    }

    #[test]
    fn block_and_general_closed_forms_coincide() {
        let a = SpdMatrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.3], vec![0.0, 0.3, 0.8]]).unwrap();
        for &y in &[0.3, -1.0, 4.0] {
            let g = j_closed_form(&a, y, 0.6).unwrap();
            let b = j_closed_form_block(&a, y, 0.6).unwrap();
            assert_relative_eq!(g, b, max_relative = 1e-14);
            assert_relative_eq!(j_quadrature(&a, y, 0.6).unwrap(), g, max_relative = 1e-6);
        }
        let coupled = SpdMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!(j_closed_form_block(&coupled, 1.0, 0.5).is_err());
    }

    fn scan(alpha: f64, s: f64) -> BarrierScan {
        let config = BarrierConfig {
            domain: BarrierDomain::Interval { a: -1.0, b: 1.0 },
            alpha,
            delta: 0.05,
            d_min: 0.05 / 64.0,
            points: 7,
            spec: KernelSpec::fractional_laplacian(1, s).unwrap(),
            h: SmoothFunction::new(1, |x| 0.3 * x[0]).with_range(-0.3, 0.3),
        };
        barrier_scan(&config, &QuadratureScheme::default()).unwrap()
    }

    #[test]
    fn barrier_signs_follow_alpha() {
        let s = 0.5;
        let above = scan(0.5 * (1.0 + s), s);
        assert_eq!(above.prediction_holds, Some(true), "{above:?}");
        let below = scan(0.5 * s, s);
        assert_eq!(below.prediction_holds, Some(true), "{below:?}");
    }

    #[test]
    fn drift_term_rate_matches_for_s_above_one_half() {
        // for s ≤ ½ the d^α part of B is the larger one
        let s = 0.7;
        for alpha in [0.5 * s, 0.5 * (1.0 + s)] {
            let r = scan(alpha, s);
            assert_eq!(r.prediction_holds, Some(true));
            assert!((r.drift_exponent - r.expected_drift_exponent).abs() < 0.2, "{r:?}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let config = BarrierConfig {
            domain: BarrierDomain::Interval { a: -1.0, b: 1.0 },
            alpha: 2.5,
            delta: 0.2,
            d_min: 0.01,
            points: 5,
            spec: KernelSpec::fractional_laplacian(1, 0.5).unwrap(),
            h: SmoothFunction::constant(1, 0.0),
        };
        assert!(barrier_scan(&config, &QuadratureScheme::default()).is_err());
    }
}
