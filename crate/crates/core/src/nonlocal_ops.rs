//! Pointwise evaluation of `L_K u`, `B_K(u, v)` and the drifted operator
//! `L_K u + B_K(u, h)` by quadrature in polar coordinates around `x`.
//!
//! Every integral is written as `∫_{S^{N-1}} ∫_0^∞ φ(x + tθ) K t^{N-1} dt dθ`
//! and evaluated over antipodal direction pairs `±θ`, so the odd part of the
//! integrand cancels node by node. Three radial pieces are used:
//! the inner ball `t < ρ` (substitution removing the `t^{1-2s}` weight), the
//! annulus `ρ < t < R` (adaptive, logarithmic variable), and the far field
//! `t > R` (either integrated exactly after the map `w = (t/R)^{-2s}` or
//! truncated with an analytic bound added to the error).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function::{dist, SmoothFunction};
use crate::kernel_field::KernelSpec;
use crate::quadrature::{integrate_adaptive, sphere_area, AdaptiveOptions, Estimate, HalfSphereRule};

/// Parameters of the polar quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureScheme {
    /// Radius of the symmetrized inner ball.
    pub inner_radius: f64,
    /// Radius beyond which the far-field treatment applies, unless the
    /// supports of the inputs give a smaller exact value.
    pub outer_radius: f64,
    /// Angles on the half circle (2D) or polar nodes (3D).
    pub angular_resolution: usize,
    /// Radial adaptive rule for the inner ball.
    pub inner_rule: AdaptiveOptions,
    /// Radial adaptive rule for the annulus and the far field.
    pub outer_rule: AdaptiveOptions,
    /// Integrate the far field (true) or truncate it and add the bound
    /// `sup|φ| · ∫_{|z|>R} K` to the error estimate (false).
    pub tail_estimate_enabled: bool,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            inner_radius: 0.1,
            outer_radius: 20.0,
            angular_resolution: 48,
            inner_rule: AdaptiveOptions {
                abs_tol: 1e-11,
                rel_tol: 1e-11,
                max_intervals: 200,
            },
            outer_rule: AdaptiveOptions {
                abs_tol: 1e-11,
                rel_tol: 1e-11,
                max_intervals: 400,
            },
            tail_estimate_enabled: true,
        }
    }
}

impl QuadratureScheme {
    /// Default scheme with the inner radius tied to a lattice mesh width.
    pub fn for_mesh(mesh: f64) -> Self {
        Self {
            inner_radius: 0.5 * mesh,
            ..Self::default()
        }
    }

    pub fn with_inner_radius(mut self, r: f64) -> Self {
        self.inner_radius = r;
        self
    }

    pub fn with_angular_resolution(mut self, n: usize) -> Self {
        self.angular_resolution = n;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.inner_rule.abs_tol = tol;
        self.inner_rule.rel_tol = tol;
        self.outer_rule.abs_tol = tol;
        self.outer_rule.rel_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius < self.outer_radius) {
            return Err(Error::Input(format!(
                "quadrature radii must satisfy 0 < inner ({}) < outer ({})",
                self.inner_radius, self.outer_radius
            )));
        }
        if self.angular_resolution == 0 {
            return Err(Error::Input("angular resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Radial window `[from, to)` restricting a polar integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialWindow {
    pub from: f64,
    pub to: f64,
}

/// Description of a pair integrand `y ↦ φ(y)` (with `x` fixed) for
/// [`polar_integral`].
pub struct PairIntegrand<'a> {
    /// `φ(y)`; must vanish to first order at `y = x` for the inner piece.
    pub phi: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    /// Distance from `x` beyond which `φ` is constant, when known.
    pub reach: Option<f64>,
    /// Bound on `|φ|` used when the far field is truncated.
    pub sup_bound: Option<f64>,
}

/// `∫ φ(y) K(x, y) dy` in the principal-value sense over the radial window
/// (whole space when `window` is `None`).
pub fn polar_integral(
    spec: &KernelSpec,
    x: &[f64],
    quad: &QuadratureScheme,
    integrand: &PairIntegrand<'_>,
    window: Option<RadialWindow>,
) -> Result<Estimate> {
    quad.validate()?;
    let dim = spec.dim();
    if x.len() != dim {
        return Err(Error::Input(format!(
            "point has dimension {}, kernel has {dim}",
            x.len()
        )));
    }
    let s = spec.s();
    let rule = HalfSphereRule::new(dim, quad.angular_resolution);
    let (lo, hi) = match window {
        Some(w) => (w.from.max(0.0), w.to),
        None => (0.0, f64::INFINITY),
    };
    if hi <= lo {
        return Ok(Estimate::default());
    }
    let rho = quad.inner_radius.min(hi);
    let far = match integrand.reach {
        Some(r) => r.max(rho * 1.5).min(quad.outer_radius.max(r)),
        None => quad.outer_radius,
    }
    .max(rho);
    let phi = integrand.phi;

    // F(t, θ) = Σ_± φ(x ± tθ) · profile(x, x ± tθ, ±θ)
    let pair_value = |t: f64, theta: &[f64]| -> f64 {
        let mut yp = vec![0.0; dim];
        let mut ym = vec![0.0; dim];
        let mut tm = vec![0.0; dim];
        for k in 0..dim {
            yp[k] = x[k] + t * theta[k];
            ym[k] = x[k] - t * theta[k];
            tm[k] = -theta[k];
        }
        let fp = phi(&yp);
        let fm = phi(&ym);
        let mut acc = 0.0;
        if fp != 0.0 {
            acc += fp * spec.angular_profile(x, &yp, theta);
        }
        if fm != 0.0 {
            acc += fm * spec.angular_profile(x, &ym, &tm);
        }
        acc
    };

    let per_direction: Vec<Estimate> = rule
        .directions
        .par_iter()
        .map(|theta| {
            let mut total = Estimate::default();
            // inner ball [lo, min(rho, hi)]
            if lo < rho {
                if lo == 0.0 {
                    let beta = 1.0 / (2.0 - 2.0 * s);
                    // below t_min the second difference is dominated by rounding;
                    // the integrand is frozen there (it is bounded and smooth in v)
                    let t_min = 1e-3 * rho;
                    let est = integrate_adaptive(
                        |v| {
                            let t = (rho * v.powf(beta)).max(t_min);
                            pair_value(t, theta) / (t * t)
                        },
                        0.0,
                        1.0,
                        &quad.inner_rule,
                    );
                    total = total + est * (rho.powf(2.0 - 2.0 * s) * beta);
                } else {
                    total = total + log_radial(&pair_value, theta, lo, rho.min(hi), s, &quad.inner_rule);
                }
            }
            // annulus [max(lo, rho), min(far, hi)]
            let a = lo.max(rho);
            let b = far.min(hi);
            if b > a {
                total = total + log_radial(&pair_value, theta, a, b, s, &quad.outer_rule);
            }
            // far field [max(lo, far), hi)
            let a = lo.max(far);
            if hi > a {
                if hi.is_finite() {
                    total = total + log_radial(&pair_value, theta, a, hi, s, &quad.outer_rule);
                } else if quad.tail_estimate_enabled || integrand.reach.is_some() {
                    let est = integrate_adaptive(
                        |w| {
                            if w <= 0.0 {
                                return 0.0;
                            }
                            pair_value(a * w.powf(-1.0 / (2.0 * s)), theta)
                        },
                        0.0,
                        1.0,
                        &quad.outer_rule,
                    );
                    total = total + est * (a.powf(-2.0 * s) / (2.0 * s));
                }
            }
            total
        })
        .collect();

    let mut out = Estimate::default();
    for (est, w) in per_direction.iter().zip(&rule.weights) {
        out = out + *est * *w;
    }
    if hi.is_infinite() && !quad.tail_estimate_enabled && integrand.reach.is_none() {
        let bound = integrand
            .sup_bound
            .ok_or_else(|| Error::Input("truncated far field needs a bound on the integrand".into()))?;
        out.error += bound * far_mass_bound(spec, far);
    }
    Ok(out)
}

/// `∫_a^b F(t) t^{-1-2s} dt` in the variable `τ = ln t`.
fn log_radial<F>(f: &F, theta: &[f64], a: f64, b: f64, s: f64, opts: &AdaptiveOptions) -> Estimate
where
    F: Fn(f64, &[f64]) -> f64,
{
    integrate_adaptive(
        |tau| {
            let t = tau.exp();
            f(t, theta) * t.powf(-2.0 * s)
        },
        a.ln(),
        b.ln(),
        opts,
    )
}

/// Upper bound for `∫_{|z| > R} K(x, x + z) dz` from the ellipticity bounds.
pub fn far_mass_bound(spec: &KernelSpec, radius: f64) -> f64 {
    let s = spec.s();
    spec.scale() * spec.bounds.gamma.powf(-spec.half_exponent()) * sphere_area(spec.dim()) * radius.powf(-2.0 * s)
        / (2.0 * s)
}

fn check_dims(spec: &KernelSpec, fs: &[&SmoothFunction]) -> Result<()> {
    for f in fs {
        if f.dim() != spec.dim() {
            return Err(Error::Input(format!(
                "function '{}' has dimension {}, kernel has {}",
                f.label(),
                f.dim(),
                spec.dim()
            )));
        }
    }
    Ok(())
}

fn tail_info(x: &[f64], fs: &[&SmoothFunction]) -> Result<(Option<f64>, Option<f64>)> {
    let mut reach: Option<f64> = Some(0.0);
    for f in fs {
        match (f.support(), reach) {
            (Some(sup), Some(r)) => reach = Some(r.max(dist(x, &sup.center) + sup.radius)),
            _ => reach = None,
        }
        if f.support().is_none() && f.range().is_none() {
            return Err(Error::Input(format!(
                "function '{}' has neither a support ball nor a known range; its tail integral may diverge",
                f.label()
            )));
        }
    }
    let bound = fs
        .iter()
        .map(|f| f.osc().map(|o| o.max(f.sup_abs().unwrap_or(0.0))))
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().product());
    Ok((reach, bound))
}

/// `L_K u(x) = P.V. ∫ (u(y) - u(x)) K(x, y) dy` with an error estimate.
pub fn apply_lk_estimate(
    u: &SmoothFunction,
    spec: &KernelSpec,
    x: &[f64],
    quad: &QuadratureScheme,
) -> Result<Estimate> {
    check_dims(spec, &[u])?;
    let (reach, bound) = tail_info(x, &[u])?;
    let ux = u.eval(x);
    let phi = move |y: &[f64]| u.eval(y) - ux;
    polar_integral(
        spec,
        x,
        quad,
        &PairIntegrand {
            phi: &phi,
            reach,
            sup_bound: bound,
        },
        None,
    )
}

/// `L_K u(x)`.
pub fn apply_lk(u: &SmoothFunction, spec: &KernelSpec, x: &[f64], quad: &QuadratureScheme) -> Result<f64> {
    apply_lk_estimate(u, spec, x, quad).map(|e| e.value)
}

/// `B_K(u, v)(x) = ½ ∫ (u(y) - u(x))(v(y) - v(x)) K(x, y) dy`, restricted to
/// `window` when given.
pub fn apply_b_estimate(
    u: &SmoothFunction,
    v: &SmoothFunction,
    spec: &KernelSpec,
    x: &[f64],
    quad: &QuadratureScheme,
    window: Option<RadialWindow>,
) -> Result<Estimate> {
    check_dims(spec, &[u, v])?;
    let (reach, bound) = tail_info(x, &[u, v])?;
    let ux = u.eval(x);
    let vx = v.eval(x);
    let phi = move |y: &[f64]| {
        let du = u.eval(y) - ux;
        if du == 0.0 {
            return 0.0;
        }
        0.5 * du * (v.eval(y) - vx)
    };
    polar_integral(
        spec,
        x,
        quad,
        &PairIntegrand {
            phi: &phi,
            reach,
            sup_bound: bound.map(|b| 0.5 * b),
        },
        window,
    )
}

/// `B_K(u, v)(x)`.
pub fn apply_b(
    u: &SmoothFunction,
    v: &SmoothFunction,
    spec: &KernelSpec,
    x: &[f64],
    quad: &QuadratureScheme,
) -> Result<f64> {
    apply_b_estimate(u, v, spec, x, quad, None).map(|e| e.value)
}

/// `ℒu(x) = L_K u(x) + B_K(u, h)(x)`, evaluated as one integral of
/// `(u(y) - u(x))(1 + ½(h(y) - h(x))) K`.
pub fn apply_drifted_estimate(
    u: &SmoothFunction,
    h: &SmoothFunction,
    spec: &KernelSpec,
    x: &[f64],
    quad: &QuadratureScheme,
) -> Result<Estimate> {
    check_dims(spec, &[u, h])?;
    if h.support().is_none() && h.range().is_none() {
        return Err(Error::Input(format!(
            "drift '{}' must be bounded (declare its range)",
            h.label()
        )));
    }
    let (reach, bound) = tail_info(x, &[u])?;
    let reach = match (reach, h.support()) {
        (Some(r), Some(sup)) => Some(r.max(dist(x, &sup.center) + sup.radius)),
        _ => None,
    };
    let ux = u.eval(x);
    let hx = h.eval(x);
    let phi = move |y: &[f64]| {
        let du = u.eval(y) - ux;
        if du == 0.0 {
            return 0.0;
        }
        du * (1.0 + 0.5 * (h.eval(y) - hx))
    };
    polar_integral(
        spec,
        x,
        quad,
        &PairIntegrand {
            phi: &phi,
            reach,
            sup_bound: bound.map(|b| b * (1.0 + 0.5 * h.osc().unwrap_or(0.0))),
        },
        None,
    )
}

/// `ℒu(x)`.
pub fn apply_drifted(
    u: &SmoothFunction,
    h: &SmoothFunction,
    spec: &KernelSpec,
    x: &[f64],
    quad: &QuadratureScheme,
) -> Result<f64> {
    apply_drifted_estimate(u, h, spec, x, quad).map(|e| e.value)
}

/// `L_K u` at many points (parallel over points, order preserved).
pub fn apply_lk_many(
    u: &SmoothFunction,
    spec: &KernelSpec,
    points: &[Vec<f64>],
    quad: &QuadratureScheme,
) -> Result<Vec<f64>> {
    points.par_iter().map(|x| apply_lk(u, spec, x, quad)).collect()
}

/// `B_K(u, v)` at many points.
pub fn apply_b_many(
    u: &SmoothFunction,
    v: &SmoothFunction,
    spec: &KernelSpec,
    points: &[Vec<f64>],
    quad: &QuadratureScheme,
) -> Result<Vec<f64>> {
    points.par_iter().map(|x| apply_b(u, v, spec, x, quad)).collect()
}

/// `∫_{|y - x| > t*(θ)} (g(y) - c) K(x, y) dy` where the exit distance `t*`
/// is supplied per direction: the exterior part of a polar integral used by
/// the lattice assembly. Directions and solid-angle weights are given by the
/// caller (typically a cube-face rule), `g = None` means `g ≡ 0`.
#[allow(clippy::too_many_arguments)]
pub fn exterior_integral(
    spec: &KernelSpec,
    x: &[f64],
    directions: &[Vec<f64>],
    exits: &[f64],
    weights: &[f64],
    g: Option<&SmoothFunction>,
    c: f64,
    opts: &AdaptiveOptions,
) -> f64 {
    let s = spec.s();
    let dim = x.len();
    let constant = spec.field.is_constant() && g.is_none();
    let mut acc = 0.0;
    for ((theta, &t0), &w) in directions.iter().zip(exits).zip(weights) {
        let radial = if constant {
            -c * spec.angular_profile(x, x, theta) * t0.powf(-2.0 * s) / (2.0 * s)
        } else {
            let fixed_profile = spec.field.is_constant().then(|| spec.angular_profile(x, x, theta));
            let mut y = vec![0.0; dim];
            let mut f = |t: f64| {
                for k in 0..dim {
                    y[k] = x[k] + t * theta[k];
                }
                let gv = g.map(|g| g.eval(&y)).unwrap_or(0.0);
                (gv - c) * fixed_profile.unwrap_or_else(|| spec.angular_profile(x, &y, theta))
            };
            let est = integrate_adaptive(
                |w| {
                    if w <= 0.0 {
                        return 0.0;
                    }
                    f(t0 * w.powf(-1.0 / (2.0 * s)))
                },
                0.0,
                1.0,
                opts,
            );
            est.value * t0.powf(-2.0 * s) / (2.0 * s)
        };
        acc += w * radial;
    }
    acc
}
