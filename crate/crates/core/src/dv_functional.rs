//! The Donsker–Varadhan functional
//! `I(μ) = -inf_{u > 0} ∫ (ℒu / u) dμ` for `μ = f dx` on a lattice.
//!
//! Writing `u = √f e^w` on the support `S` of `f`, the infimum splits as
//!
//! ```text
//! I(μ) = ∫ B(√f) dx - ½ ∫ B(f, h) dx - ∫ V dμ - 𝓔,
//! 𝓔    = inf_w Σ_{i≠j ∈ S} √f_i √f_j W_ij Θ(w_j - w_i, h_j - h_i) · vol,
//! Θ(r, δ) = cosh r - 1 + ½ δ sinh r,
//! ```
//!
//! so `𝓔 ≤ 0` (take `w = 0`) and `𝓔 = 0` when `h` is constant.
//! Nodes outside `S` drop out: the infimum sends `u` to zero there.

use crate::discretize::AssembledOperator;
use crate::eigen::principal_eigenpair;
use crate::error::{Error, Result};
use crate::function::{bump_profile, SmoothFunction};
use crate::kernel_field::KernelSpec;
use crate::nonlocal_ops::{apply_b, apply_lk, QuadratureScheme};
use crate::optimize::{brent, lbfgs, newton, DescentOptions};
use crate::quadrature::{integrate_adaptive, sphere_area, AdaptiveOptions};

/// A probability density with an optional closed-form square root.
#[derive(Clone)]
pub struct DensitySpec {
    pub f: SmoothFunction,
    /// Closed form of `√f`, when known.
    pub sqrt: Option<SmoothFunction>,
    /// Asserts that `√f` is smooth enough for the closed-form identities.
    pub sqrt_regular: bool,
    pub center: Vec<f64>,
    pub lambda: f64,
}

impl std::fmt::Debug for DensitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensitySpec")
            .field("f", &self.f.label())
            .field("center", &self.center)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl DensitySpec {
    pub fn new(f: SmoothFunction, center: Vec<f64>) -> Self {
        Self {
            f,
            sqrt: None,
            sqrt_regular: false,
            center,
            lambda: 1.0,
        }
    }

    /// Bump density `c · exp(1 - 1/(1 - r²))` on the ball of `radius`,
    /// normalized to unit mass; its square root is again a smooth bump.
    pub fn bump(center: Vec<f64>, radius: f64) -> Result<Self> {
        let dim = center.len();
        if !(radius > 0.0) {
            return Err(Error::Input("bump radius must be positive".into()));
        }
        let opts = AdaptiveOptions {
            abs_tol: 1e-15,
            rel_tol: 1e-13,
            max_intervals: 200,
        };
        let radial = integrate_adaptive(|r| r.powi(dim as i32 - 1) * bump_profile(r * r), 0.0, 1.0, &opts);
        let mass = sphere_area(dim) * radial.value * radius.powi(dim as i32);
        let amp = 1.0 / mass;
        let f = SmoothFunction::bump(center.clone(), radius, amp).with_label("bump density");
        let sa = amp.sqrt();
        let c = center.clone();
        let inv = 1.0 / (radius * radius);
        let sqrt = SmoothFunction::new(dim, move |x| {
            let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * inv;
            if r2 >= 1.0 {
                0.0
            } else {
                sa * (0.5 * (1.0 - 1.0 / (1.0 - r2))).exp()
            }
        })
        .with_support(center.clone(), radius)
        .with_range(0.0, sa)
        .with_label("sqrt bump density");
        Ok(Self {
            f,
            sqrt: Some(sqrt),
            sqrt_regular: true,
            center,
            lambda: 1.0,
        })
    }

    /// Standard Gaussian density of width `sigma` (not compactly supported).
    pub fn gaussian(center: Vec<f64>, sigma: f64) -> Self {
        let dim = center.len() as f64;
        let amp = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.5 * dim);
        let f = SmoothFunction::gaussian(center.clone(), sigma, amp).with_label("gaussian density");
        let sqrt = SmoothFunction::gaussian(center.clone(), sigma * std::f64::consts::SQRT_2, amp.sqrt());
        Self {
            f,
            sqrt: Some(sqrt),
            sqrt_regular: true,
            center,
            lambda: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    /// `√f`, closed form if available.
    pub fn sqrt_function(&self) -> SmoothFunction {
        match &self.sqrt {
            Some(g) => g.clone(),
            None => self.f.compose_preserving_support(|v| v.max(0.0).sqrt()),
        }
    }

    /// `f_λ(x) = λ^{-N} f((x - x₀)/λ)` about the point `x0`, with `f`
    /// centred at `self.center`.
    pub fn rescaled(&self, lambda: f64, x0: &[f64]) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Input("scale must be positive".into()));
        }
        let n = self.dim() as i32;
        let shift: Vec<f64> = x0.iter().zip(&self.center).map(|(a, c)| a - lambda * c).collect();
        Ok(Self {
            f: self.f.dilated(&shift, lambda, lambda.powi(-n)),
            sqrt: self
                .sqrt
                .as_ref()
                .map(|g| g.dilated(&shift, lambda, lambda.powf(-0.5 * n as f64))),
            sqrt_regular: self.sqrt_regular,
            center: x0.to_vec(),
            lambda: self.lambda * lambda,
        })
    }
}

/// Density sampled on the lattice: zeroed below `1e-12 · max`, then
/// renormalized to unit discrete mass.
#[derive(Debug, Clone)]
pub struct DiscreteDensity {
    pub f: Vec<f64>,
    pub sqrt: Vec<f64>,
    pub support: Vec<usize>,
    /// `Σ f(x_i) vol - 1` before renormalization.
    pub mass_defect: f64,
}

pub fn discrete_density(op: &AssembledOperator, density: &DensitySpec) -> Result<DiscreteDensity> {
    if density.dim() != op.lattice.dim() {
        return Err(Error::Input("density and lattice dimensions differ".into()));
    }
    if let Some(sup) = density.f.support() {
        // the extreme points of the support along each axis must be lattice cells
        for k in 0..density.dim() {
            for sign in [-1.0, 1.0] {
                let mut y = sup.center.clone();
                y[k] += sign * sup.radius * (1.0 - 1e-9);
                if op.lattice.locate(&y).is_none() {
                    return Err(Error::Capacity(format!(
                        "density support (radius {}) escapes the lattice",
                        sup.radius
                    )));
                }
            }
        }
    }
    let vol = op.lattice.cell_volume();
    let mut f = op.lattice.sample(&density.f);
    if f.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("density must be finite and nonnegative".into()));
    }
    let max = f.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Domain("density vanishes on the lattice".into()));
    }
    let raw_mass: f64 = f.iter().sum::<f64>() * vol;
    for v in f.iter_mut() {
        if *v < 1e-12 * max {
            *v = 0.0;
        }
    }
    let mass: f64 = f.iter().sum::<f64>() * vol;
    for v in f.iter_mut() {
        *v /= mass;
    }
    let support: Vec<usize> = (0..f.len()).filter(|&i| f[i] > 0.0).collect();
    let sqrt = f.iter().map(|v| v.sqrt()).collect();
    Ok(DiscreteDensity {
        f,
        sqrt,
        support,
        mass_defect: raw_mass - 1.0,
    })
}

/// `∫ (ℒ_V u / u) f dx` on the lattice.
pub fn rayleigh_integral(op: &AssembledOperator, u: &[f64], f: &[f64]) -> Result<f64> {
    if u.len() != op.len() || f.len() != op.len() {
        return Err(Error::Input("grid function length mismatch".into()));
    }
    let lu = op.apply(u);
    let mut acc = 0.0;
    for i in 0..op.len() {
        if f[i] > 0.0 {
            if !(u[i] > 0.0) {
                return Err(Error::Domain(format!("u must be positive on supp f (node {i})")));
            }
            acc += f[i] * lu[i] / u[i];
        }
    }
    Ok(acc * op.lattice.cell_volume())
}

/// `∫ B(√f) dx`, the value of `I(μ)` when `h = 0` and `V = 0`.
pub fn i_closed_form_h0(op: &AssembledOperator, density: &DensitySpec) -> Result<f64> {
    if !density.sqrt_regular {
        log::warn!("√f regularity not asserted; the closed form may not equal I(μ)");
    }
    let d = discrete_density(op, density)?;
    Ok(op.energy(&d.sqrt, &d.sqrt))
}

/// `Θ(r, δ) = cosh r - 1 + ½ δ sinh r`.
#[inline]
pub fn theta(r: f64, dh: f64) -> f64 {
    // cosh r - 1 = 2 sinh²(r/2), accurate for small r
    let sh = (0.5 * r).sinh();
    2.0 * sh * sh + 0.5 * dh * r.sinh()
}

/// `∂Θ/∂r = sinh r + ½ δ cosh r`.
#[inline]
pub fn theta_r(r: f64, dh: f64) -> f64 {
    r.sinh() + 0.5 * dh * r.cosh()
}

/// Nonnegative error form `Q(δh, δw) = Θ(δw, δh) + C δh² / 2` with `C = 2`.
pub fn q_form(dh: f64, dw: f64) -> f64 {
    theta(dw, dh) + dh * dh
}

/// The variant with unit coefficient on the cross term,
/// `δh² + sinh(δw) δh + cosh(δw) - 1`.
pub fn q_form_unit_cross(dh: f64, dw: f64) -> f64 {
    dh * dh + dw.sinh() * dh + (dw.cosh() - 1.0)
}

/// `q(r, h̄) = cosh r - 1 + ½ h̄ sinh r + h̄²`.
pub fn q_scalar(r: f64, hbar: f64) -> f64 {
    q_form(hbar, r)
}

/// `min_r q(r, h̄)` by Brent's method; returns `(r*, q(r*))`.
pub fn q_scalar_min(hbar: f64) -> Result<(f64, f64)> {
    brent(|r| q_scalar(r, hbar), -20.0, 20.0, 1e-12)
}

/// Closed form of the minimum for `|h̄| < 2`: at `tanh r = -h̄/2`,
/// `q = √(1 - h̄²/4) - 1 + h̄²`.
pub fn q_scalar_min_closed(hbar: f64) -> f64 {
    (1.0 - 0.25 * hbar * hbar).sqrt() - 1.0 + hbar * hbar
}

/// Outcome of the decomposed evaluation of `I(μ)`.
#[derive(Debug, Clone)]
pub struct DvResult {
    pub i_value: f64,
    /// `𝓔 ≤ 0`.
    pub e_value: f64,
    /// `∫ B(√f) dx`.
    pub sqrt_energy: f64,
    /// `∫ B(f, h) dx`.
    pub drift_energy: f64,
    /// `∫ V dμ`.
    pub potential_term: f64,
    /// Minimizing `w` on the lattice (0 outside the support).
    pub w_min: Vec<f64>,
    pub iterations: u64,
    pub grad_norm: f64,
    pub converged: bool,
    pub trace: Vec<f64>,
}

struct ErrorFunctional {
    nodes: Vec<usize>,
    g: Vec<f64>,
    h: Vec<f64>,
    w: Vec<Vec<f64>>,
    vol: f64,
}

impl ErrorFunctional {
    fn new(op: &AssembledOperator, d: &DiscreteDensity) -> Self {
        let nodes = d.support.clone();
        let g = nodes.iter().map(|&i| d.sqrt[i]).collect();
        let h = nodes.iter().map(|&i| op.drift[i]).collect();
        let w = nodes
            .iter()
            .map(|&i| {
                nodes
                    .iter()
                    .map(|&j| if i == j { 0.0 } else { op.weights[(i, j)] })
                    .collect()
            })
            .collect();
        Self {
            nodes,
            g,
            h,
            w,
            vol: op.lattice.cell_volume(),
        }
    }

    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        use rayon::prelude::*;
        let m = self.nodes.len();
        let rows: Vec<(f64, f64)> = (0..m)
            .into_par_iter()
            .map(|k| {
                let mut v = 0.0;
                let mut g = 0.0;
                for i in 0..m {
                    let wik = self.w[k][i];
                    if wik == 0.0 {
                        continue;
                    }
                    let gg = self.g[i] * self.g[k] * wik;
                    let r = x[k] - x[i];
                    let dh = self.h[k] - self.h[i];
                    v += gg * theta(r, dh);
                    g += 2.0 * gg * theta_r(r, dh);
                }
                (v, g)
            })
            .collect();
        let value = rows.iter().map(|r| r.0).sum::<f64>() * self.vol;
        let grad = rows.iter().map(|r| r.1 * self.vol).collect();
        (value, grad)
    }
}

/// `I(μ)` by the decomposition, minimizing the error functional over `w`
/// with L-BFGS from `w_init` (default `w ≡ 0`).
pub fn i_decomposed(
    op: &AssembledOperator,
    density: &DensitySpec,
    w_init: Option<&[f64]>,
    opts: &DescentOptions,
) -> Result<DvResult> {
    if op.drift_osc >= 1.0 {
        log::warn!(
            "drift oscillation {} ≥ 1: error form positivity not guaranteed",
            op.drift_osc
        );
    }
    let d = discrete_density(op, density)?;
    let vol = op.lattice.cell_volume();
    let sqrt_energy = op.energy(&d.sqrt, &d.sqrt);
    let drift_energy = op.drift_energy(&d.f);
    let potential_term: f64 = d.f.iter().zip(&op.potential).map(|(a, b)| a * b).sum::<f64>() * vol;
    let functional = ErrorFunctional::new(op, &d);
    let x0: Vec<f64> = match w_init {
        Some(w) => functional.nodes.iter().map(|&i| w[i]).collect(),
        None => vec![0.0; functional.nodes.len()],
    };
    let scale = sqrt_energy.abs().max(1e-300);
    let scaled_opts = DescentOptions {
        grad_tol: opts.grad_tol * scale.max(1.0),
        ..*opts
    };
    let min = lbfgs(|x| functional.eval(x), x0, &scaled_opts)?;
    if !min.converged {
        log::warn!(
            "error functional descent stopped after {} iterations with gradient {:.3e}",
            min.iterations,
            min.grad_norm
        );
    }
    let e_value = min.value.min(0.0);
    let mut w_min = vec![0.0; op.len()];
    // fix the additive gauge by the f-weighted mean
    let mean: f64 = functional
        .nodes
        .iter()
        .zip(&min.x)
        .map(|(&i, w)| d.f[i] * w)
        .sum::<f64>()
        * vol;
    for (&i, w) in functional.nodes.iter().zip(&min.x) {
        w_min[i] = w - mean;
    }
    Ok(DvResult {
        i_value: sqrt_energy - 0.5 * drift_energy - potential_term - e_value,
        e_value,
        sqrt_energy,
        drift_energy,
        potential_term,
        w_min,
        iterations: min.iterations,
        grad_norm: min.grad_norm,
        converged: min.converged,
        trace: min.trace,
    })
}

/// `I(μ)` by direct minimization of `∫ (ℒ_V u/u) dμ` over `u = e^z > 0` on
/// the support, with Newton's method.
#[derive(Debug, Clone)]
pub struct DirectResult {
    pub i_value: f64,
    /// Minimizer `u` normalized to unit sup-norm (0 outside the support).
    pub u_min: Vec<f64>,
    pub iterations: u64,
    pub grad_norm: f64,
    pub converged: bool,
}

pub fn i_direct(op: &AssembledOperator, density: &DensitySpec, opts: &DescentOptions) -> Result<DirectResult> {
    let d = discrete_density(op, density)?;
    i_direct_weights(op, &d.f, opts)
}

/// Direct minimization with the density floored to `f + ε` on every node.
pub fn i_direct_floor(
    op: &AssembledOperator,
    density: &DensitySpec,
    eps: f64,
    opts: &DescentOptions,
) -> Result<DirectResult> {
    let d = discrete_density(op, density)?;
    let vol = op.lattice.cell_volume();
    let total = 1.0 + eps * op.len() as f64 * vol;
    let f: Vec<f64> = d.f.iter().map(|v| (v + eps) / total).collect();
    i_direct_weights(op, &f, opts)
}

fn i_direct_weights(op: &AssembledOperator, f: &[f64], opts: &DescentOptions) -> Result<DirectResult> {
    let vol = op.lattice.cell_volume();
    let nodes: Vec<usize> = (0..op.len()).filter(|&i| f[i] > 0.0).collect();
    let m = nodes.len();
    // J(z) = Σ_i f_i vol [Σ_{j∈S} c_ij e^{z_j - z_i} + d_i], c_ij the off-diagonal entries
    let c: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&i| {
            nodes
                .iter()
                .map(|&j| if i == j { 0.0 } else { op.matrix[(i, j)] })
                .collect()
        })
        .collect();
    let diag: f64 = nodes.iter().map(|&i| f[i] * op.matrix[(i, i)]).sum::<f64>() * vol;
    let fw: Vec<f64> = nodes.iter().map(|&i| f[i] * vol).collect();
    let objective = |z: &[f64]| {
        let mut v = diag;
        let mut g = vec![0.0; m];
        let mut h = nalgebra::DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                if c[i][j] == 0.0 {
                    continue;
                }
                let e = fw[i] * c[i][j] * (z[j] - z[i]).exp();
                v += e;
                g[j] += e;
                g[i] -= e;
                h[(i, i)] += e;
                h[(j, j)] += e;
                h[(i, j)] -= e;
                h[(j, i)] -= e;
            }
        }
        // gauge: penalize the mean of z (J is invariant under constants)
        let mean = z.iter().sum::<f64>() / m as f64;
        v += 0.5 * mean * mean;
        for k in 0..m {
            g[k] += mean / m as f64;
            for l in 0..m {
                h[(k, l)] += 1.0 / (m * m) as f64;
            }
        }
        (v, g, h)
    };
    // start from u = √f
    let z0: Vec<f64> = nodes.iter().map(|&i| 0.5 * f[i].ln()).collect();
    let mean0 = z0.iter().sum::<f64>() / m as f64;
    let z0: Vec<f64> = z0.iter().map(|z| z - mean0).collect();
    let scale = diag.abs().max(1.0);
    let min = newton(
        objective,
        z0,
        &DescentOptions {
            grad_tol: opts.grad_tol * scale,
            ..*opts
        },
    )?;
    let zmax = min.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut u = vec![0.0; op.len()];
    for (&i, z) in nodes.iter().zip(&min.x) {
        u[i] = (z - zmax).exp();
    }
    let value = min.value - {
        let mean = min.x.iter().sum::<f64>() / m as f64;
        0.5 * mean * mean
    };
    Ok(DirectResult {
        i_value: -value,
        u_min: u,
        iterations: min.iterations,
        grad_norm: min.grad_norm,
        converged: min.converged,
    })
}

/// Lower bound `𝓔 ≥ -Σ_{i≠j} √f_i √f_j W_ij (h_j - h_i)² vol` from the
/// nonnegativity of the error form.
pub fn error_lower_bound(op: &AssembledOperator, density: &DensitySpec) -> Result<f64> {
    let d = discrete_density(op, density)?;
    let mut acc = 0.0;
    for &i in &d.support {
        for &j in &d.support {
            if i != j {
                let dh = op.drift[j] - op.drift[i];
                acc += d.sqrt[i] * d.sqrt[j] * op.weights[(i, j)] * dh * dh;
            }
        }
    }
    Ok(-acc * op.lattice.cell_volume())
}

/// Sup-norm residuals, on the support, of the first-order condition
/// `f L u / u² - L(f/u)` and of `2 (f/u) L u - (L f - 2 B(f/u, u))`
/// at `u = √f` (lattice form, `L` without drift).
pub fn optimality_residuals(op: &AssembledOperator, density: &DensitySpec) -> Result<(f64, f64)> {
    let d = discrete_density(op, density)?;
    let u = &d.sqrt;
    let f_over_u: Vec<f64> =
        d.f.iter()
            .zip(u)
            .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
            .collect();
    let lu = op.apply_lk(u);
    let lfu = op.apply_lk(&f_over_u);
    let lf = op.apply_lk(&d.f);
    let b = op.carre_du_champ(&f_over_u, u);
    let mut first: f64 = 0.0;
    let mut second: f64 = 0.0;
    for &i in &d.support {
        first = first.max((d.f[i] * lu[i] / (u[i] * u[i]) - lfu[i]).abs());
        second = second.max((2.0 * f_over_u[i] * lu[i] - (lf[i] - 2.0 * b[i])).abs());
    }
    Ok((first, second))
}

/// Pointwise-quadrature version of [`optimality_residuals`] at `points`,
/// with `f = g²` and `u = g` for the given square root `g`.
pub fn optimality_residuals_pointwise(
    g: &SmoothFunction,
    spec: &KernelSpec,
    points: &[Vec<f64>],
    quad: &QuadratureScheme,
) -> Result<(f64, f64)> {
    let f = g.mul(g);
    // f/u = g wherever u > 0
    let f_over_u = g.clone();
    let mut first: f64 = 0.0;
    let mut second: f64 = 0.0;
    for x in points {
        let u = g.eval(x);
        if !(u > 0.0) {
            continue;
        }
        let lu = apply_lk(g, spec, x, quad)?;
        let lfu = apply_lk(&f_over_u, spec, x, quad)?;
        let lf = apply_lk(&f, spec, x, quad)?;
        let b = apply_b(&f_over_u, g, spec, x, quad)?;
        let fx = u * u;
        first = first.max((fx * lu / (u * u) - lfu).abs());
        second = second.max((2.0 * fx / u * lu - (lf - 2.0 * b)).abs());
    }
    Ok((first, second))
}

/// One row of the duality report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DualEntry {
    pub label: String,
    pub lambda1: f64,
    pub potential_mean: f64,
    /// `λ₁(ℒ + V) + ∫ V dμ`, a lower bound for `I(μ)`.
    pub bound: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DualGapReport {
    pub entries: Vec<DualEntry>,
    pub best: f64,
    pub i_value: f64,
    /// `I(μ) - best`, nonnegative up to discretization and solver slack.
    pub gap: f64,
}

/// Compares `max_V [λ₁(ℒ + V) + ∫ V dμ]` over a finite family of potentials
/// with `I(μ)`.
pub fn dual_gap(
    op: &AssembledOperator,
    density: &DensitySpec,
    family: &[(String, Vec<f64>)],
    i_value: f64,
    eig_tol: f64,
) -> Result<DualGapReport> {
    let d = discrete_density(op, density)?;
    let vol = op.lattice.cell_volume();
    let mut entries = Vec::new();
    for (label, v) in family {
        let shifted = op.with_potential(v)?;
        let ep = principal_eigenpair(&shifted, eig_tol, 2000)?;
        let mean: f64 = d.f.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * vol;
        entries.push(DualEntry {
            label: label.clone(),
            lambda1: ep.lambda1,
            potential_mean: mean,
            bound: ep.lambda1 + mean,
        });
    }
    let best = entries.iter().map(|e| e.bound).fold(f64::NEG_INFINITY, f64::max);
    Ok(DualGapReport {
        entries,
        best,
        i_value,
        gap: i_value - best,
    })
}

/// The optimal potential `V* = -ℒ u*/u*` for a minimizer `u*` of the
/// Rayleigh integral, extended by `fill` off the support.
pub fn optimal_potential(op: &AssembledOperator, u_min: &[f64], fill: f64) -> Vec<f64> {
    let lu = op.apply(u_min);
    u_min
        .iter()
        .zip(&lu)
        .zip(&op.potential)
        .map(|((u, l), v)| if *u > 0.0 { -(l - v * u) / u } else { fill })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::discretize::{assemble, LatticeDomain};
    use approx::assert_relative_eq;

    fn setup(n: usize, s: f64, h: SmoothFunction) -> AssembledOperator {
        let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, 2.0 / n as f64).unwrap());
        let spec = KernelSpec::fractional_laplacian(1, s).unwrap();
        let len = lat.len();
        assemble(&lat, &spec, &h, &vec![0.0; len]).unwrap()
    }

    #[test]
    fn bump_density_has_unit_mass() {
        for dim in 1..=3 {
            let d = DensitySpec::bump(vec![0.1; dim], 0.7).unwrap();
            let opts = AdaptiveOptions::default();
            if dim == 1 {
                let m = integrate_adaptive(|x| d.f.eval(&[x]), -0.6, 0.8, &opts).value;
                assert_relative_eq!(m, 1.0, max_relative = 1e-10);
            }
            let x = vec![0.3; dim];
            let g = d.sqrt_function().eval(&x);
            assert_relative_eq!(g * g, d.f.eval(&x), max_relative = 1e-12);
        }
    }

    #[test]
    fn rescaled_density_keeps_mass() {
        let d = DensitySpec::bump(vec![0.0], 0.5).unwrap();
        let opts = AdaptiveOptions::default();
        for &lambda in &[1.0, 0.5, 0.25] {
            let r = d.rescaled(lambda, &[0.2]).unwrap();
            let m = integrate_adaptive(|x| r.f.eval(&[x]), 0.2 - 0.5 * lambda, 0.2 + 0.5 * lambda, &opts).value;
            assert_relative_eq!(m, 1.0, max_relative = 1e-9);
            let g = r.sqrt_function().eval(&[0.21]);
            assert_relative_eq!(g * g, r.f.eval(&[0.21]), max_relative = 1e-12);
        }
    }

    #[test]
    fn constant_u_gives_zero_rayleigh_integral_without_exterior() {
        let op = setup(40, 0.5, SmoothFunction::constant(1, 0.0));
        let d = discrete_density(&op, &DensitySpec::bump(vec![0.0], 0.5).unwrap()).unwrap();
        let ones = vec![1.0; op.len()];
        let r = rayleigh_integral(&op, &ones, &d.f).unwrap();
        // only the exterior mass survives: -Σ f_i τ_i vol
        let expect: f64 = -d.f.iter().zip(&op.exterior).map(|(a, b)| a * b).sum::<f64>() * op.lattice.cell_volume();
        assert_relative_eq!(r, expect, max_relative = 1e-12);
        let mut bad = ones.clone();
        bad[op.len() / 2] = 0.0;
        assert!(rayleigh_integral(&op, &bad, &d.f).is_err());
    }

    #[test]
    fn no_drift_decomposition_reduces_to_closed_form() {
        let op = setup(60, 0.5, SmoothFunction::constant(1, 0.0));
        let d = DensitySpec::bump(vec![0.1], 0.6).unwrap();
        let closed = i_closed_form_h0(&op, &d).unwrap();
        let dec = i_decomposed(&op, &d, None, &DescentOptions::default()).unwrap();
        assert_eq!(dec.e_value, 0.0);
        assert_relative_eq!(dec.i_value, closed, max_relative = 1e-12);
        let direct = i_direct(&op, &d, &DescentOptions::default()).unwrap();
        assert!(direct.converged);
        assert_relative_eq!(direct.i_value, closed, max_relative = 1e-8);
        let sqrt = discrete_density(&op, &d).unwrap();
        let at_sqrt =
            rayleigh_integral(&op, &sqrt.sqrt.iter().map(|v| v + 1e-300).collect::<Vec<_>>(), &sqrt.f).unwrap();
        assert_relative_eq!(-at_sqrt, closed, max_relative = 1e-10);
    }

    #[test]
    fn drift_decomposition_agrees_with_direct_minimization() {
        let h = SmoothFunction::new(1, |x| 0.4 * (2.5 * x[0]).sin()).with_range(-0.4, 0.4);
        let op = setup(60, 0.6, h);
        let d = DensitySpec::bump(vec![0.0], 0.7).unwrap();
        let dec = i_decomposed(&op, &d, None, &DescentOptions::default()).unwrap();
        let direct = i_direct(&op, &d, &DescentOptions::default()).unwrap();
        assert!(dec.e_value < 0.0);
        assert!(dec.e_value >= error_lower_bound(&op, &d).unwrap());
        assert_relative_eq!(dec.i_value, direct.i_value, max_relative = 1e-7);
        // any positive u gives a value ≥ -I
        let dd = discrete_density(&op, &d).unwrap();
        let u: Vec<f64> = op.lattice.points().iter().map(|p| 1.0 + 0.3 * p[0]).collect();
        assert!(rayleigh_integral(&op, &u, &dd.f).unwrap() >= -dec.i_value - 1e-12);
    }

    #[test]
    fn q_form_minimum() {
        let (r, q) = q_scalar_min(0.0).unwrap();
        assert!(r.abs() < 1e-6 && q.abs() < 1e-12);
        let (r, q) = q_scalar_min(1.0).unwrap();
        assert_relative_eq!(q, 3f64.sqrt() / 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.tanh(), -0.5, epsilon = 1e-7);
        for k in 0..=40 {
            let hb = -1.0 + k as f64 / 20.0;
            assert_relative_eq!(q_scalar_min(hb).unwrap().1, q_scalar_min_closed(hb), epsilon = 1e-12);
        }
        assert_relative_eq!(
            q_form_unit_cross(0.3, 0.2),
            0.09 + 0.2f64.sinh() * 0.3 + 0.2f64.cosh() - 1.0
        );
    }

    #[test]
    fn optimality_identities_hold_on_the_lattice() {
        let op = setup(50, 0.4, SmoothFunction::constant(1, 0.0));
        let (a, b) = optimality_residuals(&op, &DensitySpec::bump(vec![0.0], 0.6).unwrap()).unwrap();
        assert!(a < 1e-10 && b < 1e-10, "{a} {b}");
    }

    #[test]
    fn dual_bounds_stay_below_i() {
        let h = SmoothFunction::new(1, |x| 0.3 * x[0]).with_range(-0.3, 0.3);
        let op = setup(40, 0.5, h);
        let d = DensitySpec::bump(vec![0.0], 0.6).unwrap();
        let direct = i_direct(&op, &d, &DescentOptions::default()).unwrap();
        let n = op.len();
        // a finite fill off the support leaves a gap of order c²/|fill|
        let vstar = optimal_potential(&op, &direct.u_min, -2000.0);
        let family = vec![
            ("zero".to_string(), vec![0.0; n]),
            ("shift".to_string(), vec![1.5; n]),
            ("optimal".to_string(), vstar),
        ];
        let rep = dual_gap(&op, &d, &family, direct.i_value, 1e-9).unwrap();
        assert!(rep.entries.iter().all(|e| e.bound <= direct.i_value + 1e-8));
        assert_relative_eq!(rep.entries[0].bound, rep.entries[1].bound, max_relative = 1e-9);
        assert!(rep.gap.abs() < 1e-3 * direct.i_value, "{rep:?}");
    }
}
