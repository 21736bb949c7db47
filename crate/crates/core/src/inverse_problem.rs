//! Reconstruction of the diffusion matrix and the drift from energy data.
//!
//! Rescaled densities `f_λ` concentrate at a point; `λ^{2s} I(f_λ)` then
//! tends to the frozen-coefficient energy of `√f`, and `∫ f_λ L_K h` to
//! `L_K h(x₀)`. For a constant matrix the energy has the Fourier form
//!
//! ```text
//! ∫ B_A(g, g) dx = |det A|^{-1/2} (2π)^{-N} ∫ ⟨A^{-1} ξ, ξ⟩^s |ĝ(ξ)|² dξ
//! ```
//!
//! (normalized kernels), and narrow Gaussian probes along a direction `v`
//! read off `|det A|^{-1/2} (vᵀ A^{-1} v)^s`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::discretize::{assemble, LatticeDomain};
use crate::dv_functional::{i_closed_form_h0, i_direct, DensitySpec};
use crate::error::{Error, Result};
use crate::function::SmoothFunction;
use crate::kernel_field::{KernelSpec, SpdMatrix};
use crate::nonlocal_ops::{apply_lk, apply_lk_many, QuadratureScheme};
use crate::optimize::DescentOptions;
use crate::quadrature::{integrate_adaptive, tensor_rule, AdaptiveOptions};

/// Mass of a compactly supported density by a tensor Gauss rule on the
/// bounding box of its support.
pub fn density_mass(density: &DensitySpec, nodes: usize) -> Result<f64> {
    let sup = density
        .f
        .support()
        .ok_or_else(|| Error::Input("density has no declared support".into()))?;
    let lo: Vec<f64> = sup.center.iter().map(|c| c - sup.radius).collect();
    let hi: Vec<f64> = sup.center.iter().map(|c| c + sup.radius).collect();
    let (pts, wts) = tensor_rule(&lo, &hi, nodes);
    Ok(pts.iter().zip(&wts).map(|(p, w)| w * density.f.eval(p)).sum())
}

/// `f_λ(x) = λ^{-N} f((x - x₀)/λ)` (with `f` re-centred at `x₀`). The mass
/// is re-verified by quadrature; when a lattice is given the support must fit.
pub fn rescale_density(
    density: &DensitySpec,
    lambda: f64,
    x0: &[f64],
    lattice: Option<&LatticeDomain>,
) -> Result<DensitySpec> {
    if x0.len() != density.dim() {
        return Err(Error::Input("x0 dimension does not match the density".into()));
    }
    let out = density.rescaled(lambda, x0)?;
    if let (Some(lat), Some(sup)) = (lattice, out.f.support()) {
        for k in 0..out.dim() {
            for sign in [-1.0, 1.0] {
                let mut y = sup.center.clone();
                y[k] += sign * sup.radius * (1.0 - 1e-9);
                if lat.locate(&y).is_none() {
                    return Err(Error::Capacity(format!(
                        "rescaled support (radius {}) escapes the lattice",
                        sup.radius
                    )));
                }
            }
        }
    }
    if density.f.support().is_some() {
        let nodes = [0, 64, 32, 16][density.dim().min(3)];
        let before = density_mass(density, nodes)?;
        let after = density_mass(&out, nodes)?;
        if (after - before).abs() > 1e-9 * before.abs().max(1.0) {
            return Err(Error::Resolution(format!(
                "mass changed under rescaling: {before} -> {after}"
            )));
        }
    }
    Ok(out)
}

/// A limit `λ → 0` extracted from values on a decreasing `λ` sequence.
#[derive(Debug, Clone, Serialize)]
pub struct Extrapolation {
    pub limit: f64,
    /// Observed order `log(|Δ₀| / |Δ₁|) / log(λ₀/λ₁)` of successive differences.
    pub rate: f64,
    /// Distance between the limit and the value at the smallest `λ`.
    pub error_estimate: f64,
    /// Whether the successive differences shrink.
    pub monotone: bool,
}

/// Richardson extrapolation: fits `F(λ) = L + Σ_j c_j λ^{p_j}` through the
/// data using the first `values.len() - 1` exponents.
pub fn richardson(lambdas: &[f64], values: &[f64], exponents: &[f64]) -> Result<Extrapolation> {
    let n = values.len();
    if n == 0 || lambdas.len() != n {
        return Err(Error::Input(
            "λ and value sequences must be nonempty and equally long".into(),
        ));
    }
    if lambdas.windows(2).any(|w| !(w[1] < w[0]) || !(w[1] > 0.0)) {
        return Err(Error::Input("λ sequence must be positive and decreasing".into()));
    }
    if exponents.len() + 1 < n {
        return Err(Error::Input(format!("{} values need {} exponents", n, n - 1)));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        for j in 1..n {
            m[(i, j)] = lambdas[i].powf(exponents[j - 1]);
        }
    }
    let sol = m
        .lu()
        .solve(&DVector::from_column_slice(values))
        .ok_or_else(|| Error::Solver {
            message: "Richardson system is singular".into(),
            condition: f64::INFINITY,
        })?;
    let limit = sol[0];
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let monotone = diffs.windows(2).all(|d| d[1] <= d[0]);
    let rate = if diffs.len() >= 2 && diffs[0] > 0.0 && diffs[1] > 0.0 {
        (diffs[0] / diffs[1]).ln() / (lambdas[0] / lambdas[1]).ln()
    } else {
        f64::INFINITY
    };
    if !monotone {
        log::warn!("extrapolation: successive differences do not shrink ({diffs:?})");
    }
    Ok(Extrapolation {
        limit,
        rate,
        error_estimate: (limit - values[n - 1]).abs(),
        monotone,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Result of [`diffusion_limit`].
#[derive(Debug, Clone, Serialize)]
pub struct DiffusionLimit {
    pub lambdas: Vec<f64>,
    /// `λ^{2s} I(f_λ)`.
    pub values: Vec<f64>,
    /// `λ^{2s} ∫ B(√f_λ)` with the matrix frozen at `A(x₀, x₀)` and no drift.
    pub frozen: Vec<f64>,
    pub extrapolation: Extrapolation,
    /// Slope of `log |values - frozen|` against `log λ`.
    pub fitted_exponent: f64,
}

/// Evaluates `λ^{2s} I(f_λ)` on the lattices `base` scaled about `x0` by
/// each `λ` and extrapolates `λ → 0`. `base` must contain the support of
/// `f` re-centred at `x0`.
pub fn diffusion_limit(
    spec: &KernelSpec,
    density: &DensitySpec,
    h: &SmoothFunction,
    x0: &[f64],
    lambdas: &[f64],
    base: &LatticeDomain,
) -> Result<DiffusionLimit> {
    let s = spec.s();
    let frozen_spec = spec.with_constant_matrix(SpdMatrix::new(spec.field.matrix_at(x0, x0))?)?;
    let zero = SmoothFunction::constant(spec.dim(), 0.0);
    let mut values = Vec::with_capacity(lambdas.len());
    let mut frozen = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let lat = Arc::new(base.scaled_about(x0, lambda)?);
        let f = rescale_density(density, lambda, x0, Some(&lat))?;
        let n = lat.len();
        let op = assemble(&lat, spec, h, &vec![0.0; n])?;
        let direct = i_direct(&op, &f, &DescentOptions::default())?;
        if !direct.converged {
            log::warn!("DV minimization at λ = {lambda} did not reach its gradient tolerance");
        }
        let frozen_op = assemble(&lat, &frozen_spec, &zero, &vec![0.0; n])?;
        let scale = lambda.powf(2.0 * s);
        values.push(scale * direct.i_value);
        frozen.push(scale * i_closed_form_h0(&frozen_op, &f)?);
    }
    // drift contributes at order λ^{2s}, the error term at order λ²
    let mut exps = vec![2.0 * s, 2.0];
    while exps.len() + 1 < values.len() {
        let last = *exps.last().expect("nonempty");
        exps.push(last + 2.0 * s);
    }
    let extrapolation = richardson(lambdas, &values, &exps)?;
    let gaps: Vec<f64> = values.iter().zip(&frozen).map(|(a, b)| (a - b).abs()).collect();
    Ok(DiffusionLimit {
        lambdas: lambdas.to_vec(),
        values,
        frozen,
        extrapolation,
        fitted_exponent: loglog_slope(lambdas, &gaps),
    })
}

/// Input to [`fourier_energy`].
#[derive(Clone)]
pub enum FourierInput {
    /// `amplitude · exp(-½ (x - c)ᵀ P (x - c))`, transformed analytically.
    Gaussian { precision: DMatrix<f64>, amplitude: f64 },
    /// A function sampled on the box `[lo, hi]` (outside of which it must
    /// vanish) with `nodes` points per axis.
    Sampled {
        g: SmoothFunction,
        lo: Vec<f64>,
        hi: Vec<f64>,
        nodes: usize,
    },
}

impl fmt::Debug for FourierInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FourierInput::Gaussian { precision, amplitude } => f
                .debug_struct("Gaussian")
                .field("precision", precision)
                .field("amplitude", amplitude)
                .finish(),
            FourierInput::Sampled { g, lo, hi, nodes } => f
                .debug_struct("Sampled")
                .field("g", &g.label())
                .field("lo", lo)
                .field("hi", hi)
                .field("nodes", nodes)
                .finish(),
        }
    }
}

/// Fourier-side energy with an error estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FourierEnergy {
    pub value: f64,
    pub error_estimate: f64,
}

/// Options of the FFT path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftOptions {
    /// Zero-padding factor of the sampled box.
    pub padding: usize,
    /// Largest accepted relative change under grid doubling.
    pub tolerance: f64,
}

impl Default for FftOptions {
    fn default() -> Self {
        Self {
            padding: 4,
            tolerance: 1e-2,
        }
    }
}

/// `∫_{ℝ^N} (ηᵀ M η)^s e^{-|η|²} dη` for `M` with eigenvalues `mu`, from
/// `x^s = s/Γ(1-s) ∫₀^∞ (1 - e^{-tx}) t^{-1-s} dt`.
pub fn gaussian_form_moment(mu: &[f64], s: f64) -> f64 {
    let n = mu.len() as f64;
    let defect = |t: f64| {
        // 1 - Π (1 + t μ)^{-1/2}, without cancellation for small t
        let log_prod: f64 = mu.iter().map(|m| (t * m).ln_1p()).sum::<f64>();
        -(-0.5 * log_prod).exp_m1()
    };
    let opts = AdaptiveOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_intervals: 400,
    };
    // t ∈ (0, 1]: t = u^{1/(1-s)}
    let p = 1.0 / (1.0 - s);
    let inner = integrate_adaptive(
        |u: f64| {
            if u <= 0.0 {
                return 0.5 * mu.iter().sum::<f64>() * p;
            }
            let t = u.powf(p);
            p * defect(t) / t
        },
        0.0,
        1.0,
        &opts,
    );
    // t ∈ [1, ∞): t = u^{-1/s}
    let outer = integrate_adaptive(
        |u: f64| {
            if u <= 0.0 {
                return 1.0 / s;
            }
            defect(u.powf(-1.0 / s)) / s
        },
        0.0,
        1.0,
        &opts,
    );
    std::f64::consts::PI.powf(0.5 * n) * s / gamma(1.0 - s) * (inner.value + outer.value)
}

/// `∫ B_A(g, g) dx` for a constant SPD `a` and the normalized kernel, by
/// the Fourier identity. Gaussians are transformed in closed form; sampled
/// functions go through a padded FFT, extrapolated in the padding and
/// checked against a grid with twice the nodes.
pub fn fourier_energy(a: &SpdMatrix, s: f64, input: &FourierInput, opts: &FftOptions) -> Result<FourierEnergy> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s = {s} must lie in (0, 1)")));
    }
    match input {
        FourierInput::Gaussian { precision, amplitude } => {
            let n = a.dim();
            if precision.nrows() != n || precision.ncols() != n {
                return Err(Error::Input("precision matrix has the wrong size".into()));
            }
            let chol = precision
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Domain("Gaussian precision must be positive definite".into()))?;
            let l = chol.l();
            let det_p: f64 = l.diagonal().iter().map(|d| d * d).product();
            let m = l.transpose() * a.inverse() * &l;
            let mu: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().cloned().collect();
            let value = a.det().powf(-0.5) * amplitude * amplitude * det_p.powf(-0.5) * gaussian_form_moment(&mu, s);
            Ok(FourierEnergy {
                value,
                error_estimate: 1e-10 * value.abs(),
            })
        }
        FourierInput::Sampled { g, lo, hi, nodes } => {
            let n = a.dim();
            if lo.len() != n || hi.len() != n || g.dim() != n {
                return Err(Error::Input("sampling box has the wrong dimension".into()));
            }
            if *nodes < 4 || opts.padding < 1 {
                return Err(Error::Input("FFT path needs at least 4 nodes and padding ≥ 1".into()));
            }
            // the frequency lattice sum misses the cusp of the symbol at
            // ξ = 0 by O(Δξ^{N+2s}); padding halves Δξ
            let p = opts.padding;
            let f1 = fft_energy(a, s, g, lo, hi, *nodes, p)?;
            let f2 = fft_energy(a, s, g, lo, hi, *nodes, 2 * p)?;
            let f4 = fft_energy(a, s, g, lo, hi, *nodes, 4 * p)?;
            let refined = fft_energy(a, s, g, lo, hi, 2 * nodes, 2 * p)?;
            let gain = 2f64.powf(n as f64 + 2.0 * s) - 1.0;
            let e1 = f2 + (f2 - f1) / gain;
            let e2 = f4 + (f4 - f2) / gain;
            let err = (e2 - e1).abs() + (refined - f2).abs();
            if err > opts.tolerance * e2.abs() {
                return Err(Error::Resolution(format!(
                    "FFT energy changed by {:.2e} (relative) under grid refinement",
                    err / e2.abs()
                )));
            }
            Ok(FourierEnergy {
                value: e2,
                error_estimate: err,
            })
        }
    }
}

fn fft_energy(
    a: &SpdMatrix,
    s: f64,
    g: &SmoothFunction,
    lo: &[f64],
    hi: &[f64],
    nodes: usize,
    pad: usize,
) -> Result<f64> {
    let dim = lo.len();
    let m = nodes * pad;
    let total = m
        .checked_pow(dim as u32)
        .filter(|t| *t <= 1 << 26)
        .ok_or_else(|| Error::Capacity(format!("FFT grid {m}^{dim} is too large")))?;
    let steps: Vec<f64> = (0..dim).map(|k| (hi[k] - lo[k]) / nodes as f64).collect();
    let mut data = vec![Complex::new(0.0, 0.0); total];
    let strides: Vec<usize> = (0..dim).map(|k| m.pow(k as u32)).collect();
    // sample on the first `nodes` points of each axis, the rest is padding
    let count = nodes.pow(dim as u32);
    let samples: Vec<(usize, f64)> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut flat = 0;
            let mut x = vec![0.0; dim];
            for k in 0..dim {
                let j = rem % nodes;
                rem /= nodes;
                x[k] = lo[k] + (j as f64 + 0.5) * steps[k];
                flat += j * strides[k];
            }
            (flat, g.eval(&x))
        })
        .collect();
    for (flat, v) in samples {
        data[flat] = Complex::new(v, 0.0);
    }
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut line = vec![Complex::new(0.0, 0.0); m];
    for &stride in &strides {
        for start in 0..total {
            if !(start / stride).is_multiple_of(m) {
                continue;
            }
            for j in 0..m {
                line[j] = data[start + j * stride];
            }
            fft.process(&mut line);
            for j in 0..m {
                data[start + j * stride] = line[j];
            }
        }
    }
    let ainv = a.inverse();
    let cell: f64 = steps.iter().product();
    let dxi: Vec<f64> = steps
        .iter()
        .map(|d| 2.0 * std::f64::consts::PI / (m as f64 * d))
        .collect();
    let dvol: f64 = dxi.iter().product();
    let terms: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut xi = vec![0.0; dim];
            for k in 0..dim {
                let j = rem % m;
                rem /= m;
                let signed = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
                xi[k] = signed * dxi[k];
            }
            let q = crate::kernel_field::quad_form(ainv, &xi);
            q.powf(s) * data[idx].norm_sqr()
        })
        .collect();
    let sum: f64 = terms.iter().sum();
    Ok(a.det().powf(-0.5) * (2.0 * std::f64::consts::PI).powi(-(dim as i32)) * sum * cell * cell * dvol)
}

/// Which direction a probe is narrow along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeTag {
    /// Narrow along `e₀`.
    Identity,
    /// Coordinates `0` and `k` swapped: narrow along `e_k`.
    AxisSwap { k: usize },
    /// `π/4` rotation in the `(k, m)` plane: narrow along `(e_k - e_m)/√2`.
    Rotation { k: usize, m: usize },
    /// Isotropic unit Gaussian, used to measure the global scale.
    Holdout,
}

impl fmt::Display for ProbeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeTag::Identity => write!(f, "identity"),
            ProbeTag::AxisSwap { k } => write!(f, "axis_swap({k})"),
            ProbeTag::Rotation { k, m } => write!(f, "rotation({k},{m})"),
            ProbeTag::Holdout => write!(f, "holdout"),
        }
    }
}

impl ProbeTag {
    /// The orthogonal matrix `E` of the transform, so the probe is `g₀ ∘ E`.
    pub fn transform(&self, dim: usize) -> DMatrix<f64> {
        let mut e = DMatrix::identity(dim, dim);
        match *self {
            ProbeTag::Identity | ProbeTag::Holdout => {}
            ProbeTag::AxisSwap { k } => e.swap_rows(0, k),
            ProbeTag::Rotation { k, m } => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                e[(k, k)] = r;
                e[(k, m)] = -r;
                e[(m, k)] = r;
                e[(m, m)] = r;
                e.swap_rows(0, k);
            }
        }
        e
    }

    /// Unit vector along which the probe is narrow.
    pub fn direction(&self, dim: usize) -> Vec<f64> {
        self.transform(dim).row(0).iter().cloned().collect()
    }
}

/// A Gaussian probe `g₀(E x)` with `g₀(x) = exp(-x₀²/(2λ²) - |x'|²/2)`.
#[derive(Debug, Clone)]
pub struct Probe {
    pub tag: ProbeTag,
    pub lambda: f64,
    pub precision: DMatrix<f64>,
}

impl Probe {
    pub fn new(tag: ProbeTag, lambda: f64, dim: usize) -> Self {
        let lambda = if tag == ProbeTag::Holdout { 1.0 } else { lambda };
        let v = DVector::from_vec(tag.direction(dim));
        let precision = DMatrix::identity(dim, dim) + (lambda.powi(-2) - 1.0) * &v * v.transpose();
        Self { tag, lambda, precision }
    }

    pub fn function(&self) -> SmoothFunction {
        let p = self.precision.clone();
        SmoothFunction::new(p.nrows(), move |x| (-0.5 * crate::kernel_field::quad_form(&p, x)).exp())
            .with_range(0.0, 1.0)
            .with_label(format!("probe {}", self.tag))
    }

    pub fn fourier_input(&self) -> FourierInput {
        FourierInput::Gaussian {
            precision: self.precision.clone(),
            amplitude: 1.0,
        }
    }
}

/// One probe evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub transform_tag: String,
    pub lambda: f64,
    pub raw_energy: f64,
    /// `λ^{2s-1} · raw / (Γ(s + ½) π^{(N-1)/2})`, which tends to
    /// `|det A|^{-1/2} (vᵀ A^{-1} v)^s`.
    pub normalized_energy: f64,
    pub error_estimate: f64,
}

/// Output of [`recover_matrix`].
#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionReport {
    pub recovered_matrix: Vec<Vec<f64>>,
    /// Global scale measured by the held-out isotropic probe; 1 when the
    /// probes are consistent.
    pub rho: f64,
    /// Relative misfit of each extrapolated probe limit against the
    /// prediction of the recovered matrix, in probe order.
    pub per_entry_residuals: Vec<f64>,
    /// `L_K h` estimates attached by the drift pipeline.
    pub drift_values: Vec<f64>,
    pub probes: Vec<ProbeResult>,
}

/// Options of [`recover_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOptions {
    pub lambdas: Vec<f64>,
    /// Richardson exponents; empty selects `p = min(2, 1 + 2s)` followed by
    /// 2 (or 3 when `p = 2`).
    pub exponents: Vec<f64>,
    /// Largest accepted `|ρ - 1|`.
    pub consistency_tol: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            exponents: Vec::new(),
            consistency_tol: 0.05,
        }
    }
}

/// Probe constant `(2π)^{-N} ∫ |η|^{2s} |ĝ₁|² ∫ |ĝ₂|² = Γ(s + ½) π^{(N-1)/2}`.
pub fn probe_constant(dim: usize, s: f64) -> f64 {
    gamma(s + 0.5) * std::f64::consts::PI.powf(0.5 * (dim as f64 - 1.0))
}

/// Reconstructs a constant SPD matrix from an energy oracle `g ↦ ∫ B_A(g, g)`.
pub fn recover_matrix<F>(oracle: F, dim: usize, s: f64, opts: &RecoveryOptions) -> Result<ReconstructionReport>
where
    F: Fn(&Probe) -> Result<f64> + Sync,
{
    if dim == 0 || !(s > 0.0 && s < 1.0) {
        return Err(Error::Input(format!(
            "need N ≥ 1 and s ∈ (0, 1), got N = {dim}, s = {s}"
        )));
    }
    let mut tags = vec![ProbeTag::Identity];
    tags.extend((1..dim).map(|k| ProbeTag::AxisSwap { k }));
    for k in 0..dim {
        for m in k + 1..dim {
            tags.push(ProbeTag::Rotation { k, m });
        }
    }
    let exponents = if opts.exponents.is_empty() {
        let p = (1.0 + 2.0 * s).min(2.0);
        vec![p, if p < 2.0 { 2.0 } else { 3.0 }]
    } else {
        opts.exponents.clone()
    };
    let c = probe_constant(dim, s);
    let jobs: Vec<(ProbeTag, f64)> = tags
        .iter()
        .flat_map(|t| opts.lambdas.iter().map(move |l| (*t, *l)))
        .collect();
    let raw: Vec<f64> = jobs
        .par_iter()
        .map(|(t, l)| oracle(&Probe::new(*t, *l, dim)))
        .collect::<Result<_>>()?;
    let nl = opts.lambdas.len();
    let mut probes = Vec::with_capacity(jobs.len() + 1);
    let mut limits = Vec::with_capacity(tags.len());
    for (ti, tag) in tags.iter().enumerate() {
        let normalized: Vec<f64> = (0..nl)
            .map(|j| opts.lambdas[j].powf(2.0 * s - 1.0) * raw[ti * nl + j] / c)
            .collect();
        let ex = richardson(&opts.lambdas, &normalized, &exponents)?;
        for j in 0..nl {
            probes.push(ProbeResult {
                transform_tag: tag.to_string(),
                lambda: opts.lambdas[j],
                raw_energy: raw[ti * nl + j],
                normalized_energy: normalized[j],
                error_estimate: (normalized[j] - ex.limit).abs(),
            });
        }
        if !(ex.limit > 0.0) {
            return Err(Error::OracleInconsistency(format!(
                "probe {tag} has a nonpositive limit"
            )));
        }
        limits.push(ex.limit);
    }
    // B = |det A|^{-1/(2s)} A^{-1}
    let mut b = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        b[(k, k)] = limits[k].powf(1.0 / s);
    }
    let mut idx = dim;
    for k in 0..dim {
        for m in k + 1..dim {
            let r = limits[idx].powf(1.0 / s);
            let off = 0.5 * (b[(k, k)] + b[(m, m)]) - r;
            b[(k, m)] = off;
            b[(m, k)] = off;
            idx += 1;
        }
    }
    let det_b = b.determinant();
    if !(det_b > 0.0) || b.clone().cholesky().is_none() {
        return Err(Error::Reconstruction(
            "recovered inverse matrix is not positive definite".into(),
        ));
    }
    // |det A| = det(B)^{-2s/(2s+N)}, A^{-1} = |det A|^{1/(2s)} B
    let n = dim as f64;
    let scale = det_b.powf(-1.0 / (2.0 * s + n));
    let a_inv = scale * &b;
    let a_mat = a_inv
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Reconstruction("recovered inverse matrix is singular".into()))?;
    let a_mat = 0.5 * (&a_mat + a_mat.transpose());
    let recovered = SpdMatrix::new(a_mat.clone()).map_err(|e| Error::Reconstruction(e.to_string()))?;
    let holdout = Probe::new(ProbeTag::Holdout, 1.0, dim);
    let measured = oracle(&holdout)?;
    let predicted = fourier_energy(&recovered, s, &holdout.fourier_input(), &FftOptions::default())?.value;
    let rho = (measured / predicted).powf(1.0 / (0.5 * n + s));
    probes.push(ProbeResult {
        transform_tag: ProbeTag::Holdout.to_string(),
        lambda: 1.0,
        raw_energy: measured,
        normalized_energy: measured / predicted,
        error_estimate: (measured - predicted).abs(),
    });
    let det_a = recovered.det();
    let per_entry_residuals = tags
        .iter()
        .zip(&limits)
        .map(|(t, l)| {
            let v = DVector::from_vec(t.direction(dim));
            let pred = det_a.powf(-0.5) * (v.transpose() * &a_inv * &v)[(0, 0)].powf(s);
            // a_inv is consistent with the recovered determinant by construction
            (l - pred).abs() / pred
        })
        .collect();
    if (rho - 1.0).abs() > opts.consistency_tol {
        return Err(Error::OracleInconsistency(format!(
            "held-out probe gives scale ρ = {rho:.6}, outside 1 ± {}",
            opts.consistency_tol
        )));
    }
    Ok(ReconstructionReport {
        recovered_matrix: recovered.to_rows(),
        rho,
        per_entry_residuals,
        drift_values: Vec::new(),
        probes,
    })
}

/// Energy oracle for a hidden constant matrix, backed by [`fourier_energy`].
pub fn fourier_oracle(a: SpdMatrix, s: f64) -> impl Fn(&Probe) -> Result<f64> + Sync {
    move |p: &Probe| fourier_energy(&a, s, &p.fourier_input(), &FftOptions::default()).map(|e| e.value)
}

/// Writes probe records as `tag, lambda, raw, normalized, error` rows.
pub fn write_probe_csv(results: &[ProbeResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tag", "lambda", "raw", "normalized", "error"])?;
    for r in results {
        w.write_record(&[
            r.transform_tag.clone(),
            format!("{:.17e}", r.lambda),
            format!("{:.17e}", r.raw_energy),
            format!("{:.17e}", r.normalized_energy),
            format!("{:.17e}", r.error_estimate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Result of [`drift_probe`].
#[derive(Debug, Clone, Serialize)]
pub struct DriftProbe {
    pub lambdas: Vec<f64>,
    /// `∫ f_λ L_K h dx`.
    pub values: Vec<f64>,
    pub extrapolation: Extrapolation,
    /// `L_K h(x₀)` by pointwise quadrature.
    pub pointwise: f64,
}

/// `∫ f_λ L_K h dx = -∫ B_K(f_λ, h) dx` for each `λ`, extrapolated to
/// `L_K h(x₀)`. The integral over the support of `f_λ` uses a tensor Gauss
/// rule with `nodes` points per axis.
pub fn drift_probe(
    h: &SmoothFunction,
    spec: &KernelSpec,
    x0: &[f64],
    lambdas: &[f64],
    density: &DensitySpec,
    quad: &QuadratureScheme,
    nodes: usize,
) -> Result<DriftProbe> {
    let mut values = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let f = rescale_density(density, lambda, x0, None)?;
        let sup =
            f.f.support()
                .ok_or_else(|| Error::Input("drift probe needs a compactly supported density".into()))?;
        let lo: Vec<f64> = sup.center.iter().map(|c| c - sup.radius).collect();
        let hi: Vec<f64> = sup.center.iter().map(|c| c + sup.radius).collect();
        let (pts, wts) = tensor_rule(&lo, &hi, nodes);
        let keep: Vec<usize> = (0..pts.len()).filter(|&i| f.f.eval(&pts[i]) > 0.0).collect();
        let kept: Vec<Vec<f64>> = keep.iter().map(|&i| pts[i].clone()).collect();
        let lh = apply_lk_many(h, spec, &kept, quad)?;
        let v: f64 = keep.iter().zip(&lh).map(|(&i, l)| wts[i] * f.f.eval(&pts[i]) * l).sum();
        values.push(v);
    }
    let exps: Vec<f64> = (1..lambdas.len().max(2)).map(|k| 2.0 * k as f64).collect();
    let extrapolation = richardson(lambdas, &values, &exps)?;
    let pointwise = apply_lk(h, spec, x0, quad)?;
    Ok(DriftProbe {
        lambdas: lambdas.to_vec(),
        values,
        extrapolation,
        pointwise,
    })
}

/// Diagnostic of [`constancy_check`].
#[derive(Debug, Clone, Serialize)]
pub struct ConstancyReport {
    pub max_lk: f64,
    pub osc: f64,
    pub tol: f64,
    /// `max |L_K w| < tol`.
    pub lk_vanishes: bool,
    /// `osc(w) < tol`.
    pub constant: bool,
}

/// Reports `max |L_K w|` and `osc(w)` over `points`: a bounded `w` with
/// `L_K w ≡ 0` is constant, so both should vanish together.
pub fn constancy_check(
    w: &SmoothFunction,
    spec: &KernelSpec,
    points: &[Vec<f64>],
    quad: &QuadratureScheme,
    tol: f64,
) -> Result<ConstancyReport> {
    let lw = apply_lk_many(w, spec, points, quad)?;
    let max_lk = lw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let osc = w.osc_sampled(points);
    Ok(ConstancyReport {
        max_lk,
        osc,
        tol,
        lk_vanishes: max_lk < tol,
        constant: osc < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(rows: &[Vec<f64>]) -> SpdMatrix {
        SpdMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn gaussian_moment_matches_isotropic_closed_form() {
        for &s in &[0.2, 0.5, 0.9] {
            for dim in 1..=3 {
                let mu = vec![2.5; dim];
                let expect = crate::quadrature::sphere_area(dim) * gamma(s + 0.5 * dim as f64) / 2.0 * 2.5f64.powf(s);
                assert_relative_eq!(gaussian_form_moment(&mu, s), expect, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_moment_matches_two_dimensional_polar_quadrature() {
        let (s, mu) = (0.35, [3.0, 0.2]);
        let rule = crate::quadrature::gauss_legendre(200);
        let angular = rule.integrate(
            |t| (mu[0] * t.cos().powi(2) + mu[1] * t.sin().powi(2)).powf(s),
            0.0,
            2.0 * std::f64::consts::PI,
        );
        let expect = angular * gamma(s + 1.0) / 2.0;
        assert_relative_eq!(gaussian_form_moment(&mu, s), expect, max_relative = 1e-9);
    }

    #[test]
    fn fft_energy_agrees_with_gaussian_closed_form() {
        let a = spd(&[vec![4.0, 0.0], vec![0.0, 1.0]]);
        let s = 0.5;
        let g = SmoothFunction::gaussian(vec![0.0, 0.0], 0.5, 1.0);
        let exact = fourier_energy(
            &a,
            s,
            &FourierInput::Gaussian {
                precision: DMatrix::identity(2, 2) * 4.0,
                amplitude: 1.0,
            },
            &FftOptions::default(),
        )
        .unwrap();
        let fft = fourier_energy(
            &a,
            s,
            &FourierInput::Sampled {
                g,
                lo: vec![-4.0, -4.0],
                hi: vec![4.0, 4.0],
                nodes: 48,
            },
            &FftOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(fft.value, exact.value, max_relative = 1e-5);
    }

    #[test]
    fn dilation_scales_energy() {
        let a = SpdMatrix::identity(2);
        let s = 0.3;
        let e = |c: f64| {
            fourier_energy(
                &a,
                s,
                &FourierInput::Gaussian {
                    precision: DMatrix::identity(2, 2) * (c * c),
                    amplitude: 1.0,
                },
                &FftOptions::default(),
            )
            .unwrap()
            .value
        };
        assert_relative_eq!(e(3.0), 3f64.powf(2.0 * s - 2.0) * e(1.0), max_relative = 1e-10);
    }

    #[test]
    fn probe_directions_reproduce_inverse_entries() {
        let a = spd(&[vec![2.0, 0.3, -0.2], vec![0.3, 1.0, 0.1], vec![-0.2, 0.1, 1.5]]);
        let ai = a.inverse();
        for k in 0..3 {
            let e = ProbeTag::AxisSwap { k }.transform(3);
            assert_relative_eq!((&e * ai * e.transpose())[(0, 0)], ai[(k, k)], epsilon = 1e-14);
            for m in k + 1..3 {
                let e = ProbeTag::Rotation { k, m }.transform(3);
                assert!((e.transpose() * &e - DMatrix::identity(3, 3)).amax() < 1e-14);
                let expect = 0.5 * (ai[(k, k)] - 2.0 * ai[(k, m)] + ai[(m, m)]);
                assert_relative_eq!((&e * ai * e.transpose())[(0, 0)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn richardson_removes_known_powers() {
        let l = [0.4, 0.2, 0.1];
        let v: Vec<f64> = l.iter().map(|x: &f64| 3.0 + 2.0 * x.powf(1.4) - x.powi(2)).collect();
        let ex = richardson(&l, &v, &[1.4, 2.0]).unwrap();
        assert_relative_eq!(ex.limit, 3.0, epsilon = 1e-12);
        assert!(richardson(&[0.1, 0.2], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn identity_is_recovered() {
        let report = recover_matrix(
            fourier_oracle(SpdMatrix::identity(2), 0.5),
            2,
            0.5,
            &RecoveryOptions::default(),
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((report.recovered_matrix[i][j] - e).abs() < 1e-2, "{report:?}");
            }
        }
        assert!((report.rho - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rotated_matrix_keeps_off_diagonal_sign() {
        let t = 30f64.to_radians();
        let r = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let a = &r * DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])) * r.transpose();
        let hidden = SpdMatrix::new(a.clone()).unwrap();
        let report = recover_matrix(fourier_oracle(hidden, 0.5), 2, 0.5, &RecoveryOptions::default()).unwrap();
        assert!(report.recovered_matrix[0][1] > 0.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (report.recovered_matrix[i][j] - a[(i, j)]).abs() < 0.03 * a.amax(),
                    "{report:?}"
                );
            }
        }
    }

    #[test]
    fn inconsistent_oracle_is_rejected() {
        let a = SpdMatrix::identity(2);
        let oracle = |p: &Probe| {
            let e = fourier_energy(&a, 0.5, &p.fourier_input(), &FftOptions::default())?.value;
            Ok(if p.tag == ProbeTag::Holdout { 3.0 * e } else { e })
        };
        let err = recover_matrix(oracle, 2, 0.5, &RecoveryOptions::default()).unwrap_err();
        assert!(matches!(err, Error::OracleInconsistency(_)));
    }

    #[test]
    fn constant_drift_has_zero_probe() {
        let spec = KernelSpec::fractional_laplacian(1, 0.5).unwrap();
        let d = DensitySpec::bump(vec![0.0], 1.0).unwrap();
        let h = SmoothFunction::constant(1, 2.0);
        let p = drift_probe(&h, &spec, &[0.1], &[0.5, 0.25], &d, &QuadratureScheme::default(), 16).unwrap();
        assert!(p.values.iter().all(|v| v.abs() < 1e-12));
        assert!(p.pointwise.abs() < 1e-12);
    }
}
