//! Property suite: randomized and closed-form checks of the whole stack,
//! each returning a pass/fail outcome with its measured quantities.
//!
//! Every check takes its own parameter block (serde, all fields defaulted)
//! and a seed, so a suite run is reproducible from its configuration.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary_barriers::{c_star, j_closed_form, j_closed_form_block, j_quadrature};
use crate::discretize::{assemble, AssembledOperator, LatticeDomain};
use crate::dv_functional::{
    i_closed_form_h0, i_decomposed, i_direct, optimality_residuals, optimality_residuals_pointwise, q_scalar_min,
    DensitySpec,
};
use crate::eigen::{
    critical_profile, dense_principal, left_eigenvector, maxprinciple_violation_demo, minmax_value, principal_eigenpair,
};
use crate::error::Result;
use crate::function::SmoothFunction;
use crate::inverse_problem::{constancy_check, diffusion_limit, drift_probe, fourier_oracle, recover_matrix};
use crate::kernel_field::{KernelSpec, SpdMatrix};
use crate::nonlocal_ops::{apply_b, apply_lk, QuadratureScheme};
use crate::optimize::DescentOptions;
use crate::quadrature::gauss_legendre;

/// Outcome of one property.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyOutcome {
    pub name: String,
    /// Identity or relation being checked.
    pub relation: String,
    pub pass: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
}

impl PropertyOutcome {
    fn new(name: &str, relation: &str, pass: bool, detail: String, metrics: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            relation: relation.into(),
            pass,
            detail,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// `PASS name: detail` or `FAIL name: detail`.
    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn zero(dim: usize) -> SmoothFunction {
    SmoothFunction::constant(dim, 0.0)
}

/// `M Mᵀ + ½ I` with `M` uniform in `[-1, 1]`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> SpdMatrix {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let a = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.5;
    SpdMatrix::new(a).expect("positive definite by construction")
}

/// Sum of two bumps with random centres, radii and signed amplitudes,
/// supported in the ball of radius 0.9 (times √N) about the origin. The
/// components are returned alongside as `(centre, radius, amplitude)`.
pub fn random_bumps(rng: &mut ChaCha8Rng, dim: usize) -> (SmoothFunction, Vec<(Vec<f64>, f64, f64)>) {
    let mut f = zero(dim).with_support(vec![0.0; dim], 0.0);
    let mut parts = Vec::new();
    for _ in 0..2 {
        let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let r = rng.gen_range(0.25..0.5);
        let a = rng.gen_range(-1.0..1.0);
        f = f.add(&SmoothFunction::bump(c.clone(), r, a));
        parts.push((c, r, a));
    }
    (f, parts)
}

/// `∫ u L w` in 1D for `u` a sum of bumps, integrating each component over
/// its own support.
fn pairing_1d(
    parts: &[(Vec<f64>, f64, f64)],
    w: &SmoothFunction,
    spec: &KernelSpec,
    quad: &QuadratureScheme,
    panels: usize,
) -> Result<f64> {
    let mut acc = 0.0;
    for (c, r, a) in parts {
        let bump = SmoothFunction::bump(c.clone(), *r, *a);
        let (xs, ws) = composite_1d(c[0] - r, c[0] + r, panels, 10);
        for (x, q) in xs.iter().zip(&ws) {
            acc += q * bump.eval(&[*x]) * apply_lk(w, spec, &[*x], quad)?;
        }
    }
    Ok(acc)
}

fn composite_1d(lo: f64, hi: f64, panels: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = gauss_legendre(n);
    let w = (hi - lo) / panels as f64;
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for p in 0..panels {
        let (x, q) = rule.mapped(lo + p as f64 * w, lo + (p + 1) as f64 * w);
        xs.extend(x);
        ws.extend(q);
    }
    (xs, ws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductRuleParams {
    /// Half of the pairs are one-dimensional, half two-dimensional.
    pub pairs: usize,
    pub mesh_1d: f64,
    pub mesh_2d: f64,
    /// Every `pointwise_every`-th pair is also checked by pointwise quadrature.
    pub pointwise_every: usize,
    /// Gauss panels per bump support for the outer integrals of the
    /// pointwise check.
    pub outer_panels: usize,
    pub lattice_tol: f64,
    pub pointwise_tol: f64,
}

impl Default for ProductRuleParams {
    fn default() -> Self {
        Self {
            pairs: 50,
            mesh_1d: 1.0 / 24.0,
            mesh_2d: 0.125,
            pointwise_every: 5,
            outer_panels: 32,
            lattice_tol: 1e-6,
            pointwise_tol: 1e-4,
        }
    }
}

/// `L(uv) = u Lv + v Lu + 2 B(u, v)` and `∫ u Lv = -∫ B(u, v)` on lattices,
/// then pointwise: the product rule at random points and the symmetry
/// `∫ u Lv = ∫ v Lu` by outer Gauss quadrature (1D pairs).
pub fn check_product_rule(p: &ProductRuleParams, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quad = QuadratureScheme::default();
    let mut lattice_worst: f64 = 0.0;
    let mut point_worst: f64 = 0.0;
    for pair in 0..p.pairs {
        let dim = if pair < p.pairs / 2 { 1 } else { 2 };
        let s = rng.gen_range(0.2..0.8);
        let spec = if dim == 1 {
            KernelSpec::fractional_laplacian(1, s)?
        } else {
            KernelSpec::constant(random_spd(&mut rng, 2), s, true)?
        };
        let (u, u_parts) = random_bumps(&mut rng, dim);
        let (v, v_parts) = random_bumps(&mut rng, dim);
        let lat = Arc::new(if dim == 1 {
            LatticeDomain::interval(-1.0, 1.0, p.mesh_1d)?
        } else {
            LatticeDomain::box_domain(&[-1.0, -1.0], &[1.0, 1.0], p.mesh_2d)?
        });
        let op = assemble(&lat, &spec, &zero(dim), &vec![0.0; lat.len()])?;
        let (us, vs) = (lat.sample(&u), lat.sample(&v));
        let uv: Vec<f64> = us.iter().zip(&vs).map(|(a, b)| a * b).collect();
        let (lu, lv, luv) = (op.apply_lk(&us), op.apply_lk(&vs), op.apply_lk(&uv));
        let b = op.carre_du_champ(&us, &vs);
        let scale = luv.iter().chain(&lu).chain(&lv).fold(1e-300f64, |m, x| m.max(x.abs()));
        for i in 0..op.len() {
            let r = luv[i] - us[i] * lv[i] - vs[i] * lu[i] - 2.0 * b[i];
            lattice_worst = lattice_worst.max(r.abs() / scale);
        }
        let vol = lat.cell_volume();
        let pairing: f64 = us.iter().zip(&lv).map(|(a, b)| a * b).sum::<f64>() * vol;
        let energy = op.energy(&us, &vs);
        lattice_worst = lattice_worst.max((pairing + energy).abs() / pairing.abs().max(energy.abs()).max(1e-300));

        if p.pointwise_every == 0 || pair % p.pointwise_every != 0 {
            continue;
        }
        let uvf = u.mul(&v);
        for _ in 0..3 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let luv = apply_lk(&uvf, &spec, &x, &quad)?;
            let lu = apply_lk(&u, &spec, &x, &quad)?;
            let lv = apply_lk(&v, &spec, &x, &quad)?;
            let b = apply_b(&u, &v, &spec, &x, &quad)?;
            let (ux, vx) = (u.eval(&x), v.eval(&x));
            let size = luv.abs() + (ux * lv).abs() + (vx * lu).abs() + 2.0 * b.abs();
            point_worst = point_worst.max((luv - ux * lv - vx * lu - 2.0 * b).abs() / size.max(1e-300));
        }
        if dim == 1 {
            let uv_int = pairing_1d(&u_parts, &v, &spec, &quad, p.outer_panels)?;
            let vu_int = pairing_1d(&v_parts, &u, &spec, &quad, p.outer_panels)?;
            point_worst = point_worst.max((uv_int - vu_int).abs() / uv_int.abs().max(vu_int.abs()).max(1e-300));
        }
    }
    let pass = lattice_worst < p.lattice_tol && point_worst < p.pointwise_tol;
    Ok(PropertyOutcome::new(
        &format!(
            "product rule and integration by parts ({} random pairs, 1D/2D)",
            p.pairs
        ),
        "L(uv) = u Lv + v Lu + 2B(u,v); ∫u Lv = -∫B(u,v)",
        pass,
        format!(
            "lattice residual {lattice_worst:.2e} < {:.0e}, pointwise residual {point_worst:.2e} < {:.0e}",
            p.lattice_tol, p.pointwise_tol
        ),
        &[("lattice_residual", lattice_worst), ("pointwise_residual", point_worst)],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeLawParams {
    pub s_values: Vec<f64>,
    /// Height of the outer step drift.
    pub height: f64,
    pub fit_tol: f64,
    pub tol: f64,
}

impl Default for ShapeLawParams {
    fn default() -> Self {
        Self {
            s_values: vec![0.25, 0.5, 0.75],
            height: 40.0,
            fit_tol: 0.02,
            tol: 1e-8,
        }
    }
}

/// `(-Δ)^s (1 - x²)_+^{1+s} = c (1 - (1 + 2s) x²)` on `(-0.9, 0.9)` after a
/// least-squares fit of `c`, and `(-Δ)^s u + B(h, u) ≤ tol` on `(-1, 1)`
/// for the outer step drift while `u(0) = 1`.
pub fn check_shape_law(p: &ShapeLawParams) -> Result<PropertyOutcome> {
    let quad = QuadratureScheme::default();
    let points: Vec<f64> = (0..=36).map(|k| -0.9 + 0.05 * k as f64).collect();
    let grid: Vec<f64> = (1..40).map(|k| -1.0 + 0.05 * k as f64).collect();
    let mut worst_fit: f64 = 0.0;
    let mut worst_value = f64::NEG_INFINITY;
    let mut u0 = f64::NAN;
    for &s in &p.s_values {
        let spec = KernelSpec::fractional_laplacian(1, s)?;
        let u = critical_profile(s);
        let vals = points
            .iter()
            .map(|&x| apply_lk(&u, &spec, &[x], &quad).map(|v| -v))
            .collect::<Result<Vec<f64>>>()?;
        let shape: Vec<f64> = points.iter().map(|x| 1.0 - (1.0 + 2.0 * s) * x * x).collect();
        let c = vals.iter().zip(&shape).map(|(a, b)| a * b).sum::<f64>() / shape.iter().map(|b| b * b).sum::<f64>();
        for (v, q) in vals.iter().zip(&shape) {
            worst_fit = worst_fit.max((v - c * q).abs() / (c * q).abs());
        }
        let demo = maxprinciple_violation_demo(s, p.height, &grid, &quad)?;
        worst_value = worst_value.max(demo.max_value);
        u0 = demo.u_at_origin;
    }
    let pass = worst_fit < p.fit_tol && worst_value <= p.tol && u0 == 1.0;
    Ok(PropertyOutcome::new(
        "comparison failure: shape law and counterexample",
        "(-Δ)^s(1-x²)₊^{1+s} = c(1-(1+2s)x²); (-Δ)^s u + B(h,u) ≤ 0 with u(0) = 1",
        pass,
        format!(
            "fit error {worst_fit:.2e} < {:.0}%, max of (-Δ)^s u + B(h,u) = {worst_value:.3e} ≤ {:.0e}, u(0) = {u0}",
            100.0 * p.fit_tol,
            p.tol
        ),
        &[
            ("fit_error", worst_fit),
            ("max_value", worst_value),
            ("u_at_origin", u0),
        ],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SquareRootParams {
    pub mesh: f64,
    /// `(centre, radius, s)` of each bump density.
    pub bumps: Vec<(f64, f64, f64)>,
    pub rel_tol: f64,
    pub residual_tol: f64,
}

impl Default for SquareRootParams {
    fn default() -> Self {
        Self {
            mesh: 1.0 / 30.0,
            bumps: vec![(0.0, 0.7, 0.5), (0.2, 0.5, 0.3), (-0.3, 0.6, 0.7)],
            rel_tol: 0.01,
            residual_tol: 1e-5,
        }
    }
}

/// Without drift, the direct minimum of `-∫ (Lu/u) f` equals `∫ B(√f)`, and
/// the first-order conditions hold at `u = √f`.
pub fn check_square_root(p: &SquareRootParams) -> Result<PropertyOutcome> {
    let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, p.mesh)?);
    let quad = QuadratureScheme::default();
    let mut worst_gap: f64 = 0.0;
    let mut worst_lattice: f64 = 0.0;
    let mut worst_point: f64 = 0.0;
    for &(c, r, s) in &p.bumps {
        let spec = KernelSpec::fractional_laplacian(1, s)?;
        let op = assemble(&lat, &spec, &zero(1), &vec![0.0; lat.len()])?;
        let d = DensitySpec::bump(vec![c], r)?;
        let closed = i_closed_form_h0(&op, &d)?;
        let direct = i_direct(&op, &d, &DescentOptions::default())?;
        worst_gap = worst_gap.max((direct.i_value - closed).abs() / closed);
        let (a, b) = optimality_residuals(&op, &d)?;
        worst_lattice = worst_lattice.max(a).max(b);
        let pts: Vec<Vec<f64>> = (1..10).map(|k| vec![c - r + 2.0 * r * k as f64 / 10.0]).collect();
        let (a, b) = optimality_residuals_pointwise(&d.sqrt_function(), &spec, &pts, &quad)?;
        worst_point = worst_point.max(a).max(b);
    }
    let pass = worst_gap < p.rel_tol && worst_lattice < p.residual_tol && worst_point < p.residual_tol;
    Ok(PropertyOutcome::new(
        &format!("square-root minimizer ({} bump densities)", p.bumps.len()),
        "argmin of -∫(Lu/u)f is √f; I(f) = ∫B(√f)",
        pass,
        format!(
            "direct vs closed form {worst_gap:.2e} < {:.0}%, first-order residual lattice {worst_lattice:.2e} / pointwise {worst_point:.2e} < {:.0e}",
            100.0 * p.rel_tol,
            p.residual_tol
        ),
        &[
            ("relative_gap", worst_gap),
            ("lattice_residual", worst_lattice),
            ("pointwise_residual", worst_point),
        ],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorFormParams {
    pub samples: usize,
    pub q_tol: f64,
    pub mesh: f64,
    /// `(s, drift amplitude)` of each decomposition case.
    pub cases: Vec<(f64, f64)>,
    pub rel_tol: f64,
}

impl Default for ErrorFormParams {
    fn default() -> Self {
        Self {
            samples: 1000,
            q_tol: 1e-10,
            mesh: 1.0 / 25.0,
            cases: vec![(0.4, 0.3), (0.6, 0.45), (0.8, 0.2)],
            rel_tol: 0.01,
        }
    }
}

/// `min_r q(r, h̄) ≥ 0` over sampled `h̄ ∈ [-1, 1]`, and the error term of
/// the decomposition matches the one implied by direct minimization.
pub fn check_error_form(p: &ErrorFormParams, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_q = f64::INFINITY;
    for _ in 0..p.samples {
        let hb = rng.gen_range(-1.0..=1.0);
        min_q = min_q.min(q_scalar_min(hb)?.1);
    }
    let mut worst: f64 = 0.0;
    let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, p.mesh)?);
    for &(s, amp) in &p.cases {
        let h = SmoothFunction::new(1, move |x| amp * (2.0 * x[0] + 0.3).sin()).with_range(-amp, amp);
        let op = assemble(
            &lat,
            &KernelSpec::fractional_laplacian(1, s)?,
            &h,
            &vec![0.0; lat.len()],
        )?;
        let d = DensitySpec::bump(vec![0.1], 0.7)?;
        let dec = i_decomposed(&op, &d, None, &DescentOptions::default())?;
        let direct = i_direct(&op, &d, &DescentOptions::default())?;
        let implied = dec.sqrt_energy - 0.5 * dec.drift_energy - dec.potential_term - direct.i_value;
        worst = worst.max((dec.e_value - implied).abs() / implied.abs());
    }
    let pass = min_q >= -p.q_tol && worst < p.rel_tol;
    Ok(PropertyOutcome::new(
        "error-form positivity",
        "min_r q(r, h̄) ≥ 0; I = E(√f) - ½E(f,h) - ∫fV - 𝓔",
        pass,
        format!(
            "min q over {} samples {min_q:.2e} ≥ -{:.0e}, error term vs direct {worst:.2e} < {:.0}%",
            p.samples,
            p.q_tol,
            100.0 * p.rel_tol
        ),
        &[("min_q", min_q), ("error_term_mismatch", worst)],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingParams {
    pub s_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub mesh: f64,
    pub slack: f64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self {
            s_values: vec![0.3, 0.5, 0.7],
            lambdas: vec![0.5, 0.25, 0.125],
            mesh: 1.0 / 20.0,
            slack: 0.2,
        }
    }
}

/// Fitted exponent of `|λ^{2s} I(f_λ) - limit|` for a constant field and a
/// drift odd about the concentration point is at least `2 - 2s - slack`.
pub fn check_scaling(p: &ScalingParams) -> Result<PropertyOutcome> {
    let base = LatticeDomain::interval(-1.0, 1.0, p.mesh)?;
    let d = DensitySpec::bump(vec![0.0], 0.6)?;
    let h = SmoothFunction::new(1, |x| 0.4 * (1.5 * x[0]).sin()).with_range(-0.4, 0.4);
    let mut details = Vec::new();
    let mut metrics = Vec::new();
    let mut pass = true;
    for &s in &p.s_values {
        let spec = KernelSpec::fractional_laplacian(1, s)?;
        let lim = diffusion_limit(&spec, &d, &h, &[0.0], &p.lambdas, &base)?;
        let need = 2.0 - 2.0 * s - p.slack;
        pass &= lim.fitted_exponent >= need;
        details.push(format!("s={s}: {:.3} ≥ {need:.1}", lim.fitted_exponent));
        metrics.push((format!("exponent_s{s}"), lim.fitted_exponent));
    }
    let metric_refs: Vec<(&str, f64)> = metrics.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    Ok(PropertyOutcome::new(
        "diffusion scaling rate",
        "λ^{2s} I(f_λ) → ∫B_{A(x₀)}(√f) at rate λ^{2-2s}",
        pass,
        details.join(", "),
        &metric_refs,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierParams {
    /// The first half is two-dimensional, the rest three-dimensional.
    pub matrices: usize,
    pub s: f64,
    pub entry_tol: f64,
    pub rho_tol: f64,
}

impl Default for FourierParams {
    fn default() -> Self {
        Self {
            matrices: 20,
            s: 0.5,
            entry_tol: 0.05,
            rho_tol: 0.02,
        }
    }
}

/// Round trip random SPD matrix → Fourier energies → recovered matrix.
/// Entry errors are relative with a floor of `1e-2 · max|A|`.
pub fn check_fourier(p: &FourierParams, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_entry: f64 = 0.0;
    let mut worst_rho: f64 = 0.0;
    for k in 0..p.matrices {
        let dim = if k < p.matrices / 2 { 2 } else { 3 };
        let a = random_spd(&mut rng, dim);
        let rep = recover_matrix(fourier_oracle(a.clone(), p.s), dim, p.s, &Default::default())?;
        let floor = 1e-2 * a.matrix().amax();
        for (i, row) in rep.recovered_matrix.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                let y = a.matrix()[(i, j)];
                worst_entry = worst_entry.max((x - y).abs() / y.abs().max(floor));
            }
        }
        worst_rho = worst_rho.max((rep.rho - 1.0).abs());
    }
    let pass = worst_entry < p.entry_tol && worst_rho < p.rho_tol;
    Ok(PropertyOutcome::new(
        &format!("Fourier round trip ({} SPD matrices, N = 2, 3)", p.matrices),
        "∫B_A(g,g) = (2π)^{-N} det(A)^{-1/2} ∫⟨A⁻¹ξ,ξ⟩^s |ĝ|²",
        pass,
        format!(
            "entry error {worst_entry:.2e} < {:.0}%, |ρ - 1| {worst_rho:.2e} < {:.0}%",
            100.0 * p.entry_tol,
            100.0 * p.rho_tol
        ),
        &[("entry_error", worst_entry), ("rho_error", worst_rho)],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    pub shift: f64,
    pub lambdas: Vec<f64>,
    pub tol: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            shift: 3.5,
            lambdas: vec![0.5, 0.25, 0.125],
            tol: 1e-8,
        }
    }
}

/// Drift probes of `h` and `h + c` coincide; a bump difference has
/// `max |L_K (h₁ - h₂)|` far above the tolerance.
pub fn check_drift(p: &DriftParams) -> Result<PropertyOutcome> {
    let quad = QuadratureScheme::default();
    let mut worst_shift: f64 = 0.0;
    let mut min_detect = f64::INFINITY;
    for dim in [1usize, 2] {
        let a = if dim == 1 {
            SpdMatrix::identity(1)
        } else {
            SpdMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]])?
        };
        let spec = KernelSpec::constant(a, 0.5, true)?;
        let d = DensitySpec::bump(vec![0.0; dim], 1.0)?;
        let h1 = SmoothFunction::bump(vec![0.2; dim], 1.0, 1.0);
        let h2 = h1.shifted(p.shift);
        let nodes = if dim == 1 { 24 } else { 10 };
        let x0 = vec![0.0; dim];
        let p1 = drift_probe(&h1, &spec, &x0, &p.lambdas, &d, &quad, nodes)?;
        let p2 = drift_probe(&h2, &spec, &x0, &p.lambdas, &d, &quad, nodes)?;
        for (x, y) in p1.values.iter().zip(&p2.values) {
            worst_shift = worst_shift.max((x - y).abs());
        }
        let diff = SmoothFunction::bump(vec![-0.3; dim], 0.5, 0.2);
        let pts: Vec<Vec<f64>> = (0..9).map(|k| vec![-0.8 + 0.2 * k as f64; dim]).collect();
        let rep = constancy_check(&diff, &spec, &pts, &quad, p.tol)?;
        min_detect = min_detect.min(rep.max_lk);
    }
    let pass = worst_shift < p.tol && min_detect > 10.0 * p.tol;
    Ok(PropertyOutcome::new(
        "drift recovery",
        "∫f_λ L_K h → L_K h(x₀); L_K(h₁ - h₂) ≡ 0 iff h₁ - h₂ is constant",
        pass,
        format!(
            "constant shift changes probes by {worst_shift:.2e} < {:.0e}, bump difference max|L_K| = {min_detect:.3e} > {:.0e}",
            p.tol,
            10.0 * p.tol
        ),
        &[("shift_difference", worst_shift), ("bump_detection", min_detect)],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedFormParams {
    /// Random matrices with coupling; the last three are three-dimensional.
    pub matrices: usize,
    pub c_star_tol: f64,
    pub j_tol: f64,
    pub block_tol: f64,
}

impl Default for ClosedFormParams {
    fn default() -> Self {
        Self {
            matrices: 10,
            c_star_tol: 1e-6,
            j_tol: 1e-3,
            block_tol: 1e-13,
        }
    }
}

/// `C*(2, ½) = 2`, `C*(3, ½) = π`, `J` closed form against quadrature, and
/// the block formula against the general one for block-diagonal `A`.
pub fn check_closed_forms(p: &ClosedFormParams, seed: u64) -> Result<PropertyOutcome> {
    let c2 = c_star(2, 0.5)?;
    let c3 = c_star(3, 0.5)?;
    let cstar_err = (c2 - 2.0).abs().max((c3 - std::f64::consts::PI).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_j: f64 = 0.0;
    for k in 0..p.matrices {
        let dim = if k + 3 < p.matrices { 2 } else { 3 };
        let a = random_spd(&mut rng, dim);
        let y1 = rng.gen_range(0.3..2.0) * if k % 2 == 0 { 1.0 } else { -1.0 };
        let s = rng.gen_range(0.2..0.8);
        let q = j_quadrature(&a, y1, s)?;
        let c = j_closed_form(&a, y1, s)?;
        worst_j = worst_j.max((q - c).abs() / c);
    }
    let mut worst_block: f64 = 0.0;
    for k in 0..5 {
        let dim = 2 + k % 2;
        let mut m = random_spd(&mut rng, dim).matrix().clone();
        for j in 1..dim {
            m[(0, j)] = 0.0;
            m[(j, 0)] = 0.0;
        }
        let a = SpdMatrix::new(m)?;
        let y1 = rng.gen_range(0.3..2.0);
        let b = j_closed_form_block(&a, y1, 0.4)?;
        let g = j_closed_form(&a, y1, 0.4)?;
        worst_block = worst_block.max((b - g).abs() / g);
    }
    let pass = cstar_err < p.c_star_tol && worst_j < p.j_tol && worst_block < p.block_tol;
    Ok(PropertyOutcome::new(
        "boundary closed forms",
        "J = |y₁|^{-(1+2s)} det(A')^s det(A)^{-(1+2s)/2} C*",
        pass,
        format!(
            "C* error {cstar_err:.2e} < {:.0e}, J closed form vs quadrature {worst_j:.2e} < {:.0e}, block identity {worst_block:.1e}",
            p.c_star_tol, p.j_tol
        ),
        &[("c_star_error", cstar_err), ("j_error", worst_j), ("block_error", worst_block)],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenParams {
    /// The first eight instances are one-dimensional, the rest 2D.
    pub instances: usize,
    pub tol: f64,
    /// Mesh of the two-dimensional instances.
    pub mesh_2d: f64,
}

impl Default for EigenParams {
    fn default() -> Self {
        Self {
            instances: 10,
            tol: 1e-10,
            mesh_2d: 0.2,
        }
    }
}

fn eigen_instance(k: usize, mesh_2d: f64) -> Result<AssembledOperator> {
    let s = [0.3, 0.5, 0.7, 0.45, 0.6][k % 5];
    let amp = [0.0, 0.2, 0.45, 0.3, 0.1][k % 5];
    if k < 8 {
        let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, 2.0 / (20.0 + 4.0 * k as f64))?);
        let h = SmoothFunction::new(1, move |x| amp * (2.0 * x[0] + k as f64).sin()).with_range(-amp, amp);
        let v: Vec<f64> = lat.points().iter().map(|p| -(k as f64) * p[0] * p[0]).collect();
        assemble(&lat, &KernelSpec::fractional_laplacian(1, s)?, &h, &v)
    } else {
        let lat = Arc::new(LatticeDomain::box_domain(&[-1.0, -1.0], &[1.0, 1.0], mesh_2d)?);
        let a = SpdMatrix::from_rows(&[vec![1.5, 0.4], vec![0.4, 0.9]])?;
        let h = SmoothFunction::new(2, move |x| amp * (x[0] - x[1]).sin()).with_range(-amp, amp);
        let v: Vec<f64> = lat.points().iter().map(|p| p[0] * p[1]).collect();
        assemble(&lat, &KernelSpec::constant(a, s, true)?, &h, &v)
    }
}

/// Iterative against dense principal eigenvalue, positivity of `φ₁` when
/// `osc(h) < 1`, the shift identity `λ₁(V + c) = λ₁(V) - c`, and a min-max
/// gap that shrinks monotonically as the test family is enriched towards
/// `φ₁` (measures: uniform and `ψ φ₁`).
pub fn check_eigen(p: &EigenParams) -> Result<PropertyOutcome> {
    let mut worst_dense: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut positive = true;
    let mut monotone = true;
    let mut last_gap: f64 = 0.0;
    for k in 0..p.instances {
        let op = eigen_instance(k, p.mesh_2d)?;
        let ep = principal_eigenpair(&op, p.tol, 2000)?;
        let dense = dense_principal(&op)?;
        let scale = ep.lambda1.abs().max(1.0);
        worst_dense = worst_dense.max((ep.lambda1 - dense).abs() / (10.0 * p.tol * scale));
        if op.drift_osc < 1.0 {
            positive &= ep.phi1.min() > 0.0;
        }
        let c = 1.25 + k as f64;
        let shifted = principal_eigenpair(&op.shifted(c), p.tol, 2000)?;
        worst_shift = worst_shift.max((shifted.lambda1 - (ep.lambda1 - c)).abs() / (10.0 * p.tol * scale));

        let n = op.len();
        let psi = left_eigenvector(&op, ep.lambda1)?;
        let mut star: Vec<f64> = psi.iter().zip(&ep.phi1.values).map(|(a, b)| a * b).collect();
        let total: f64 = star.iter().sum();
        star.iter_mut().for_each(|v| *v /= total);
        let measures = vec![vec![1.0 / n as f64; n], star];
        let ones = vec![1.0; n];
        let mut tests = vec![ones.clone()];
        let mut gaps = Vec::new();
        for step in 1..=5 {
            let t = step as f64 / 5.0;
            tests.push(
                ones.iter()
                    .zip(&ep.phi1.values)
                    .map(|(o, q)| (1.0 - t) * o + t * q)
                    .collect(),
            );
            gaps.push(ep.lambda1 - minmax_value(&op, &measures, &tests)?.value);
        }
        let final_gap = gaps.last().copied().unwrap_or(0.0).abs();
        monotone &= gaps.windows(2).all(|w| w[1] <= w[0] + 1e-9 * scale);
        monotone &= final_gap < 1e-7 * scale;
        last_gap = last_gap.max(final_gap / scale);
    }
    let pass = worst_dense <= 1.0 && worst_shift <= 1.0 && positive && monotone;
    Ok(PropertyOutcome::new(
        &format!("eigen consistency ({} instances)", p.instances),
        "λ₁ = sup{λ : ∃φ > 0, ℒ_V φ ≤ -λφ} = min_μ sup_φ ∫(-ℒ_V φ/φ)dμ",
        pass,
        format!(
            "iteration vs dense {worst_dense:.2} × 10·tol, shift identity {worst_shift:.2} × 10·tol, φ₁ > 0: {positive}, min-max gap monotone: {monotone} (final {last_gap:.1e})"
        ),
        &[
            ("dense_mismatch_over_tol", worst_dense),
            ("shift_mismatch_over_tol", worst_shift),
            ("final_minmax_gap", last_gap),
        ],
    ))
}

/// Parameters of the whole suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub product_rule: ProductRuleParams,
    pub shape_law: ShapeLawParams,
    pub square_root: SquareRootParams,
    pub error_form: ErrorFormParams,
    pub scaling: ScalingParams,
    pub fourier: FourierParams,
    pub drift: DriftParams,
    pub closed_forms: ClosedFormParams,
    pub eigen: EigenParams,
}

/// Runs every property in order; the randomized ones get seeds derived
/// from `seed`.
pub fn run_suite(config: &SuiteConfig, seed: u64) -> Result<Vec<PropertyOutcome>> {
    Ok(vec![
        check_product_rule(&config.product_rule, seed)?,
        check_shape_law(&config.shape_law)?,
        check_square_root(&config.square_root)?,
        check_error_form(&config.error_form, seed.wrapping_add(1))?,
        check_scaling(&config.scaling)?,
        check_fourier(&config.fourier, seed.wrapping_add(2))?,
        check_drift(&config.drift)?,
        check_closed_forms(&config.closed_forms, seed.wrapping_add(3))?,
        check_eigen(&config.eigen)?,
    ])
}
