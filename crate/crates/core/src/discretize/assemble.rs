//! Dense assembly of the lattice operator `ℒ_V = L_K + B_K(·, h) + V`.
//!
//! For interior nodes `i ≠ j` the pair weight `W_ij` is the integral of the
//! kernel `K(x_i, ·)` (matrix frozen at `A(x_i, x_j)`) over the cell of `j`.
//! The exterior mass `τ_i = ∫_{R^N \ Ω_h} K(x_i, y) dy` is the mass outside
//! the node's own cell minus the interior weights, and the drift exterior
//! term `η_i = ∫_{R^N \ Ω_h} (h(y) - h_i) K(x_i, y) dy` is obtained the same
//! way. With these,
//!
//! ```text
//! (L u)_i    = Σ_j (u_j - u_i) W_ij - τ_i u_i
//! B(u, v)_i  = ½ Σ_j (u_j - u_i)(v_j - v_i) W_ij + ½ τ_i u_i v_i
//! B(u, h)_i  = ½ Σ_j (u_j - u_i)(h_j - h_i) W_ij - ½ η_i u_i
//! ```
//!
//! and the product rule and summation by parts hold exactly on the lattice.
//! By default `W` also carries a nearest-neighbour stencil that cancels the
//! second-moment defect of the cell sums, so that the interior consistency
//! error does not degrade like `h^{2-2s}` as `s → 1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::lattice::{GridFunction, LatticeDomain};
use super::weights::{CellRules, FrozenKernel, MomentCorrection, OffsetTable};
use crate::error::{Error, Result};
use crate::function::SmoothFunction;
use crate::kernel_field::KernelSpec;
use crate::nonlocal_ops::exterior_integral;
use crate::quadrature::{AdaptiveOptions, CubeFaceRule};

/// Knobs of the assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyOptions {
    /// Upper bound on the bytes used by the dense matrices.
    pub max_bytes: usize,
    /// Gauss nodes per cube-face coordinate for exterior integrals.
    pub face_nodes: usize,
    /// Panels per cube-face coordinate.
    pub face_splits: usize,
    /// Radial rule for exterior integrals of nonconstant integrands.
    pub exterior_rule: AdaptiveOptions,
    /// For variable fields: ring radius (in cells) up to which pair weights
    /// are full cell integrals; beyond it a 3-point rule per axis is used.
    pub variable_near_rings: u64,
    /// Adds the nearest-neighbour stencil that makes the lattice sums exact
    /// on quadratics (second-moment correction).
    pub moment_correction: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            max_bytes: 3 << 30,
            face_nodes: 16,
            face_splits: 4,
            exterior_rule: AdaptiveOptions {
                abs_tol: 1e-12,
                rel_tol: 1e-10,
                max_intervals: 100,
            },
            variable_near_rings: 2,
            moment_correction: true,
        }
    }
}

/// Dense lattice operator together with its building blocks.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub lattice: Arc<LatticeDomain>,
    pub kernel: KernelSpec,
    /// Symmetric pair weights `W_ij`, zero diagonal.
    pub weights: DMatrix<f64>,
    /// `τ_i`.
    pub exterior: Vec<f64>,
    /// Drift samples `h_i`.
    pub drift: Vec<f64>,
    /// `η_i`.
    pub drift_exterior: Vec<f64>,
    /// Oscillation of the drift (declared range, else sampled).
    pub drift_osc: f64,
    /// Potential `V_i`.
    pub potential: Vec<f64>,
    /// `ℒ_V` as a dense matrix.
    pub matrix: DMatrix<f64>,
}

/// Builds `ℒ_V` on the interior nodes.
pub fn assemble(
    lattice: &Arc<LatticeDomain>,
    spec: &KernelSpec,
    h: &SmoothFunction,
    potential: &[f64],
) -> Result<AssembledOperator> {
    assemble_with(lattice, spec, h, potential, &AssemblyOptions::default())
}

/// [`assemble`] with explicit options.
pub fn assemble_with(
    lattice: &Arc<LatticeDomain>,
    spec: &KernelSpec,
    h: &SmoothFunction,
    potential: &[f64],
    opts: &AssemblyOptions,
) -> Result<AssembledOperator> {
    let n = lattice.len();
    if n == 0 {
        return Err(Error::Input("lattice has no interior nodes".into()));
    }
    if lattice.dim() != spec.dim() || h.dim() != spec.dim() {
        return Err(Error::Input("lattice, kernel and drift dimensions differ".into()));
    }
    if potential.len() != n {
        return Err(Error::Input(format!(
            "potential has {} values for {n} nodes",
            potential.len()
        )));
    }
    if h.range().is_none() && h.support().is_none() {
        return Err(Error::Input(format!(
            "drift '{}' must be bounded (declare its range)",
            h.label()
        )));
    }
    let bytes = 2usize
        .checked_mul(n)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(8))
        .unwrap_or(usize::MAX);
    if bytes > opts.max_bytes {
        return Err(Error::Capacity(format!(
            "{n} interior nodes need {bytes} bytes of dense storage, limit is {}",
            opts.max_bytes
        )));
    }

    let (mut weights, mut self_mass) = pair_weights(lattice, spec, opts);
    let moments = if opts.moment_correction {
        Some(node_moments(lattice, spec))
    } else {
        None
    };
    if let Some(mc) = &moments {
        apply_moment_correction(lattice, spec, mc, &mut weights, &mut self_mass);
    }
    let exterior: Vec<f64> = (0..n).map(|i| self_mass[i] - weights.row(i).sum()).collect();

    let drift = lattice.sample(h);
    let drift_exterior = if h.osc() == Some(0.0) {
        vec![0.0; n]
    } else {
        drift_exterior_terms(lattice, spec, h, &drift, &weights, moments.as_deref(), opts)
    };
    let drift_osc = h.osc().unwrap_or_else(|| h.osc_sampled(lattice.points()));

    let mut op = AssembledOperator {
        lattice: lattice.clone(),
        kernel: spec.clone(),
        weights,
        exterior,
        drift,
        drift_exterior,
        drift_osc,
        potential: potential.to_vec(),
        matrix: DMatrix::zeros(0, 0),
    };
    op.matrix = op.build_matrix();
    Ok(op)
}

fn pair_weights(lattice: &LatticeDomain, spec: &KernelSpec, opts: &AssemblyOptions) -> (DMatrix<f64>, Vec<f64>) {
    let n = lattice.len();
    let h = lattice.mesh();
    let s = spec.s();
    let factor = h.powf(-2.0 * s);
    let multi = lattice.multi_indices();
    let rows: Vec<(Vec<f64>, f64)> = if let Some(a) = spec.field.constant_matrix() {
        let kernel = FrozenKernel {
            matrix: a.matrix().clone(),
            s,
            scale: spec.scale(),
        };
        let table = OffsetTable::new(&kernel, &lattice.offset_extent());
        let self_mass = factor * table.self_exterior;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; n];
                let mut m = vec![0i64; lattice.dim()];
                for (j, r) in row.iter_mut().enumerate() {
                    if j == i {
                        continue;
                    }
                    for k in 0..m.len() {
                        m[k] = multi[j][k] - multi[i][k];
                    }
                    *r = factor * table.get(&m);
                }
                (row, self_mass)
            })
            .collect()
    } else {
        let rules = CellRules::default();
        let far_rules = CellRules::far_only();
        let faces = CubeFaceRule::new(lattice.dim(), opts.face_nodes, opts.face_splits);
        let exits: Vec<f64> = faces.exits.iter().map(|e| 0.5 * h * e).collect();
        let points = lattice.points();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; n];
                let mut m = vec![0i64; lattice.dim()];
                for (j, r) in row.iter_mut().enumerate() {
                    if j == i {
                        continue;
                    }
                    for k in 0..m.len() {
                        m[k] = multi[j][k] - multi[i][k];
                    }
                    let ring = m.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
                    let kernel = FrozenKernel {
                        matrix: spec.field.matrix_at(&points[i], &points[j]),
                        s,
                        scale: spec.scale(),
                    };
                    let p = if ring <= opts.variable_near_rings {
                        kernel.cell_integral(&m, &rules)
                    } else {
                        kernel.cell_integral(&m, &far_rules)
                    };
                    *r = factor * p;
                }
                let mass = exterior_integral(
                    spec,
                    &points[i],
                    &faces.directions,
                    &exits,
                    &faces.weights,
                    None,
                    -1.0,
                    &opts.exterior_rule,
                );
                (row, mass)
            })
            .collect()
    };
    let mut w = DMatrix::zeros(n, n);
    let mut mass = vec![0.0; n];
    for (i, (row, m)) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            w[(i, j)] = v;
        }
        mass[i] = m;
    }
    // symmetrize against rounding in the variable case
    let wt = w.transpose();
    let w = (w + wt) * 0.5;
    (w, mass)
}

/// Second-moment data, one entry for constant fields and one per node
/// (matrix frozen at `A(x_i, x_i)`) otherwise.
fn node_moments(lattice: &LatticeDomain, spec: &KernelSpec) -> Vec<MomentCorrection> {
    let frozen = |matrix: DMatrix<f64>| FrozenKernel {
        matrix,
        s: spec.s(),
        scale: spec.scale(),
    };
    match spec.field.constant_matrix() {
        Some(a) => {
            let extent = [64, 32, 16][lattice.dim().min(3) - 1];
            vec![frozen(a.matrix().clone()).moment_correction(extent)]
        }
        None => {
            let extent = if lattice.dim() >= 3 { 8 } else { 16 };
            lattice
                .points()
                .iter()
                .map(|x| frozen(spec.field.matrix_at(x, x)).moment_correction(extent))
                .collect()
        }
    }
}

fn stencil_weight(m: &DMatrix<f64>, off: &[i64]) -> f64 {
    let axes: Vec<usize> = (0..off.len()).filter(|&k| off[k] != 0).collect();
    match axes.as_slice() {
        [k] => 0.5 * m[(*k, *k)],
        [k, l] => 0.25 * (off[*k] * off[*l]) as f64 * m[(*k, *l)],
        _ => 0.0,
    }
}

/// Adds the second-moment stencil to the pair weights. The correction is
/// skipped (with a warning) if it would make any weight negative.
fn apply_moment_correction(
    lattice: &LatticeDomain,
    spec: &KernelSpec,
    moments: &[MomentCorrection],
    weights: &mut DMatrix<f64>,
    self_mass: &mut [f64],
) {
    let factor = lattice.mesh().powf(-2.0 * spec.s());
    let at = |i: usize| &moments[if moments.len() == 1 { 0 } else { i }].defect;
    let multi = lattice.multi_indices();
    let mut updates = Vec::new();
    for i in 0..lattice.len() {
        for (off, _) in MomentCorrection::stencil(at(i)) {
            let idx: Vec<i64> = multi[i].iter().zip(&off).map(|(a, b)| a + b).collect();
            if let Some(j) = lattice.interior_index(&idx) {
                let w = 0.5 * (stencil_weight(at(i), &off) + stencil_weight(at(j), &off));
                let new = weights[(i, j)] + factor * w;
                if new < 0.0 {
                    log::warn!("second-moment correction would give a negative weight; skipped");
                    return;
                }
                updates.push((i, j, new));
            }
        }
    }
    for (i, j, v) in updates {
        weights[(i, j)] = v;
    }
    for (i, m) in self_mass.iter_mut().enumerate() {
        *m += factor * at(i).trace();
    }
}

fn drift_exterior_terms(
    lattice: &LatticeDomain,
    spec: &KernelSpec,
    h: &SmoothFunction,
    drift: &[f64],
    weights: &DMatrix<f64>,
    moments: Option<&[MomentCorrection]>,
    opts: &AssemblyOptions,
) -> Vec<f64> {
    let factor = lattice.mesh().powf(-2.0 * spec.s());
    let faces = CubeFaceRule::new(lattice.dim(), opts.face_nodes, opts.face_splits);
    let exits: Vec<f64> = faces.exits.iter().map(|e| 0.5 * lattice.mesh() * e).collect();
    let points = lattice.points();
    (0..lattice.len())
        .into_par_iter()
        .map(|i| {
            let outside_cell = exterior_integral(
                spec,
                &points[i],
                &faces.directions,
                &exits,
                &faces.weights,
                Some(h),
                drift[i],
                &opts.exterior_rule,
            );
            let interior: f64 = (0..lattice.len())
                .map(|j| weights[(i, j)] * (drift[j] - drift[i]))
                .sum();
            // own-cell part of ∫ (h - h_i) K, from the second moments
            let own = match moments {
                Some(mc) => {
                    let own = &mc[if mc.len() == 1 { 0 } else { i }].own;
                    MomentCorrection::stencil(own)
                        .iter()
                        .map(|(off, w)| {
                            let y: Vec<f64> = points[i]
                                .iter()
                                .zip(off)
                                .map(|(x, o)| x + lattice.mesh() * *o as f64)
                                .collect();
                            w * (h.eval(&y) - drift[i])
                        })
                        .sum::<f64>()
                        * factor
                }
                None => 0.0,
            };
            outside_cell + own - interior
        })
        .collect()
}

impl AssembledOperator {
    pub fn len(&self) -> usize {
        self.exterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exterior.is_empty()
    }

    fn build_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let hi = self.drift[i];
            let mut diag = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let c = self.weights[(i, j)] * (1.0 + 0.5 * (self.drift[j] - hi));
                m[(i, j)] = c;
                diag -= c;
            }
            m[(i, i)] = diag - self.exterior[i] - 0.5 * self.drift_exterior[i] + self.potential[i];
        }
        m
    }

    /// Same operator with a different potential.
    pub fn with_potential(&self, potential: &[f64]) -> Result<Self> {
        if potential.len() != self.len() {
            return Err(Error::Input("potential length mismatch".into()));
        }
        let mut out = self.clone();
        for (i, (new, old)) in potential.iter().zip(&self.potential).enumerate() {
            out.matrix[(i, i)] += new - old;
        }
        out.potential = potential.to_vec();
        Ok(out)
    }

    /// Same operator with every potential value shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let v: Vec<f64> = self.potential.iter().map(|p| p + c).collect();
        self.with_potential(&v).expect("same length")
    }

    /// `ℒ_V u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let v = &self.matrix * DVector::from_column_slice(u);
        v.as_slice().to_vec()
    }

    /// `L u` (no drift, no potential).
    pub fn apply_lk(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = -self.exterior[i] * u[i];
                for j in 0..n {
                    acc += self.weights[(i, j)] * (u[j] - u[i]);
                }
                acc
            })
            .collect()
    }

    /// Pointwise `B(u, v)_i` at interior nodes.
    pub fn carre_du_champ(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.5 * self.exterior[i] * u[i] * v[i];
                for j in 0..n {
                    acc += 0.5 * self.weights[(i, j)] * (u[j] - u[i]) * (v[j] - v[i]);
                }
                acc
            })
            .collect()
    }

    /// `B(u, h)_i`, the discrete drift term.
    pub fn drift_term(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = -0.5 * self.drift_exterior[i] * u[i];
                for j in 0..n {
                    acc += 0.5 * self.weights[(i, j)] * (u[j] - u[i]) * (self.drift[j] - self.drift[i]);
                }
                acc
            })
            .collect()
    }

    /// `(L h)_i` for the sampled drift, including its exterior values.
    pub fn lk_of_drift(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = self.drift_exterior[i];
                for j in 0..n {
                    acc += self.weights[(i, j)] * (self.drift[j] - self.drift[i]);
                }
                acc
            })
            .collect()
    }

    /// `∫_{R^N} B(u, v) dx` for grid functions extended by zero.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.len();
        let vol = self.lattice.cell_volume();
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = self.exterior[i] * u[i] * v[i];
                for j in 0..n {
                    acc += 0.5 * self.weights[(i, j)] * (u[j] - u[i]) * (v[j] - v[i]);
                }
                acc
            })
            .collect();
        rows.iter().sum::<f64>() * vol
    }

    /// `∫ B(f, h) dx = -∫ f L h dx` for a grid function `f` and the drift.
    pub fn drift_energy(&self, f: &[f64]) -> f64 {
        let lh = self.lk_of_drift();
        -f.iter().zip(&lh).map(|(a, b)| a * b).sum::<f64>() * self.lattice.cell_volume()
    }

    /// Grid function wrapper on this operator's lattice.
    pub fn grid(&self, values: Vec<f64>) -> Result<GridFunction> {
        GridFunction::new(self.lattice.clone(), values)
    }
}

impl CellRules {
    /// Low-order rule used for distant pairs of variable fields.
    pub fn far_only() -> Self {
        let r = crate::quadrature::gauss_legendre(3);
        Self::uniform(r)
    }
}
