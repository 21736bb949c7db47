//! Pair weights of the lattice operator: integrals of a frozen-matrix kernel
//! over lattice cells, and the mass of the kernel outside a node's own cell.

use nalgebra::DMatrix;

use crate::kernel_field::quad_form;
use crate::quadrature::{gauss_legendre, CubeFaceRule, Rule};

/// Power-law kernel `scale · (z^T A z)^{-(N+2s)/2}` with a fixed matrix.
#[derive(Debug, Clone)]
pub struct FrozenKernel {
    pub matrix: DMatrix<f64>,
    pub s: f64,
    pub scale: f64,
}

impl FrozenKernel {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn p(&self) -> f64 {
        0.5 * (self.dim() as f64 + 2.0 * self.s)
    }

    #[inline]
    pub fn value(&self, z: &[f64]) -> f64 {
        self.scale * quad_form(&self.matrix, z).powf(-self.p())
    }

    /// `∫_{m + [-½, ½]^N} K(z) dz` in lattice units, `m ≠ 0`.
    pub fn cell_integral(&self, m: &[i64], rules: &CellRules) -> f64 {
        let r = m.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
        debug_assert!(r > 0, "cell integral at the origin is singular");
        let (splits, rule) = rules.for_ring(r);
        let dim = m.len();
        let sub = 1.0 / splits as f64;
        let nodes = rule.nodes.len();
        let per_axis = splits * nodes;
        let mut xs = vec![vec![0.0; per_axis]; dim];
        let mut ws = vec![0.0; per_axis];
        for p in 0..splits {
            let a = -0.5 + p as f64 * sub;
            let (x, w) = rule.mapped(a, a + sub);
            for q in 0..nodes {
                ws[p * nodes + q] = w[q];
                for k in 0..dim {
                    xs[k][p * nodes + q] = m[k] as f64 + x[q];
                }
            }
        }
        let total = per_axis.pow(dim as u32);
        let mut z = vec![0.0; dim];
        let mut acc = 0.0;
        for idx in 0..total {
            let mut rem = idx;
            let mut w = 1.0;
            for k in 0..dim {
                let j = rem % per_axis;
                rem /= per_axis;
                z[k] = xs[k][j];
                w *= ws[j];
            }
            acc += w * self.value(&z);
        }
        acc
    }

    /// `∫_{|z|_∞ > 1/2} K(z) dz` in lattice units.
    pub fn self_exterior(&self, faces: &CubeFaceRule) -> f64 {
        let two_s = 2.0 * self.s;
        faces
            .directions
            .iter()
            .zip(&faces.exits)
            .zip(&faces.weights)
            .map(|((theta, e), w)| w * self.value(theta) * (0.5 * e).powf(-two_s) / two_s)
            .sum()
    }
}

/// Second-moment data of the cell quadrature in lattice units.
#[derive(Debug, Clone)]
pub struct MomentCorrection {
    /// `ε_kl = ∫ z_k z_l K dz - Σ_m m_k m_l P(m)`, regularized over growing
    /// cubes and extrapolated in the cube size.
    pub defect: DMatrix<f64>,
    /// `∫_{|z|_∞ < 1/2} z_k z_l K dz`.
    pub own: DMatrix<f64>,
}

impl FrozenKernel {
    /// `∫_{|z|_∞ < 1} z_k z_l K dz`; over `|z|_∞ < R` it scales as `R^{2-2s}`.
    fn unit_cube_moments(&self, faces: &CubeFaceRule) -> DMatrix<f64> {
        let dim = self.dim();
        let a = 2.0 - 2.0 * self.s;
        let mut g = DMatrix::zeros(dim, dim);
        for ((theta, e), w) in faces.directions.iter().zip(&faces.exits).zip(&faces.weights) {
            let radial = w * self.value(theta) * e.powf(a) / a;
            for k in 0..dim {
                for l in 0..dim {
                    g[(k, l)] += radial * theta[k] * theta[l];
                }
            }
        }
        g
    }

    /// Moment defect from partial sums over cubes of half-width `M + ½`,
    /// `M ∈ {extent/4, extent/2, extent}`, extrapolated with the model
    /// `ε + a (M+½)^{-2s} + b (M+½)^{-2s-2}`.
    pub fn moment_correction(&self, extent: usize) -> MomentCorrection {
        let dim = self.dim();
        let extent = extent.max(8);
        let faces = CubeFaceRule::new(dim, 16, 4);
        let g = self.unit_cube_moments(&faces);
        let table = OffsetTable::new(self, &vec![extent; dim]);
        // ring-by-ring sums of m_k m_l P(m)
        let mut rings = vec![DMatrix::<f64>::zeros(dim, dim); extent + 1];
        let size = 2 * extent + 1;
        let mut m = vec![0i64; dim];
        for flat in 0..size.pow(dim as u32) {
            let mut rem = flat;
            for v in m.iter_mut() {
                *v = (rem % size) as i64 - extent as i64;
                rem /= size;
            }
            let r = m.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as usize;
            if r == 0 {
                continue;
            }
            let p = table.get(&m);
            for k in 0..dim {
                for l in 0..dim {
                    rings[r][(k, l)] += m[k] as f64 * m[l] as f64 * p;
                }
            }
        }
        let a = 2.0 - 2.0 * self.s;
        let levels = [extent / 4, extent / 2, extent];
        let partial = |mm: usize| -> DMatrix<f64> {
            let mut acc = &g * (mm as f64 + 0.5).powf(a);
            for ring in rings.iter().take(mm + 1).skip(1) {
                acc -= ring;
            }
            acc
        };
        let samples: Vec<DMatrix<f64>> = levels.iter().map(|&mm| partial(mm)).collect();
        let basis = nalgebra::Matrix3::from_fn(|row, col| {
            let r = levels[row] as f64 + 0.5;
            match col {
                0 => 1.0,
                1 => r.powf(-2.0 * self.s),
                _ => r.powf(-2.0 * self.s - 2.0),
            }
        });
        let lu = basis.lu();
        let mut defect = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            for l in 0..dim {
                let rhs = nalgebra::Vector3::new(samples[0][(k, l)], samples[1][(k, l)], samples[2][(k, l)]);
                defect[(k, l)] = lu.solve(&rhs).map(|c| c[0]).unwrap_or(samples[2][(k, l)]);
            }
        }
        MomentCorrection {
            defect,
            own: g * 0.5f64.powf(a),
        }
    }
}

impl MomentCorrection {
    /// Lattice offsets and unit-mesh weights of the stencil realizing
    /// `½ Σ_kl M_kl ∂_k ∂_l u` with central differences.
    pub fn stencil(m: &DMatrix<f64>) -> Vec<(Vec<i64>, f64)> {
        let dim = m.nrows();
        let mut out = Vec::new();
        for k in 0..dim {
            for sgn in [-1i64, 1] {
                let mut off = vec![0i64; dim];
                off[k] = sgn;
                out.push((off, 0.5 * m[(k, k)]));
            }
            for l in k + 1..dim {
                for (a, b) in [(1i64, 1i64), (-1, -1), (1, -1), (-1, 1)] {
                    let mut off = vec![0i64; dim];
                    off[k] = a;
                    off[l] = b;
                    out.push((off, 0.25 * (a * b) as f64 * m[(k, l)]));
                }
            }
        }
        out
    }
}

/// Gauss rules used for cell integrals, graded by the ring `|m|_∞`.
#[derive(Debug, Clone)]
pub struct CellRules {
    adjacent: Rule,
    near: Rule,
    middle: Rule,
    far: Rule,
}

impl Default for CellRules {
    fn default() -> Self {
        Self {
            adjacent: gauss_legendre(6),
            near: gauss_legendre(6),
            middle: gauss_legendre(6),
            far: gauss_legendre(3),
        }
    }
}

impl CellRules {
    /// The same rule on every ring (ring-dependent panel counts are kept).
    pub fn uniform(rule: Rule) -> Self {
        Self {
            adjacent: rule.clone(),
            near: rule.clone(),
            middle: rule.clone(),
            far: rule,
        }
    }

    fn for_ring(&self, r: u64) -> (usize, &Rule) {
        match r {
            1 => (8, &self.adjacent),
            2..=3 => (2, &self.near),
            4..=10 => (1, &self.middle),
            _ => (1, &self.far),
        }
    }
}

/// Cell integrals of a constant-matrix kernel for all offsets inside a box,
/// stored densely and symmetric under `m ↦ -m`.
#[derive(Debug, Clone)]
pub struct OffsetTable {
    extent: Vec<usize>,
    values: Vec<f64>,
    /// Kernel mass outside the unit cell, lattice units.
    pub self_exterior: f64,
}

impl OffsetTable {
    pub fn new(kernel: &FrozenKernel, extent: &[usize]) -> Self {
        let rules = CellRules::default();
        let dim = extent.len();
        let sizes: Vec<usize> = extent.iter().map(|e| 2 * e + 1).collect();
        let total: usize = sizes.iter().product();
        let values: Vec<f64> = {
            use rayon::prelude::*;
            (0..total)
                .into_par_iter()
                .map(|flat| {
                    let mut rem = flat;
                    let mut m = vec![0i64; dim];
                    for k in (0..dim).rev() {
                        m[k] = (rem % sizes[k]) as i64 - extent[k] as i64;
                        rem /= sizes[k];
                    }
                    if m.iter().all(|v| *v == 0) {
                        0.0
                    } else {
                        kernel.cell_integral(&m, &rules)
                    }
                })
                .collect()
        };
        let faces = CubeFaceRule::new(dim, 16, 4);
        Self {
            extent: extent.to_vec(),
            values,
            self_exterior: kernel.self_exterior(&faces),
        }
    }

    /// Cell integral at offset `m` (0 at the origin).
    #[inline]
    pub fn get(&self, m: &[i64]) -> f64 {
        let mut flat = 0usize;
        for (&mk, &extent) in m.iter().zip(&self.extent) {
            flat = flat * (2 * extent + 1) + (mk + extent as i64) as usize;
        }
        self.values[flat]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn iso(dim: usize, s: f64) -> FrozenKernel {
        FrozenKernel {
            matrix: DMatrix::identity(dim, dim),
            s,
            scale: 1.0,
        }
    }

    #[test]
    fn one_dimensional_cells_match_antiderivative() {
        for &s in &[0.2, 0.5, 0.9] {
            let k = iso(1, s);
            let rules = CellRules::default();
            for m in 1..15i64 {
                let a = m as f64 - 0.5;
                let b = m as f64 + 0.5;
                let exact = (a.powf(-2.0 * s) - b.powf(-2.0 * s)) / (2.0 * s);
                let got = k.cell_integral(&[m], &rules);
                let tol = if m > 10 { 1e-8 } else { 1e-10 };
                assert_relative_eq!(got, exact, max_relative = tol);
            }
            let t = OffsetTable::new(&k, &[3]);
            assert_relative_eq!(
                t.self_exterior,
                2.0 * 0.5f64.powf(-2.0 * s) / (2.0 * s),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn ring_sums_close_the_exterior_mass() {
        // Σ_{0 < |m|_∞ ≤ M} P(m) + T (2M+1)^{-2s} = T  (self-similarity of the cube exterior)
        for dim in 1..=3usize {
            let s = 0.35;
            let mut k = iso(dim, s);
            if dim == 2 {
                k.matrix = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 0.7]);
            }
            let m_max = if dim == 3 { 3 } else { 6 };
            let t = OffsetTable::new(&k, &vec![m_max; dim]);
            let total: f64 = {
                let mut acc = 0.0;
                let size = 2 * m_max + 1;
                for flat in 0..size.pow(dim as u32) {
                    let mut rem = flat;
                    let mut m = vec![0i64; dim];
                    for v in m.iter_mut() {
                        *v = (rem % size) as i64 - m_max as i64;
                        rem /= size;
                    }
                    acc += t.get(&m);
                }
                acc
            };
            let tail = t.self_exterior * ((2 * m_max + 1) as f64).powf(-2.0 * s);
            assert_relative_eq!(total + tail, t.self_exterior, max_relative = 1e-8);
        }
    }

    #[test]
    fn moment_defect_matches_ring_series_in_one_dimension() {
        for &s in &[0.3, 0.5, 0.8] {
            let a = 2.0 - 2.0 * s;
            let gl = gauss_legendre(20);
            let ring = |r: f64| {
                let (x, w) = gl.mapped(-0.5, 0.5);
                let v: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(t, w)| w * t * (2.0 * r + t) * (r + t).powf(-1.0 - 2.0 * s))
                    .sum();
                2.0 * v
            };
            let mut series = 2.0 * 0.5f64.powf(a) / a;
            let big = 100_000usize;
            for r in 1..=big {
                series += ring(r as f64);
            }
            let rf = big as f64;
            // tail of the r^{-1-2s} leading behaviour, midpoint form
            series += ring(rf) * rf.powf(1.0 + 2.0 * s) * (rf + 0.5).powf(-2.0 * s) / (2.0 * s);
            let c = iso(1, s).moment_correction(64);
            assert!(
                (c.defect[(0, 0)] - series).abs() < 1e-7,
                "{} vs {series}",
                c.defect[(0, 0)]
            );
            assert_relative_eq!(c.own[(0, 0)], 2.0 * 0.5f64.powf(a) / a, max_relative = 1e-13);
        }
    }

    #[test]
    fn moment_defect_is_stable_under_extent() {
        let k = FrozenKernel {
            matrix: DMatrix::from_row_slice(2, 2, &[1.4, 0.3, 0.3, 0.9]),
            s: 0.6,
            scale: 1.0,
        };
        let a = k.moment_correction(16).defect;
        let b = k.moment_correction(32).defect;
        assert!((a - &b).amax() < 1e-4 * b.amax(), "{b}");
    }

    #[test]
    fn table_is_even() {
        let k = FrozenKernel {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            s: 0.6,
            scale: 0.7,
        };
        let t = OffsetTable::new(&k, &[4, 4]);
        assert_relative_eq!(t.get(&[1, -2]), t.get(&[-1, 2]), max_relative = 1e-14);
        assert!(t.get(&[1, 1]) != t.get(&[1, -1]));
        assert_eq!(t.get(&[0, 0]), 0.0);
    }
}
