//! Uniform lattices over bounded domains and grid functions on them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::SmoothFunction;

/// Serializable description of the continuous domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DomainDescriptor {
    Interval { a: f64, b: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    SignedDistance { label: String },
}

type LevelSet = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Regular lattice `origin + mesh · j` over a bounding box, with a mask
/// selecting the nodes inside the domain `Ω`.
///
/// Each node owns the cube of side `mesh` centred on it; the union of the
/// cubes of interior nodes is the discrete domain `Ω_h`. Values outside `Ω_h`
/// are zero.
#[derive(Clone)]
pub struct LatticeDomain {
    dim: usize,
    mesh: f64,
    origin: Vec<f64>,
    shape: Vec<usize>,
    descriptor: DomainDescriptor,
    level_set: Option<LevelSet>,
    mask: Vec<bool>,
    interior: Vec<usize>,
    multi: Vec<Vec<i64>>,
    points: Vec<Vec<f64>>,
}

impl fmt::Debug for LatticeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeDomain")
            .field("dim", &self.dim)
            .field("mesh", &self.mesh)
            .field("origin", &self.origin)
            .field("shape", &self.shape)
            .field("descriptor", &self.descriptor)
            .field("interior_nodes", &self.interior.len())
            .finish()
    }
}

impl LatticeDomain {
    fn build(
        mesh: f64,
        origin: Vec<f64>,
        shape: Vec<usize>,
        descriptor: DomainDescriptor,
        level_set: Option<LevelSet>,
        inside: impl Fn(&[f64]) -> bool,
    ) -> Result<Self> {
        if !(mesh > 0.0 && mesh.is_finite()) {
            return Err(Error::Input(format!("mesh width must be positive, got {mesh}")));
        }
        let dim = origin.len();
        let total: usize = shape.iter().product();
        let mut mask = vec![false; total];
        let mut interior = Vec::new();
        let mut multi = Vec::new();
        let mut points = Vec::new();
        for (flat, slot) in mask.iter_mut().enumerate() {
            let idx = unflatten(flat, &shape);
            let p: Vec<f64> = (0..dim).map(|k| origin[k] + mesh * idx[k] as f64).collect();
            if inside(&p) {
                *slot = true;
                interior.push(flat);
                multi.push(idx.iter().map(|&v| v as i64).collect());
                points.push(p);
            }
        }
        if interior.is_empty() {
            return Err(Error::Input("lattice has no interior nodes".into()));
        }
        Ok(Self {
            dim,
            mesh,
            origin,
            shape,
            descriptor,
            level_set,
            mask,
            interior,
            multi,
            points,
        })
    }

    /// Interval `(a, b)` split into cells of (approximately) the requested
    /// width; the width is adjusted so the cells tile the interval exactly.
    pub fn interval(a: f64, b: f64, mesh: f64) -> Result<Self> {
        if !(b > a) {
            return Err(Error::Input(format!("interval needs a < b, got ({a}, {b})")));
        }
        if !(mesh > 0.0) {
            return Err(Error::Input(format!("mesh width must be positive, got {mesh}")));
        }
        let n = ((b - a) / mesh).round().max(1.0) as usize;
        let h = (b - a) / n as f64;
        Self::build(
            h,
            vec![a + 0.5 * h],
            vec![n],
            DomainDescriptor::Interval { a, b },
            None,
            |_| true,
        )
    }

    /// Axis-aligned box; every side must be an integer multiple of `mesh`.
    pub fn box_domain(lo: &[f64], hi: &[f64], mesh: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Input("box corners must have equal, nonzero dimension".into()));
        }
        let mut shape = Vec::new();
        for k in 0..lo.len() {
            let len = hi[k] - lo[k];
            if !(len > 0.0) {
                return Err(Error::Input(format!("box side {k} has nonpositive length")));
            }
            let n = (len / mesh).round();
            if n < 1.0 || (n * mesh - len).abs() > 1e-9 * len {
                return Err(Error::Input(format!(
                    "box side {k} (length {len}) is not a multiple of the mesh width {mesh}"
                )));
            }
            shape.push(n as usize);
        }
        let origin = lo.iter().map(|v| v + 0.5 * mesh).collect();
        Self::build(
            mesh,
            origin,
            shape,
            DomainDescriptor::Box {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
            None,
            |_| true,
        )
    }

    /// Open ball; the centre is a lattice node and `Ω_h` is the staircase
    /// union of cells whose nodes lie inside the ball.
    pub fn ball(center: &[f64], radius: f64, mesh: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Input("ball radius must be positive".into()));
        }
        let half = (radius / mesh).ceil() as usize;
        let n = 2 * half + 1;
        let origin = center.iter().map(|c| c - mesh * half as f64).collect();
        let c = center.to_vec();
        Self::build(
            mesh,
            origin,
            vec![n; center.len()],
            DomainDescriptor::Ball {
                center: center.to_vec(),
                radius,
            },
            None,
            move |p| p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < radius * radius,
        )
    }

    /// Nodes of the box lattice where the level-set function is negative.
    pub fn from_level_set<F>(lo: &[f64], hi: &[f64], mesh: f64, label: &str, phi: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let bbox = Self::box_domain(lo, hi, mesh)?;
        let phi: LevelSet = Arc::new(phi);
        let p2 = phi.clone();
        Self::build(
            mesh,
            bbox.origin,
            bbox.shape,
            DomainDescriptor::SignedDistance {
                label: label.to_string(),
            },
            Some(phi),
            move |p| p2(p) < 0.0,
        )
    }

    /// Image of the lattice under `x ↦ x0 + λ(x - x0)`.
    pub fn scaled_about(&self, x0: &[f64], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Input("scale factor must be positive".into()));
        }
        let origin: Vec<f64> = self.origin.iter().zip(x0).map(|(o, c)| c + lambda * (o - c)).collect();
        let descriptor = match &self.descriptor {
            DomainDescriptor::Interval { a, b } => DomainDescriptor::Interval {
                a: x0[0] + lambda * (a - x0[0]),
                b: x0[0] + lambda * (b - x0[0]),
            },
            DomainDescriptor::Box { lo, hi } => DomainDescriptor::Box {
                lo: lo.iter().zip(x0).map(|(v, c)| c + lambda * (v - c)).collect(),
                hi: hi.iter().zip(x0).map(|(v, c)| c + lambda * (v - c)).collect(),
            },
            DomainDescriptor::Ball { center, radius } => DomainDescriptor::Ball {
                center: center.iter().zip(x0).map(|(v, c)| c + lambda * (v - c)).collect(),
                radius: lambda * radius,
            },
            DomainDescriptor::SignedDistance { label } => DomainDescriptor::SignedDistance {
                label: format!("{label} scaled by {lambda}"),
            },
        };
        let mask = self.mask.clone();
        let shape = self.shape.clone();
        let out = Self::build(self.mesh * lambda, origin, self.shape.clone(), descriptor, None, |_| {
            true
        })?;
        // keep exactly the same node set as the original lattice
        let mut filtered = out;
        let keep: Vec<bool> = filtered.interior.iter().map(|&flat| mask[flat]).collect();
        let mut interior = Vec::new();
        let mut multi = Vec::new();
        let mut points = Vec::new();
        for (k, flat) in filtered.interior.iter().enumerate() {
            if keep[k] {
                interior.push(*flat);
                multi.push(filtered.multi[k].clone());
                points.push(filtered.points[k].clone());
            }
        }
        filtered.mask = mask;
        filtered.interior = interior;
        filtered.multi = multi;
        filtered.points = points;
        filtered.shape = shape;
        Ok(filtered)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    /// Volume of one cell, `mesh^N`.
    pub fn cell_volume(&self) -> f64 {
        self.mesh.powi(self.dim as i32)
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn descriptor(&self) -> &DomainDescriptor {
        &self.descriptor
    }

    pub fn level_set(&self) -> Option<&LevelSet> {
        self.level_set.as_ref()
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    /// Coordinates of the interior nodes, in storage order.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Integer lattice indices of the interior nodes.
    pub fn multi_indices(&self) -> &[Vec<i64>] {
        &self.multi
    }

    /// Mask over the full bounding box (flat box order).
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Interior position of the box node with the given multi-index.
    pub fn interior_index(&self, idx: &[i64]) -> Option<usize> {
        if idx.len() != self.dim {
            return None;
        }
        let mut flat = 0usize;
        for (&i, &size) in idx.iter().zip(&self.shape) {
            if i < 0 || i as usize >= size {
                return None;
            }
            flat = flat * size + i as usize;
        }
        if !self.mask[flat] {
            return None;
        }
        self.interior.binary_search(&flat).ok()
    }

    /// Interior node closest to `x`, if `x` lies in one of the interior cells.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let idx: Vec<i64> = (0..self.dim)
            .map(|k| ((x[k] - self.origin[k]) / self.mesh).round() as i64)
            .collect();
        self.interior_index(&idx)
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: &SmoothFunction) -> Vec<f64> {
        self.points.iter().map(|p| f.eval(p)).collect()
    }

    /// Largest `|m_k|` among pairwise index differences, per axis.
    pub fn offset_extent(&self) -> Vec<usize> {
        (0..self.dim)
            .map(|k| {
                let lo = self.multi.iter().map(|m| m[k]).min().unwrap_or(0);
                let hi = self.multi.iter().map(|m| m[k]).max().unwrap_or(0);
                (hi - lo) as usize
            })
            .collect()
    }
}

fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

/// Values on the interior nodes of a lattice; zero outside `Ω_h`.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub lattice: Arc<LatticeDomain>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(lattice: Arc<LatticeDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::Input(format!(
                "grid function has {} values for {} nodes",
                values.len(),
                lattice.len()
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn sample(lattice: Arc<LatticeDomain>, f: &SmoothFunction) -> Self {
        let values = lattice.sample(f);
        Self { lattice, values }
    }

    pub fn zeros(lattice: Arc<LatticeDomain>) -> Self {
        let n = lattice.len();
        Self {
            lattice,
            values: vec![0.0; n],
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `Σ u_i · mesh^N`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.cell_volume()
    }

    /// Value at the interior node nearest to `x` (0 outside `Ω_h`).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.lattice.locate(x).map(|i| self.values[i]).unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_cells_tile() {
        let l = LatticeDomain::interval(-1.0, 1.0, 0.1).unwrap();
        assert_eq!(l.len(), 20);
        assert_relative_eq!(l.points()[0][0], -0.95, epsilon = 1e-14);
        assert_relative_eq!(l.points()[19][0], 0.95, epsilon = 1e-14);
        assert_eq!(l.locate(&[0.01]), Some(10));
        assert_eq!(l.locate(&[1.2]), None);
    }

    #[test]
    fn ball_is_symmetric() {
        let l = LatticeDomain::ball(&[0.0, 0.0], 1.0, 0.25).unwrap();
        let n = l.len();
        let sum: Vec<f64> = (0..2).map(|k| l.points().iter().map(|p| p[k]).sum()).collect();
        assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12);
        assert!(l.points().iter().all(|p| p[0] * p[0] + p[1] * p[1] < 1.0));
        assert_eq!(
            l.locate(&[0.0, 0.0]).map(|i| l.points()[i].clone()),
            Some(vec![0.0, 0.0])
        );
        assert!(n > 40);
    }

    #[test]
    fn box_rejects_incommensurate_mesh() {
        assert!(LatticeDomain::box_domain(&[0.0, 0.0], &[1.0, 0.7], 0.2).is_err());
        let l = LatticeDomain::box_domain(&[0.0, 0.0], &[1.0, 0.6], 0.2).unwrap();
        assert_eq!(l.len(), 15);
    }

    #[test]
    fn scaling_preserves_node_set() {
        let l = LatticeDomain::ball(&[0.5, 0.0], 1.0, 0.2).unwrap();
        let s = l.scaled_about(&[0.5, 0.0], 0.25).unwrap();
        assert_eq!(s.len(), l.len());
        for (p, q) in l.points().iter().zip(s.points()) {
            assert_relative_eq!(q[0] - 0.5, 0.25 * (p[0] - 0.5), epsilon = 1e-13);
            assert_relative_eq!(q[1], 0.25 * p[1], epsilon = 1e-13);
        }
        assert_relative_eq!(s.mesh(), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn level_set_domain() {
        let l = LatticeDomain::from_level_set(&[-1.0, -1.0], &[1.0, 1.0], 0.1, "diamond", |p| {
            p[0].abs() + p[1].abs() - 0.8
        })
        .unwrap();
        assert!(l.points().iter().all(|p| p[0].abs() + p[1].abs() < 0.8));
        assert!(matches!(l.descriptor(), DomainDescriptor::SignedDistance { .. }));
    }
}
