//! Lattice discretization with zero exterior data: domains, grid functions,
//! dense operator assembly, discrete energies and the Dirichlet solve.

mod assemble;
mod io;
mod lattice;
mod weights;

pub use assemble::{assemble, assemble_with, AssembledOperator, AssemblyOptions};
pub use io::{read_grid_csv, write_grid_csv, write_lattice_sidecar, LatticeMeta};
pub use lattice::{DomainDescriptor, GridFunction, LatticeDomain};
pub use weights::{CellRules, FrozenKernel, OffsetTable};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Squared discrete `H^s_K` seminorm `Σ Σ (u_i - u_j)² K w(x) w(y)` over the
/// pairs in `Q = R^{2N} \ (Ω^c)²` (default), or over pairs of nodes inside
/// `region` when a node mask is given.
pub fn seminorm_hsk(op: &AssembledOperator, u: &[f64], region: Option<&[bool]>) -> f64 {
    match region {
        None => 2.0 * op.energy(u, u),
        Some(mask) => {
            let n = op.len();
            let mut acc = 0.0;
            for i in 0..n {
                if !mask[i] {
                    continue;
                }
                for j in 0..n {
                    if mask[j] && j != i {
                        let d = u[i] - u[j];
                        acc += d * d * op.weights[(i, j)];
                    }
                }
            }
            acc * op.lattice.cell_volume()
        }
    }
}

/// Solution of a shifted Dirichlet problem.
#[derive(Debug, Clone)]
pub struct DirichletSolution {
    pub u: GridFunction,
    /// `‖(ℒ_V - C) u - rhs‖_∞`.
    pub residual: f64,
    /// Ratio of extreme pivots of the LU factorization.
    pub condition_estimate: f64,
}

/// Smallest shift `C₀` making the symmetric part of `ℒ_V - C₀` negative
/// semidefinite: the largest eigenvalue of `(M + Mᵀ)/2`.
pub fn estimate_c0(op: &AssembledOperator) -> f64 {
    let sym = (&op.matrix + op.matrix.transpose()) * 0.5;
    if op.len() <= 3000 {
        sym.symmetric_eigenvalues().max()
    } else {
        // Gershgorin bound
        (0..op.len())
            .map(|i| {
                let off: f64 = (0..op.len()).filter(|&j| j != i).map(|j| sym[(i, j)].abs()).sum();
                sym[(i, i)] + off
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Solves `(ℒ_V - C) u = rhs` on the interior nodes by LU factorization.
pub fn dirichlet_solve(op: &AssembledOperator, c: f64, rhs: &[f64]) -> Result<DirichletSolution> {
    let n = op.len();
    if rhs.len() != n {
        return Err(Error::Input(format!("rhs has {} values for {n} nodes", rhs.len())));
    }
    let mut a = op.matrix.clone();
    for i in 0..n {
        a[(i, i)] -= c;
    }
    let (u, condition) = lu_solve(&a, rhs)?;
    let r = &a * DVector::from_column_slice(&u) - DVector::from_column_slice(rhs);
    let residual = r.amax();
    Ok(DirichletSolution {
        u: GridFunction::new(op.lattice.clone(), u)?,
        residual,
        condition_estimate: condition,
    })
}

/// LU solve with a pivot-ratio conditioning check.
pub(crate) fn lu_solve(a: &DMatrix<f64>, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    let lu = a.clone().lu();
    let diag = lu.u().diagonal();
    let max = diag.amax();
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(min > 1e-14 * max) {
        return Err(Error::Solver {
            message: "matrix is singular to working precision".into(),
            condition,
        });
    }
    let x = lu
        .solve(&DVector::from_column_slice(rhs))
        .ok_or_else(|| Error::Solver {
            message: "LU solve failed".into(),
            condition,
        })?;
    Ok((x.as_slice().to_vec(), condition))
}

/// Summary of a discrete operator used by reports.
#[derive(Debug, Clone, Serialize)]
pub struct OperatorSummary {
    pub nodes: usize,
    pub mesh: f64,
    pub dim: usize,
    pub s: f64,
    pub drift_osc: f64,
    pub symmetric: bool,
}

impl AssembledOperator {
    pub fn summary(&self) -> OperatorSummary {
        let asym = (&self.matrix - self.matrix.transpose()).amax();
        OperatorSummary {
            nodes: self.len(),
            mesh: self.lattice.mesh(),
            dim: self.lattice.dim(),
            s: self.kernel.s(),
            drift_osc: self.drift_osc,
            symmetric: asym <= 1e-12 * self.matrix.amax(),
        }
    }
}

#[cfg(test)]
mod tests;
