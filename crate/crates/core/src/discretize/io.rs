//! CSV serialization of grid functions and the JSON lattice sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::lattice::{DomainDescriptor, GridFunction, LatticeDomain};
use crate::error::{Error, Result};

/// Lattice metadata written next to grid-function CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeMeta {
    pub dim: usize,
    pub mesh: f64,
    pub origin: Vec<f64>,
    pub shape: Vec<usize>,
    pub interior_nodes: usize,
    pub domain: DomainDescriptor,
}

impl LatticeMeta {
    pub fn of(lattice: &LatticeDomain) -> Self {
        Self {
            dim: lattice.dim(),
            mesh: lattice.mesh(),
            origin: lattice.origin().to_vec(),
            shape: lattice.shape().to_vec(),
            interior_nodes: lattice.len(),
            domain: lattice.descriptor().clone(),
        }
    }
}

/// Writes `index, x0, …, x{N-1}, value` rows.
pub fn write_grid_csv(u: &GridFunction, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let dim = u.lattice.dim();
    let mut header = vec!["index".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    header.push("value".into());
    w.write_record(&header)?;
    for (i, (p, v)) in u.lattice.points().iter().zip(&u.values).enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(p.iter().map(|c| format!("{c:.17e}")));
        rec.push(format!("{v:.17e}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the JSON sidecar describing the lattice.
pub fn write_lattice_sidecar(lattice: &LatticeDomain, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &LatticeMeta::of(lattice))?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads values written by [`write_grid_csv`] back onto `lattice`.
pub fn read_grid_csv(lattice: Arc<LatticeDomain>, path: &Path) -> Result<GridFunction> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let mut values = vec![f64::NAN; lattice.len()];
    for rec in r.records() {
        let rec = rec?;
        let idx: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Input("bad index column".into()))?;
        let v: f64 = rec
            .get(rec.len() - 1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Input("bad value column".into()))?;
        if idx >= values.len() {
            return Err(Error::Input(format!("index {idx} out of range")));
        }
        values[idx] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("CSV does not cover every lattice node".into()));
    }
    GridFunction::new(lattice, values)
}
