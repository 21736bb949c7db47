//! Anisotropy fields `A(x, y)` and the power-law kernels they induce,
//! `K(x, y) = |(x-y)^T A(x,y) (x-y)|^{-(N+2s)/2}`, optionally scaled by the
//! fractional-Laplacian constant `c_{N,s}`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Symmetric positive-definite matrix with cached inverse and determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
    inv: DMatrix<f64>,
    det: f64,
    eig_min: f64,
    eig_max: f64,
}

impl SpdMatrix {
    /// Validates symmetry and positive definiteness (Cholesky).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Input(format!(
                "matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix has non-finite entries".into()));
        }
        let scale = m.amax().max(1e-300);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::Ellipticity(format!(
                "matrix is not symmetric (asymmetry {asym:e})"
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Ellipticity("matrix is not positive definite (Cholesky failed)".into()))?;
        let inv = chol.inverse();
        let det = chol.l().diagonal().iter().map(|d| d * d).product();
        let eig = sym.clone().symmetric_eigenvalues();
        let eig_min = eig.min();
        let eig_max = eig.max();
        if eig_min <= 0.0 {
            return Err(Error::Ellipticity(format!(
                "matrix has nonpositive eigenvalue {eig_min:e}"
            )));
        }
        Ok(Self {
            m: sym,
            inv,
            det,
            eig_min,
            eig_max,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Input("matrix rows must all have length N".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig_min
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eig_max
    }

    /// `z^T M z`.
    pub fn quad(&self, z: &[f64]) -> f64 {
        quad_form(&self.m, z)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.m[(i, j)]).collect())
            .collect()
    }
}

/// `z^T M z` for a dense matrix.
pub fn quad_form(m: &DMatrix<f64>, z: &[f64]) -> f64 {
    let n = z.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * z[j];
        }
        acc += z[i] * row;
    }
    acc
}

/// Matrix-valued map `x ↦ Ã(x)` used by the separable field variants.
pub type MatrixMap = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// The matrix map `A(x, y)`.
#[derive(Clone)]
pub enum AnisotropyField {
    /// `A(x, y) = M`.
    Constant(SpdMatrix),
    /// `A(x, y) = Ã(x) + Ã(y)`.
    SeparableSum { dim: usize, map: MatrixMap },
    /// `A(x, y) = Ã(x)Ã(y) + Ã(y)Ã(x)`.
    SeparableProduct { dim: usize, map: MatrixMap },
}

impl fmt::Debug for AnisotropyField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(m) => f.debug_tuple("Constant").field(m.matrix()).finish(),
            Self::SeparableSum { dim, .. } => write!(f, "SeparableSum(dim={dim})"),
            Self::SeparableProduct { dim, .. } => write!(f, "SeparableProduct(dim={dim})"),
        }
    }
}

impl AnisotropyField {
    pub fn identity(dim: usize) -> Self {
        Self::Constant(SpdMatrix::identity(dim))
    }

    pub fn separable_sum<F>(dim: usize, map: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::SeparableSum {
            dim,
            map: Arc::new(map),
        }
    }

    pub fn separable_product<F>(dim: usize, map: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::SeparableProduct {
            dim,
            map: Arc::new(map),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(m) => m.dim(),
            Self::SeparableSum { dim, .. } | Self::SeparableProduct { dim, .. } => *dim,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    pub fn constant_matrix(&self) -> Option<&SpdMatrix> {
        match self {
            Self::Constant(m) => Some(m),
            _ => None,
        }
    }

    /// `A(x, y)` as a dense matrix (symmetrized).
    pub fn matrix_at(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        match self {
            Self::Constant(m) => m.matrix().clone(),
            Self::SeparableSum { map, .. } => {
                let a = map(x) + map(y);
                (&a + a.transpose()) * 0.5
            }
            Self::SeparableProduct { map, .. } => {
                let ax = map(x);
                let ay = map(y);
                let a = &ax * &ay + &ay * &ax;
                (&a + a.transpose()) * 0.5
            }
        }
    }

    /// `z^T A(x, y) z`.
    pub fn quad_form(&self, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        match self {
            Self::Constant(m) => m.quad(z),
            _ => quad_form(&self.matrix_at(x, y), z),
        }
    }
}

/// Two-sided ellipticity bounds together with the order `s` and dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityBounds {
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub gamma_upper: f64,
    pub s: f64,
    pub dim: usize,
}

impl EllipticityBounds {
    pub fn new(gamma: f64, gamma_upper: f64, s: f64, dim: usize) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!("order s must lie in (0,1), got {s}")));
        }
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        if !(gamma > 0.0 && gamma <= gamma_upper && gamma_upper.is_finite()) {
            return Err(Error::Domain(format!(
                "ellipticity bounds must satisfy 0 < gamma <= Gamma < inf, got ({gamma}, {gamma_upper})"
            )));
        }
        Ok(Self {
            gamma,
            gamma_upper,
            s,
            dim,
        })
    }
}

/// `c_{N,s} = 4^s Γ(N/2+s) / (π^{N/2} |Γ(-s)|)`.
pub fn normalization_constant(dim: usize, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("order s must lie in (0,1), got {s}")));
    }
    if dim == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    let n = dim as f64;
    Ok(4f64.powf(s) * gamma(0.5 * n + s) / (PI.powf(0.5 * n) * gamma(-s).abs()))
}

/// A kernel: field, bounds and the normalization flag.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub field: AnisotropyField,
    pub bounds: EllipticityBounds,
    pub normalized: bool,
    scale: f64,
}

impl KernelSpec {
    pub fn new(field: AnisotropyField, bounds: EllipticityBounds, normalized: bool) -> Result<Self> {
        if field.dim() != bounds.dim {
            return Err(Error::Input(format!(
                "field dimension {} does not match bounds dimension {}",
                field.dim(),
                bounds.dim
            )));
        }
        let scale = if normalized {
            normalization_constant(bounds.dim, bounds.s)?
        } else {
            1.0
        };
        Ok(Self {
            field,
            bounds,
            normalized,
            scale,
        })
    }

    /// Constant field with bounds taken from the extreme eigenvalues.
    pub fn constant(matrix: SpdMatrix, s: f64, normalized: bool) -> Result<Self> {
        let bounds = EllipticityBounds::new(matrix.min_eigenvalue(), matrix.max_eigenvalue(), s, matrix.dim())?;
        Self::new(AnisotropyField::Constant(matrix), bounds, normalized)
    }

    /// Normalized isotropic kernel of `-(-Δ)^s`.
    pub fn fractional_laplacian(dim: usize, s: f64) -> Result<Self> {
        Self::constant(SpdMatrix::identity(dim), s, true)
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim
    }

    pub fn s(&self) -> f64 {
        self.bounds.s
    }

    /// Multiplicative constant in front of the power law (`c_{N,s}` or 1).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `(N + 2s) / 2`.
    pub fn half_exponent(&self) -> f64 {
        0.5 * (self.dim() as f64 + 2.0 * self.s())
    }

    /// Same field and normalization with a different constant matrix.
    pub fn with_constant_matrix(&self, matrix: SpdMatrix) -> Result<Self> {
        Self::constant(matrix, self.s(), self.normalized)
    }

    /// `K(x, y)` with validation.
    pub fn kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::Input("point dimension does not match kernel".into()));
        }
        let z: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        if z.iter().all(|v| *v == 0.0) {
            return Err(Error::Domain("kernel evaluated at coincident points".into()));
        }
        let q = self.field.quad_form(x, y, &z);
        if !(q > 0.0) {
            return Err(Error::Ellipticity(format!(
                "quadratic form is not positive ({q:e}) at x={x:?}, y={y:?}"
            )));
        }
        Ok(self.scale * q.powf(-self.half_exponent()))
    }

    /// `K(x, y)` without checks; `z = y - x` must be nonzero.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        self.scale * self.field.quad_form(x, y, z).powf(-self.half_exponent())
    }

    /// Angular profile `scale · (θ^T A(x,y) θ)^{-(N+2s)/2}`, so that
    /// `K(x, x + tθ) = profile · t^{-N-2s}`.
    #[inline]
    pub fn angular_profile(&self, x: &[f64], y: &[f64], theta: &[f64]) -> f64 {
        self.scale * self.field.quad_form(x, y, theta).powf(-self.half_exponent())
    }
}

/// Outcome of an ellipticity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticityReport {
    pub min_quotient: f64,
    pub max_quotient: f64,
    pub samples: usize,
    pub skipped: usize,
    pub within_bounds: bool,
}

/// Rayleigh quotients `ξ^T A(x,y) ξ / |ξ|^2` over the samples, compared with
/// the declared bounds. Samples with `ξ = 0` are skipped and counted.
pub fn validate_ellipticity(spec: &KernelSpec, samples: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> EllipticityReport {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut used = 0;
    let mut skipped = 0;
    for (x, y, xi) in samples {
        let n2: f64 = xi.iter().map(|v| v * v).sum();
        if n2 == 0.0 {
            skipped += 1;
            continue;
        }
        let q = spec.field.quad_form(x, y, xi) / n2;
        lo = lo.min(q);
        hi = hi.max(q);
        used += 1;
    }
    let tol = 1e-12 * spec.bounds.gamma_upper;
    EllipticityReport {
        min_quotient: lo,
        max_quotient: hi,
        samples: used,
        skipped,
        within_bounds: used > 0 && lo >= spec.bounds.gamma - tol && hi <= spec.bounds.gamma_upper + tol,
    }
}

/// JSON description of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub variant: FieldVariant,
    /// The constant matrix, or the constant `Ã` for separable variants.
    pub matrix: Vec<Vec<f64>>,
    pub s: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default, rename = "Gamma")]
    pub gamma_upper: Option<f64>,
    #[serde(default = "default_true")]
    pub normalized: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldVariant {
    Constant,
    SeparableSum,
    SeparableProduct,
}

impl KernelConfig {
    /// Builds the kernel. Separable variants use the constant `Ã` given by
    /// `matrix`; missing bounds default to the extreme eigenvalues of `A`.
    pub fn build(&self) -> Result<KernelSpec> {
        let base = SpdMatrix::from_rows(&self.matrix)?;
        let dim = base.dim();
        let field = match self.variant {
            FieldVariant::Constant => AnisotropyField::Constant(base.clone()),
            FieldVariant::SeparableSum => {
                let m = base.matrix().clone();
                AnisotropyField::separable_sum(dim, move |_| m.clone())
            }
            FieldVariant::SeparableProduct => {
                let m = base.matrix().clone();
                AnisotropyField::separable_product(dim, move |_| m.clone())
            }
        };
        let origin = vec![0.0; dim];
        let a = SpdMatrix::new(field.matrix_at(&origin, &origin))?;
        let gamma = self.gamma.unwrap_or(a.min_eigenvalue());
        let gamma_upper = self.gamma_upper.unwrap_or(a.max_eigenvalue());
        let bounds = EllipticityBounds::new(gamma, gamma_upper, self.s, dim)?;
        let spec = KernelSpec::new(field, bounds, self.normalized)?;
        let report = validate_ellipticity(
            &spec,
            &(0..dim)
                .map(|k| {
                    let mut e = vec![0.0; dim];
                    e[k] = 1.0;
                    (origin.clone(), origin.clone(), e)
                })
                .collect::<Vec<_>>(),
        );
        if a.min_eigenvalue() < gamma * (1.0 - 1e-12) || a.max_eigenvalue() > gamma_upper * (1.0 + 1e-12) {
            return Err(Error::Ellipticity(format!(
                "field spectrum [{}, {}] outside declared bounds [{gamma}, {gamma_upper}] (axis quotients [{}, {}])",
                a.min_eigenvalue(),
                a.max_eigenvalue(),
                report.min_quotient,
                report.max_quotient
            )));
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_unit_displacement() {
        let k = KernelSpec::constant(SpdMatrix::identity(1), 0.5, false).unwrap();
        assert_relative_eq!(k.kernel_eval(&[0.0], &[1.0]).unwrap(), 1.0);
        let r: f64 = 0.37;
        assert_relative_eq!(
            k.kernel_eval(&[0.2], &[0.2 + r]).unwrap(),
            r.powf(-2.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn anisotropic_hand_value() {
        let k = KernelSpec::constant(SpdMatrix::diagonal(&[4.0, 1.0]).unwrap(), 0.5, false).unwrap();
        assert_relative_eq!(k.kernel_eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn coincident_points_rejected() {
        let k = KernelSpec::fractional_laplacian(2, 0.3).unwrap();
        assert!(matches!(k.kernel_eval(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn normalization_values() {
        assert_relative_eq!(normalization_constant(1, 0.5).unwrap(), 1.0 / PI, epsilon = 1e-14);
        // N=3, s=1/2: 2 Γ(2) / (π^{3/2} · 2√π) = 1/π²
        assert_relative_eq!(
            normalization_constant(3, 0.5).unwrap(),
            1.0 / (PI * PI),
            epsilon = 1e-14
        );
        // N=2, s=1/2: 2 Γ(3/2) / (π · 2√π) = 1/(2π)
        assert_relative_eq!(normalization_constant(2, 0.5).unwrap(), 0.5 / PI, epsilon = 1e-14);
        assert!(normalization_constant(1, 1.0).is_err());
        assert!(normalization_constant(1, 0.0).is_err());
    }

    #[test]
    fn normalization_tends_to_laplacian() {
        // for u = x²/2 the truncated integral c∫_{|z|<1} z²/2 |z|^{-1-2s} dz = c/(2-2s) must tend to u'' = 1
        let mut errs = Vec::new();
        for &s in &[0.9, 0.99, 0.999] {
            let c = normalization_constant(1, s).unwrap();
            errs.push((c / (2.0 - 2.0 * s) - 1.0).abs());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2] && errs[2] < 1e-2, "{errs:?}");
    }

    #[test]
    fn ellipticity_reports() {
        let k = KernelSpec::constant(SpdMatrix::diagonal(&[4.0, 1.0]).unwrap(), 0.5, false).unwrap();
        let samples: Vec<_> = (0..64)
            .map(|i| {
                let t = i as f64 * 0.1;
                (vec![0.0, 0.0], vec![1.0, 0.0], vec![t.cos(), t.sin()])
            })
            .chain(std::iter::once((vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0])))
            .chain(std::iter::once((vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0])))
            .collect();
        let r = validate_ellipticity(&k, &samples);
        assert_relative_eq!(r.min_quotient, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.max_quotient, 4.0, epsilon = 1e-12);
        assert!(r.within_bounds);
    }

    #[test]
    fn separable_product_identity_gives_two() {
        let field = AnisotropyField::separable_product(2, |_| DMatrix::identity(2, 2));
        let bounds = EllipticityBounds::new(2.0, 2.0, 0.5, 2).unwrap();
        let k = KernelSpec::new(field, bounds, false).unwrap();
        let r = validate_ellipticity(&k, &[(vec![0.3, 0.1], vec![-1.0, 2.0], vec![0.6, -0.8])]);
        assert_relative_eq!(r.min_quotient, 2.0, epsilon = 1e-14);
        assert!(r.within_bounds);
    }

    #[test]
    fn separable_product_is_symmetric_for_noncommuting_factors() {
        let field = AnisotropyField::separable_product(2, |x: &[f64]| {
            let c = x[0].cos();
            let s = x[0].sin();
            DMatrix::from_row_slice(2, 2, &[2.0 + c, s * 0.5, s * 0.5, 1.5 - 0.5 * c])
        });
        let a = field.matrix_at(&[0.3, 0.0], &[1.4, 0.0]);
        assert!((&a - a.transpose()).amax() < 1e-15);
        let b = field.matrix_at(&[1.4, 0.0], &[0.3, 0.0]);
        assert!((&a - &b).amax() < 1e-14);
    }

    #[test]
    fn config_rejects_non_spd() {
        let cfg = KernelConfig {
            variant: FieldVariant::Constant,
            matrix: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            s: 0.5,
            gamma: None,
            gamma_upper: None,
            normalized: true,
        };
        assert!(matches!(cfg.build(), Err(Error::Ellipticity(_))));
    }

    #[test]
    fn config_round_trip() {
        let json = r#"{"variant":"separable_product","matrix":[[1.0,0.0],[0.0,2.0]],"s":0.4,"gamma":1.0,"Gamma":9.0}"#;
        let cfg: KernelConfig = serde_json::from_str(json).unwrap();
        let k = cfg.build().unwrap();
        let a = k.field.matrix_at(&[0.0, 0.0], &[1.0, 1.0]);
        assert_relative_eq!(a[(1, 1)], 8.0);
        assert!(k.normalized);
    }
}
