//! JSON experiment configuration and its translation to library objects.

use std::fmt;
use std::sync::Arc;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use nonlocal_dv::boundary_barriers::BarrierDomain;
use nonlocal_dv::discretize::LatticeDomain;
use nonlocal_dv::dv_functional::DensitySpec;
use nonlocal_dv::eigen::{critical_profile, outer_step_drift};
use nonlocal_dv::kernel_field::KernelConfig;
use nonlocal_dv::properties::SuiteConfig;
use nonlocal_dv::{KernelSpec, SmoothFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    OperatorEval,
    Eigen,
    DvFunctional,
    RecoverMatrix,
    RecoverDrift,
    BarrierCheck,
    Verify,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Command::OperatorEval => "operator-eval",
            Command::Eigen => "eigen",
            Command::DvFunctional => "dv-functional",
            Command::RecoverMatrix => "recover-matrix",
            Command::RecoverDrift => "recover-drift",
            Command::BarrierCheck => "barrier-check",
            Command::Verify => "verify",
        };
        f.write_str(name)
    }
}

/// Configuration problem found after parsing, with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub type SchemaResult<T> = std::result::Result<T, SchemaError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub density: Option<DensityConfig>,
    #[serde(default)]
    pub drift: Option<FunctionConfig>,
    #[serde(default)]
    pub potential: Option<FunctionConfig>,
    /// Input of `operator-eval`.
    #[serde(default)]
    pub function: Option<FunctionConfig>,
    /// Evaluation points of `operator-eval`.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub recovery: Option<RecoveryConfig>,
    #[serde(default)]
    pub drift_probe: Option<DriftProbeConfig>,
    #[serde(default)]
    pub barrier: Option<BarrierBlock>,
    #[serde(default)]
    pub verify: Option<SuiteConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Interval { a: f64, b: f64, mesh: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64>, mesh: f64 },
    Ball { center: Vec<f64>, radius: f64, mesh: f64 },
}

impl DomainConfig {
    pub fn dim(&self) -> usize {
        match self {
            DomainConfig::Interval { .. } => 1,
            DomainConfig::Box { lo, .. } => lo.len(),
            DomainConfig::Ball { center, .. } => center.len(),
        }
    }

    pub fn build(&self) -> nonlocal_dv::Result<Arc<LatticeDomain>> {
        let lat = match self {
            DomainConfig::Interval { a, b, mesh } => LatticeDomain::interval(*a, *b, *mesh)?,
            DomainConfig::Box { lo, hi, mesh } => LatticeDomain::box_domain(lo, hi, *mesh)?,
            DomainConfig::Ball { center, radius, mesh } => LatticeDomain::ball(center, *radius, *mesh)?,
        };
        Ok(Arc::new(lat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    /// Unit-mass bump supported in the ball.
    Bump {
        center: Vec<f64>,
        radius: f64,
    },
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
    },
}

impl DensityConfig {
    pub fn dim(&self) -> usize {
        match self {
            DensityConfig::Bump { center, .. } | DensityConfig::Gaussian { center, .. } => center.len(),
        }
    }

    pub fn build(&self) -> nonlocal_dv::Result<DensitySpec> {
        match self {
            DensityConfig::Bump { center, radius } => DensitySpec::bump(center.clone(), *radius),
            DensityConfig::Gaussian { center, sigma } => Ok(DensitySpec::gaussian(center.clone(), *sigma)),
        }
    }
}

/// Functions used as drifts, potentials and operator inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionConfig {
    Zero {
        dim: usize,
    },
    Constant {
        dim: usize,
        value: f64,
    },
    /// `amplitude · sin(k·x + phase)`.
    Sine {
        wavevector: Vec<f64>,
        #[serde(default)]
        phase: f64,
        amplitude: f64,
    },
    Bump {
        center: Vec<f64>,
        radius: f64,
        amplitude: f64,
    },
    Gaussian {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
    },
    /// `coefficient · |x|²`, for potentials.
    Quadratic {
        dim: usize,
        coefficient: f64,
    },
    /// `height` outside `(-1, 1)`, zero inside (1D).
    OuterStep {
        height: f64,
    },
    /// `(1 - x²)_+^{1+s}` (1D).
    CriticalProfile {
        s: f64,
    },
    Sum {
        terms: Vec<FunctionConfig>,
    },
}

impl FunctionConfig {
    pub fn dim(&self) -> usize {
        match self {
            FunctionConfig::Zero { dim }
            | FunctionConfig::Constant { dim, .. }
            | FunctionConfig::Quadratic { dim, .. } => *dim,
            FunctionConfig::Sine { wavevector, .. } => wavevector.len(),
            FunctionConfig::Bump { center, .. } | FunctionConfig::Gaussian { center, .. } => center.len(),
            FunctionConfig::OuterStep { .. } | FunctionConfig::CriticalProfile { .. } => 1,
            FunctionConfig::Sum { terms } => terms.first().map_or(0, |t| t.dim()),
        }
    }

    pub fn build(&self, path: &str) -> SchemaResult<SmoothFunction> {
        Ok(match self {
            FunctionConfig::Zero { dim } => SmoothFunction::constant(*dim, 0.0),
            FunctionConfig::Constant { dim, value } => SmoothFunction::constant(*dim, *value),
            FunctionConfig::Sine {
                wavevector,
                phase,
                amplitude,
            } => SmoothFunction::plane_wave(wavevector.clone(), *phase, *amplitude),
            FunctionConfig::Bump {
                center,
                radius,
                amplitude,
            } => {
                if !(*radius > 0.0) {
                    return Err(SchemaError::new(format!("{path}.radius"), "must be positive"));
                }
                SmoothFunction::bump(center.clone(), *radius, *amplitude)
            }
            FunctionConfig::Gaussian {
                center,
                width,
                amplitude,
            } => {
                if !(*width > 0.0) {
                    return Err(SchemaError::new(format!("{path}.width"), "must be positive"));
                }
                SmoothFunction::gaussian(center.clone(), *width, *amplitude)
            }
            FunctionConfig::Quadratic { dim, coefficient } => {
                let c = *coefficient;
                SmoothFunction::new(*dim, move |x| c * x.iter().map(|v| v * v).sum::<f64>()).with_label("quadratic")
            }
            FunctionConfig::OuterStep { height } => outer_step_drift(*height),
            FunctionConfig::CriticalProfile { s } => {
                if !(*s > 0.0 && *s < 1.0) {
                    return Err(SchemaError::new(format!("{path}.s"), "must lie in (0, 1)"));
                }
                critical_profile(*s)
            }
            FunctionConfig::Sum { terms } => {
                let mut it = terms.iter().enumerate();
                let (_, first) = it
                    .next()
                    .ok_or_else(|| SchemaError::new(format!("{path}.terms"), "needs at least one term"))?;
                let mut f = first.build(&format!("{path}.terms[0]"))?;
                for (k, t) in it {
                    let g = t.build(&format!("{path}.terms[{k}]"))?;
                    if g.dim() != f.dim() {
                        return Err(SchemaError::new(
                            format!("{path}.terms[{k}]"),
                            "dimension differs from the first term",
                        ));
                    }
                    f = f.add(&g);
                }
                f
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Collatz–Wielandt bracket width for the eigenvalue iteration.
    pub eigen: f64,
    pub eigen_max_iter: usize,
    /// Gradient tolerance of the DV minimizations.
    pub gradient: f64,
    pub max_iter: u64,
    /// Relative and absolute tolerance of the pointwise quadrature.
    pub quadrature: f64,
    /// Largest matrix for the dense eigenvalue cross-check.
    pub dense_check_max_nodes: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eigen: 1e-10,
            eigen_max_iter: 2000,
            gradient: 1e-8,
            max_iter: 5000,
            quadrature: 1e-11,
            dense_check_max_nodes: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub lambdas: Vec<f64>,
    pub exponents: Vec<f64>,
    pub consistency_tol: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        let d = nonlocal_dv::inverse_problem::RecoveryOptions::default();
        Self {
            lambdas: d.lambdas,
            exponents: d.exponents,
            consistency_tol: d.consistency_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftProbeConfig {
    pub x0: Vec<f64>,
    #[serde(default = "default_probe_lambdas")]
    pub lambdas: Vec<f64>,
    /// Gauss nodes per axis over the support of each rescaled density.
    #[serde(default = "default_probe_nodes")]
    pub nodes: usize,
    /// Second drift to compare with the first.
    #[serde(default)]
    pub compare: Option<FunctionConfig>,
    /// Points where `L_K (h₁ - h₂)` is evaluated.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_probe_tol")]
    pub tol: f64,
}

fn default_probe_lambdas() -> Vec<f64> {
    vec![0.5, 0.25, 0.125]
}

fn default_probe_nodes() -> usize {
    16
}

fn default_probe_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierBlock {
    pub domain: BarrierDomain,
    /// Exponents of `d^α`; empty selects `{s/2, s, (1+s)/2}`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub delta: f64,
    pub d_min: f64,
    #[serde(default = "default_barrier_points")]
    pub points: usize,
}

fn default_barrier_points() -> usize {
    7
}

/// Parses a configuration, reporting the JSON path of the first violation.
pub fn parse(text: &str) -> SchemaResult<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SchemaError::new(
            if path == "." || path == "?" {
                "$".to_string()
            } else {
                format!("$.{path}")
            },
            e.into_inner().to_string(),
        )
    })
}

/// Default configuration of `verify`.
pub const DEFAULT_VERIFY: &str = include_str!("../config/verify.json");

impl ExperimentConfig {
    pub fn kernel(&self) -> SchemaResult<KernelSpec> {
        let k = self
            .kernel
            .as_ref()
            .ok_or_else(|| SchemaError::new("$.kernel", "missing block required by this command"))?;
        if k.matrix.is_empty() || k.matrix.iter().any(|r| r.len() != k.matrix.len()) {
            return Err(SchemaError::new("$.kernel.matrix", "must be a nonempty square matrix"));
        }
        k.build().map_err(|e| SchemaError::new("$.kernel", e.to_string()))
    }

    pub fn lattice(&self, dim: usize) -> SchemaResult<Arc<LatticeDomain>> {
        let d = self
            .domain
            .as_ref()
            .ok_or_else(|| SchemaError::new("$.domain", "missing block required by this command"))?;
        check_dim("$.domain", d.dim(), dim)?;
        d.build().map_err(|e| SchemaError::new("$.domain", e.to_string()))
    }

    pub fn density(&self, dim: usize) -> SchemaResult<DensitySpec> {
        let d = self
            .density
            .as_ref()
            .ok_or_else(|| SchemaError::new("$.density", "missing block required by this command"))?;
        check_dim("$.density", d.dim(), dim)?;
        d.build().map_err(|e| SchemaError::new("$.density", e.to_string()))
    }

    /// The drift, zero when absent.
    pub fn drift(&self, dim: usize) -> SchemaResult<SmoothFunction> {
        optional_function(self.drift.as_ref(), "$.drift", dim)
    }

    /// The potential, zero when absent.
    pub fn potential(&self, dim: usize) -> SchemaResult<SmoothFunction> {
        optional_function(self.potential.as_ref(), "$.potential", dim)
    }

    pub fn function(&self, dim: usize) -> SchemaResult<SmoothFunction> {
        let f = self
            .function
            .as_ref()
            .ok_or_else(|| SchemaError::new("$.function", "missing block required by this command"))?;
        check_dim("$.function", f.dim(), dim)?;
        f.build("$.function")
    }

    pub fn points(&self, dim: usize) -> SchemaResult<Vec<Vec<f64>>> {
        let pts = self
            .points
            .clone()
            .ok_or_else(|| SchemaError::new("$.points", "missing block required by this command"))?;
        for (k, p) in pts.iter().enumerate() {
            check_dim(&format!("$.points[{k}]"), p.len(), dim)?;
        }
        Ok(pts)
    }
}

fn optional_function(f: Option<&FunctionConfig>, path: &str, dim: usize) -> SchemaResult<SmoothFunction> {
    match f {
        None => Ok(SmoothFunction::constant(dim, 0.0)),
        Some(f) => {
            check_dim(path, f.dim(), dim)?;
            f.build(path)
        }
    }
}

pub fn check_dim(path: &str, got: usize, want: usize) -> SchemaResult<()> {
    if got != want {
        return Err(SchemaError::new(
            path,
            format!("dimension {got} does not match the kernel dimension {want}"),
        ));
    }
    Ok(())
}
