//! Analytic scalar fields on `R^N` used as inputs to the pointwise operators.

use std::fmt;
use std::sync::Arc;

type Eval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type Grad = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Ball `{|x - center| <= radius}` containing the support of a function.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// A scalar field with optional gradient, support ball and known range.
///
/// The range `[inf, sup]`, when present, certifies boundedness; operators that
/// integrate over all of `R^N` require either a support ball or a range.
#[derive(Clone)]
pub struct SmoothFunction {
    dim: usize,
    eval: Eval,
    gradient: Option<Grad>,
    support: Option<Support>,
    range: Option<(f64, f64)>,
    label: String,
}

impl fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFunction")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("range", &self.range)
            .finish()
    }
}

impl SmoothFunction {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(f),
            gradient: None,
            support: None,
            range: None,
            label: "custom".into(),
        }
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_support(mut self, center: Vec<f64>, radius: f64) -> Self {
        assert_eq!(center.len(), self.dim, "support center dimension");
        self.support = Some(Support { center, radius });
        self
    }

    /// Declares `inf <= f <= sup` on `R^N`.
    pub fn with_range(mut self, inf: f64, sup: f64) -> Self {
        self.range = Some((inf.min(sup), inf.max(sup)));
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(x))
    }

    pub fn support(&self) -> Option<&Support> {
        self.support.as_ref()
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    /// `sup f - inf f` when the range is known.
    pub fn osc(&self) -> Option<f64> {
        self.range.map(|(lo, hi)| hi - lo)
    }

    /// Bound on `|f|` when the range is known (0 outside the support is
    /// accounted for by the range itself).
    pub fn sup_abs(&self) -> Option<f64> {
        self.range.map(|(lo, hi)| lo.abs().max(hi.abs()))
    }

    /// True when the function is known to vanish at `x`.
    pub fn vanishes_at(&self, x: &[f64]) -> bool {
        match &self.support {
            Some(s) => dist(x, &s.center) > s.radius,
            None => false,
        }
    }

    /// Constant function.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, move |_| c)
            .with_gradient(move |_| vec![0.0; dim])
            .with_range(c, c)
            .with_label(format!("constant({c})"))
    }

    /// `amplitude · exp(-|x - center|² / (2 width²))`.
    pub fn gaussian(center: Vec<f64>, width: f64, amplitude: f64) -> Self {
        let dim = center.len();
        let c1 = center.clone();
        let c2 = center.clone();
        let inv = 1.0 / (width * width);
        Self::new(dim, move |x| {
            let r2: f64 = x.iter().zip(&c1).map(|(a, b)| (a - b) * (a - b)).sum();
            amplitude * (-0.5 * r2 * inv).exp()
        })
        .with_gradient(move |x| {
            let r2: f64 = x.iter().zip(&c2).map(|(a, b)| (a - b) * (a - b)).sum();
            let e = amplitude * (-0.5 * r2 * inv).exp();
            x.iter().zip(&c2).map(|(a, b)| -e * (a - b) * inv).collect()
        })
        .with_range(amplitude.min(0.0), amplitude.max(0.0))
        .with_label("gaussian")
    }

    /// Smooth bump `amplitude · exp(1 - 1/(1 - r²))`, `r = |x - center|/radius`,
    /// normalized to peak value `amplitude`, supported in the closed ball.
    pub fn bump(center: Vec<f64>, radius: f64, amplitude: f64) -> Self {
        let dim = center.len();
        let c1 = center.clone();
        let c2 = center.clone();
        let inv = 1.0 / (radius * radius);
        Self::new(dim, move |x| {
            let r2: f64 = x.iter().zip(&c1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * inv;
            bump_profile(r2) * amplitude
        })
        .with_gradient(move |x| {
            let r2: f64 = x.iter().zip(&c2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * inv;
            if r2 >= 1.0 {
                return vec![0.0; x.len()];
            }
            let one = 1.0 - r2;
            let d = -bump_profile(r2) * amplitude / (one * one) * 2.0 * inv;
            x.iter().zip(&c2).map(|(a, b)| d * (a - b)).collect()
        })
        .with_support(center, radius)
        .with_range(amplitude.min(0.0), amplitude.max(0.0))
        .with_label("bump")
    }

    /// `amplitude · sin(k·x + phase)`.
    pub fn plane_wave(wavevector: Vec<f64>, phase: f64, amplitude: f64) -> Self {
        let dim = wavevector.len();
        let k1 = wavevector.clone();
        let k2 = wavevector;
        Self::new(dim, move |x| {
            let a: f64 = x.iter().zip(&k1).map(|(p, q)| p * q).sum::<f64>() + phase;
            amplitude * a.sin()
        })
        .with_gradient(move |x| {
            let a: f64 = x.iter().zip(&k2).map(|(p, q)| p * q).sum::<f64>() + phase;
            k2.iter().map(|q| amplitude * q * a.cos()).collect()
        })
        .with_range(-amplitude.abs(), amplitude.abs())
        .with_label("plane_wave")
    }

    /// `self + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let f = self.eval.clone();
        Self {
            dim: self.dim,
            eval: Arc::new(move |x| f(x) + c),
            gradient: self.gradient.clone(),
            support: None,
            range: self.range.map(|(lo, hi)| (lo + c, hi + c)),
            label: format!("{}+{c}", self.label),
        }
    }

    /// `c · self`.
    pub fn scaled(&self, c: f64) -> Self {
        let f = self.eval.clone();
        let g = self.gradient.clone();
        Self {
            dim: self.dim,
            eval: Arc::new(move |x| c * f(x)),
            gradient: g.map(|g| Arc::new(move |x: &[f64]| g(x).into_iter().map(|v| c * v).collect()) as Grad),
            support: self.support.clone(),
            range: self.range.map(|(lo, hi)| ((c * lo).min(c * hi), (c * lo).max(c * hi))),
            label: format!("{c}*{}", self.label),
        }
    }

    /// `self + other`.
    pub fn add(&self, other: &SmoothFunction) -> Self {
        assert_eq!(self.dim, other.dim);
        let f = self.eval.clone();
        let g = other.eval.clone();
        let gradient = match (&self.gradient, &other.gradient) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.clone(), b.clone());
                Some(Arc::new(move |x: &[f64]| a(x).into_iter().zip(b(x)).map(|(p, q)| p + q).collect()) as Grad)
            }
            _ => None,
        };
        Self {
            dim: self.dim,
            eval: Arc::new(move |x| f(x) + g(x)),
            gradient,
            support: union_support(&self.support, &other.support),
            range: match (self.range, other.range) {
                (Some((a, b)), Some((c, d))) => Some((a + c, b + d)),
                _ => None,
            },
            label: format!("({}+{})", self.label, other.label),
        }
    }

    /// Pointwise product `self · other`.
    pub fn mul(&self, other: &SmoothFunction) -> Self {
        assert_eq!(self.dim, other.dim);
        let f = self.eval.clone();
        let g = other.eval.clone();
        let gradient = match (&self.gradient, &other.gradient) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.clone(), b.clone());
                let (f2, g2) = (self.eval.clone(), other.eval.clone());
                Some(Arc::new(move |x: &[f64]| {
                    let (fv, gv) = (f2(x), g2(x));
                    a(x).into_iter().zip(b(x)).map(|(p, q)| p * gv + fv * q).collect()
                }) as Grad)
            }
            _ => None,
        };
        let support = match (&self.support, &other.support) {
            (Some(a), Some(b)) => Some(if a.radius <= b.radius { a.clone() } else { b.clone() }),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            _ => None,
        };
        let range = match (self.range, other.range) {
            (Some((a, b)), Some((c, d))) => {
                let p = [a * c, a * d, b * c, b * d];
                Some((
                    p.iter().cloned().fold(f64::INFINITY, f64::min),
                    p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                ))
            }
            _ => None,
        };
        Self {
            dim: self.dim,
            eval: Arc::new(move |x| f(x) * g(x)),
            gradient,
            support,
            range,
            label: format!("({}*{})", self.label, other.label),
        }
    }

    /// `x ↦ φ(self(x))` for a scalar map `φ`; range and gradient are dropped
    /// unless supplied by the caller afterwards.
    pub fn compose<P>(&self, phi: P) -> Self
    where
        P: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f = self.eval.clone();
        Self {
            dim: self.dim,
            eval: Arc::new(move |x| phi(f(x))),
            gradient: None,
            support: None,
            range: None,
            label: format!("phi({})", self.label),
        }
    }

    /// Keeps the support ball of `self` (valid when `φ(0) = 0`).
    pub fn compose_preserving_support<P>(&self, phi: P) -> Self
    where
        P: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut out = self.compose(phi);
        out.support = self.support.clone();
        out
    }

    /// `x ↦ factor · self((x - center)/λ)`.
    pub fn dilated(&self, center: &[f64], lambda: f64, factor: f64) -> Self {
        let f = self.eval.clone();
        let c = center.to_vec();
        let dim = self.dim;
        let support = self.support.as_ref().map(|s| Support {
            center: c.iter().zip(&s.center).map(|(a, b)| a + lambda * b).collect(),
            radius: lambda * s.radius,
        });
        let c2 = c.clone();
        Self {
            dim,
            eval: Arc::new(move |x| {
                let y: Vec<f64> = x.iter().zip(&c2).map(|(a, b)| (a - b) / lambda).collect();
                factor * f(&y)
            }),
            gradient: None,
            support,
            range: self
                .range
                .map(|(lo, hi)| ((factor * lo).min(factor * hi), (factor * lo).max(factor * hi))),
            label: format!("dilated({})", self.label),
        }
    }

    /// Sampled oscillation over a point set.
    pub fn osc_sampled(&self, points: &[Vec<f64>]) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in points {
            let v = self.eval(p);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if points.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// `exp(1 - 1/(1 - r²))` for `r² < 1`, else 0; argument is `r²`.
#[inline]
pub fn bump_profile(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

fn union_support(a: &Option<Support>, b: &Option<Support>) -> Option<Support> {
    match (a, b) {
        (Some(a), Some(b)) => {
            let d = dist(&a.center, &b.center);
            if d + b.radius <= a.radius {
                Some(a.clone())
            } else if d + a.radius <= b.radius {
                Some(b.clone())
            } else {
                let radius = 0.5 * (d + a.radius + b.radius);
                let t = if d > 0.0 { (radius - a.radius) / d } else { 0.0 };
                let center = a.center.iter().zip(&b.center).map(|(p, q)| p + t * (q - p)).collect();
                Some(Support { center, radius })
            }
        }
        _ => None,
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bump_values_and_support() {
        let b = SmoothFunction::bump(vec![0.5, 0.0], 2.0, 3.0);
        assert_relative_eq!(b.eval(&[0.5, 0.0]), 3.0);
        assert_eq!(b.eval(&[2.6, 0.0]), 0.0);
        assert!(b.vanishes_at(&[3.0, 0.0]));
        assert_eq!(b.osc(), Some(3.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fs = [
            SmoothFunction::gaussian(vec![0.1, -0.2], 0.7, 1.5),
            SmoothFunction::bump(vec![0.0, 0.3], 1.2, 2.0),
            SmoothFunction::plane_wave(vec![1.3, -0.4], 0.2, 0.9),
        ];
        let x = [0.25, 0.05];
        for f in &fs {
            let g = f.gradient(&x).unwrap();
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += 1e-6;
                xm[k] -= 1e-6;
                let fd = (f.eval(&xp) - f.eval(&xm)) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-7, "{} {k}", f.label());
            }
        }
        let p = fs[0].mul(&fs[2]);
        let g = p.gradient(&x).unwrap();
        let fd = (p.eval(&[x[0] + 1e-6, x[1]]) - p.eval(&[x[0] - 1e-6, x[1]])) / 2e-6;
        assert!((fd - g[0]).abs() < 1e-7);
    }

    #[test]
    fn algebra_tracks_range_and_support() {
        let a = SmoothFunction::bump(vec![0.0], 1.0, 1.0);
        let b = SmoothFunction::bump(vec![3.0], 1.0, -2.0);
        let s = a.add(&b);
        let sup = s.support().unwrap();
        assert_relative_eq!(sup.radius, 2.5);
        assert_relative_eq!(sup.center[0], 1.5);
        assert_eq!(s.range(), Some((-2.0, 1.0)));
        assert_eq!(a.shifted(5.0).osc(), Some(1.0));
        assert!(a.shifted(5.0).support().is_none());
        let d = a.dilated(&[2.0], 0.5, 4.0);
        assert_relative_eq!(d.eval(&[2.0]), 4.0);
        assert_relative_eq!(d.support().unwrap().radius, 0.5);
    }
}
