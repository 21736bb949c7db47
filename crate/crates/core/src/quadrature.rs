//! Quadrature building blocks: Gauss–Legendre rules, adaptive Gauss–Kronrod
//! integration on intervals, and direction sets on spheres and cube surfaces.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

/// A fixed one-dimensional rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let nodes = self.nodes.iter().map(|t| mid + half * t).collect();
        let weights = self.weights.iter().map(|w| w * half).collect();
        (nodes, weights)
    }

    /// Applies the rule to `f` on `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * t);
        }
        acc * half
    }
}

/// `n`-point Gauss–Legendre rule, nodes in increasing order.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-type initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Result of an integration with an error estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, rhs: Estimate) -> Estimate {
        Estimate {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
            evaluations: self.evaluations + rhs.evaluations,
        }
    }
}

impl std::ops::Mul<f64> for Estimate {
    type Output = Estimate;
    fn mul(self, c: f64) -> Estimate {
        Estimate {
            value: self.value * c,
            error: self.error * c.abs(),
            evaluations: self.evaluations,
        }
    }
}

/// Stopping rule for adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of subintervals kept by the bisection.
    pub max_intervals: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_intervals: 400,
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv = [0.0; 14];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(mid - dx);
        let f2 = f(mid + dx);
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let result = resk * half;
    let resasc = resasc * half.abs();
    let resabs = resabs * half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err)
}

/// Adaptive 15-point Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the total
/// error satisfies the tolerance or the interval budget is spent; in the latter
/// case the best estimate is returned with its (larger) error.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: &AdaptiveOptions) -> Estimate {
    if a == b {
        return Estimate::default();
    }
    let (v, e) = kronrod15(&mut f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut value = v;
    let mut error = e;
    let mut evaluations = 15;
    while error > opts.abs_tol.max(opts.rel_tol * value.abs()) && pieces.len() < opts.max_intervals {
        let (idx, _) =
            pieces.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (i, p)| {
                    if p.3 > best.1 {
                        (i, p.3)
                    } else {
                        best
                    }
                },
            );
        let (lo, hi, pv, pe) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            pieces.push((lo, hi, pv, pe));
            break;
        }
        let (v1, e1) = kronrod15(&mut f, lo, mid);
        let (v2, e2) = kronrod15(&mut f, mid, hi);
        evaluations += 30;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
        value = pieces.iter().map(|p| p.2).sum();
        error = pieces.iter().map(|p| p.3).sum();
    }
    Estimate {
        value,
        error,
        evaluations,
    }
}

/// Surface measure of the unit sphere `S^{N-1}` in `R^N` (`N = 1` gives 2).
pub fn sphere_area(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * PI.powf(0.5 * n) / gamma(0.5 * n)
}

/// Directions covering half of the unit sphere, one from each antipodal pair,
/// with weights summing to half the sphere area. Integrating an even function
/// of the direction with these weights and doubling gives the full integral.
#[derive(Debug, Clone)]
pub struct HalfSphereRule {
    pub dim: usize,
    pub directions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl HalfSphereRule {
    /// `resolution` is the number of angles on the half circle in 2D and the
    /// number of polar nodes in 3D (azimuth uses twice as many).
    pub fn new(dim: usize, resolution: usize) -> Self {
        let resolution = resolution.max(1);
        match dim {
            1 => Self {
                dim,
                directions: vec![vec![1.0]],
                weights: vec![1.0],
            },
            2 => {
                let w = PI / resolution as f64;
                let directions = (0..resolution)
                    .map(|k| {
                        let phi = PI * (k as f64 + 0.5) / resolution as f64;
                        vec![phi.cos(), phi.sin()]
                    })
                    .collect();
                Self {
                    dim,
                    directions,
                    weights: vec![w; resolution],
                }
            }
            3 => {
                let polar = gauss_legendre(resolution);
                let (zs, wz) = polar.mapped(0.0, 1.0);
                let n_az = 2 * resolution;
                let waz = 2.0 * PI / n_az as f64;
                let mut directions = Vec::with_capacity(resolution * n_az);
                let mut weights = Vec::with_capacity(resolution * n_az);
                for (z, wzi) in zs.iter().zip(&wz) {
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    for k in 0..n_az {
                        let phi = waz * (k as f64 + 0.5);
                        directions.push(vec![r * phi.cos(), r * phi.sin(), *z]);
                        weights.push(wzi * waz);
                    }
                }
                Self {
                    dim,
                    directions,
                    weights,
                }
            }
            _ => panic!("sphere rules are provided for dimensions 1 to 3"),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Direction rule built from the faces of the cube `[-1, 1]^N`.
///
/// Each node carries a unit direction `theta`, the distance `exit` from the
/// origin to the cube surface along `theta`, and a solid-angle weight. The
/// rule integrates functions on the whole sphere and is smooth on each face,
/// which makes it the natural tool for integrals over the exterior of a cube.
#[derive(Debug, Clone)]
pub struct CubeFaceRule {
    pub dim: usize,
    pub directions: Vec<Vec<f64>>,
    pub exits: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CubeFaceRule {
    /// `per_face` Gauss nodes per face coordinate, each face split into
    /// `splits` panels per coordinate.
    pub fn new(dim: usize, per_face: usize, splits: usize) -> Self {
        let mut directions = Vec::new();
        let mut exits = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            for sgn in [-1.0, 1.0] {
                directions.push(vec![sgn]);
                exits.push(1.0);
                weights.push(1.0);
            }
            return Self {
                dim,
                directions,
                exits,
                weights,
            };
        }
        let rule = gauss_legendre(per_face);
        let splits = splits.max(1);
        let mut face_nodes = Vec::new();
        let mut face_weights = Vec::new();
        for p in 0..splits {
            let a = -1.0 + 2.0 * p as f64 / splits as f64;
            let b = -1.0 + 2.0 * (p + 1) as f64 / splits as f64;
            let (x, w) = rule.mapped(a, b);
            face_nodes.extend(x);
            face_weights.extend(w);
        }
        let m = face_nodes.len();
        let face_dim = dim - 1;
        let count = m.pow(face_dim as u32);
        for axis in 0..dim {
            for sgn in [-1.0, 1.0] {
                for idx in 0..count {
                    let mut p = vec![0.0; dim];
                    let mut w = 1.0;
                    let mut rem = idx;
                    let mut c = 0;
                    for (k, pk) in p.iter_mut().enumerate() {
                        if k == axis {
                            *pk = sgn;
                        } else {
                            let j = rem % m;
                            rem /= m;
                            *pk = face_nodes[j];
                            w *= face_weights[j];
                            c += 1;
                        }
                    }
                    debug_assert_eq!(c, face_dim);
                    let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    directions.push(p.iter().map(|v| v / r).collect());
                    exits.push(r);
                    weights.push(w / r.powi(dim as i32));
                }
            }
        }
        Self {
            dim,
            directions,
            exits,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Tensor-product Gauss–Legendre rule over the box `[lo, hi]` in `dim`
/// dimensions with `n` nodes per axis.
pub fn tensor_rule(lo: &[f64], hi: &[f64], n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let dim = lo.len();
    let rule = gauss_legendre(n);
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..dim).map(|k| rule.mapped(lo[k], hi[k])).collect();
    let count = n.pow(dim as u32);
    let mut pts = Vec::with_capacity(count);
    let mut wts = Vec::with_capacity(count);
    for idx in 0..count {
        let mut rem = idx;
        let mut p = vec![0.0; dim];
        let mut w = 1.0;
        for k in 0..dim {
            let j = rem % n;
            rem /= n;
            p[k] = axes[k].0[j];
            w *= axes[k].1[j];
        }
        pts.push(p);
        wts.push(w);
    }
    (pts, wts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let rule = gauss_legendre(n);
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got = rule.integrate(|x| x.powi(deg as i32), -1.0, 1.0);
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let est = integrate_adaptive(|x| x.powf(-0.5), 0.0, 1.0, &AdaptiveOptions::default());
        assert!((est.value - 2.0).abs() < 1e-8, "{est:?}");
        let est = integrate_adaptive(|x| x.sin(), 0.0, PI, &AdaptiveOptions::default());
        assert!((est.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(1), 2.0, epsilon = 1e-14);
        assert_relative_eq!(sphere_area(2), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(sphere_area(3), 4.0 * PI, epsilon = 1e-13);
        for d in 1..=3 {
            let r = HalfSphereRule::new(d, 8);
            assert_relative_eq!(r.weights.iter().sum::<f64>(), 0.5 * sphere_area(d), epsilon = 1e-13);
        }
    }

    #[test]
    fn half_sphere_integrates_even_polynomials() {
        // ∫_{S^2} z^2 = 4π/3, ∫_{S^1} cos^2 = π
        let r3 = HalfSphereRule::new(3, 6);
        let v: f64 = r3
            .directions
            .iter()
            .zip(&r3.weights)
            .map(|(t, w)| w * t[2] * t[2])
            .sum();
        assert_relative_eq!(2.0 * v, 4.0 * PI / 3.0, epsilon = 1e-12);
        let v: f64 = r3
            .directions
            .iter()
            .zip(&r3.weights)
            .map(|(t, w)| w * t[0] * t[0])
            .sum();
        assert_relative_eq!(2.0 * v, 4.0 * PI / 3.0, epsilon = 1e-12);
        let r2 = HalfSphereRule::new(2, 7);
        let v: f64 = r2
            .directions
            .iter()
            .zip(&r2.weights)
            .map(|(t, w)| w * t[0] * t[0])
            .sum();
        assert_relative_eq!(2.0 * v, PI, epsilon = 1e-12);
    }

    #[test]
    fn cube_face_rule_covers_sphere() {
        for d in 1..=3 {
            let r = CubeFaceRule::new(d, 10, 2);
            assert_relative_eq!(r.weights.iter().sum::<f64>(), sphere_area(d), epsilon = 1e-9);
        }
        // exterior of the unit square in 2D: ∫_{|z|_inf > 1} |z|^{-3} dz = ∫ exit^{-1} dΩ
        let r = CubeFaceRule::new(2, 16, 2);
        let v: f64 = r.exits.iter().zip(&r.weights).map(|(e, w)| w / e).sum();
        // 8 ∫_0^{π/4} cos φ dφ = 4√2
        assert_relative_eq!(v, 4.0 * 2f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn tensor_rule_volume() {
        let (p, w) = tensor_rule(&[0.0, -1.0], &[2.0, 1.0], 4);
        assert_eq!(p.len(), 16);
        assert_relative_eq!(w.iter().sum::<f64>(), 4.0, epsilon = 1e-13);
    }
}
