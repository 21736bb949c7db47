use std::sync::Arc;

use approx::assert_relative_eq;
use statrs::function::gamma::gamma;

use super::*;
use crate::function::SmoothFunction;
use crate::kernel_field::{KernelSpec, SpdMatrix};
use crate::nonlocal_ops::{apply_drifted, QuadratureScheme};

fn interval(n: usize) -> Arc<LatticeDomain> {
    Arc::new(LatticeDomain::interval(-1.0, 1.0, 2.0 / n as f64).unwrap())
}

fn zero_drift(dim: usize) -> SmoothFunction {
    SmoothFunction::constant(dim, 0.0)
}

fn wavy_drift() -> SmoothFunction {
    SmoothFunction::new(1, |x| 0.4 * (2.0 * x[0]).sin())
        .with_range(-0.4, 0.4)
        .with_label("wavy")
}

#[test]
fn constants_see_only_exterior_mass() {
    let lat = interval(40);
    let spec = KernelSpec::fractional_laplacian(1, 0.4).unwrap();
    let v: Vec<f64> = (0..lat.len()).map(|i| -0.1 * i as f64).collect();
    let op = assemble(&lat, &spec, &zero_drift(1), &v).unwrap();
    let ones = vec![1.0; op.len()];
    let lu = op.apply(&ones);
    for i in 0..op.len() {
        assert_relative_eq!(lu[i], -op.exterior[i] + v[i], max_relative = 1e-12);
        assert!(op.exterior[i] > 0.0);
    }
}

#[test]
fn undrifted_matrix_is_symmetric_negative_definite() {
    let lat = Arc::new(LatticeDomain::box_domain(&[0.0, 0.0], &[1.0, 1.0], 0.125).unwrap());
    let a = SpdMatrix::from_rows(&[vec![1.5, 0.3], vec![0.3, 0.8]]).unwrap();
    let spec = KernelSpec::constant(a, 0.6, true).unwrap();
    let op = assemble(&lat, &spec, &zero_drift(2), &vec![0.0; lat.len()]).unwrap();
    assert!(op.summary().symmetric);
    assert!(estimate_c0(&op) < 0.0);
}

#[test]
fn product_rule_and_integration_by_parts_are_exact() {
    let lat = interval(30);
    let spec = KernelSpec::fractional_laplacian(1, 0.7).unwrap();
    let op = assemble(&lat, &spec, &wavy_drift(), &vec![0.0; lat.len()]).unwrap();
    let u: Vec<f64> = lat.points().iter().map(|p| (3.0 * p[0]).cos()).collect();
    let v: Vec<f64> = lat.points().iter().map(|p| 1.0 - p[0] * p[0]).collect();
    let uv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
    let (lu, lv, luv) = (op.apply_lk(&u), op.apply_lk(&v), op.apply_lk(&uv));
    let b = op.carre_du_champ(&u, &v);
    for i in 0..op.len() {
        let rhs = u[i] * lv[i] + v[i] * lu[i] + 2.0 * b[i];
        assert!((luv[i] - rhs).abs() < 1e-10 * (1.0 + luv[i].abs()));
    }
    let vol = lat.cell_volume();
    let pairing: f64 = u.iter().zip(&lv).map(|(a, b)| a * b).sum::<f64>() * vol;
    assert_relative_eq!(pairing, -op.energy(&u, &v), max_relative = 1e-11);
    // drift energy: nodal B(f, h) plus the exterior half of the pairing
    let f: Vec<f64> = v.iter().map(|x| x * x).collect();
    let nodal: f64 = op.drift_term(&f).iter().sum::<f64>() * vol;
    let outside: f64 = -0.5 * f.iter().zip(&op.drift_exterior).map(|(a, e)| a * e).sum::<f64>() * vol;
    assert_relative_eq!(op.drift_energy(&f), nodal + outside, max_relative = 1e-11);
}

#[test]
fn seminorm_scales_with_dilation() {
    let base = LatticeDomain::box_domain(&[-0.5, -0.5], &[0.5, 0.5], 0.1).unwrap();
    let s = 0.3;
    let spec = KernelSpec::fractional_laplacian(2, s).unwrap();
    let u: Vec<f64> = base
        .points()
        .iter()
        .map(|p| (1.0 - 4.0 * p[0] * p[0]) * (1.0 + p[1]))
        .collect();
    let e1 = {
        let lat = Arc::new(base.clone());
        let op = assemble(&lat, &spec, &zero_drift(2), &vec![0.0; lat.len()]).unwrap();
        seminorm_hsk(&op, &u, None)
    };
    let lambda = 2.5;
    let e2 = {
        let lat = Arc::new(base.scaled_about(&[0.0, 0.0], lambda).unwrap());
        let op = assemble(&lat, &spec, &zero_drift(2), &vec![0.0; lat.len()]).unwrap();
        seminorm_hsk(&op, &u, None)
    };
    assert_relative_eq!(e2, lambda.powf(2.0 - 2.0 * s) * e1, max_relative = 1e-9);
}

#[test]
fn masked_seminorm_is_bounded_by_the_full_one() {
    let lat = interval(20);
    let spec = KernelSpec::fractional_laplacian(1, 0.5).unwrap();
    let op = assemble(&lat, &spec, &zero_drift(1), &vec![0.0; lat.len()]).unwrap();
    let u: Vec<f64> = lat.points().iter().map(|p| p[0].exp()).collect();
    let mask: Vec<bool> = lat.points().iter().map(|p| p[0] < 0.3).collect();
    let part = seminorm_hsk(&op, &u, Some(&mask));
    assert!(part > 0.0 && part < seminorm_hsk(&op, &u, None));
}

#[test]
fn lattice_operator_approaches_pointwise_operator() {
    let s = 0.5;
    let spec = KernelSpec::fractional_laplacian(1, s).unwrap();
    let u = SmoothFunction::bump(vec![0.0], 0.6, 1.0);
    let h = wavy_drift();
    let x = [0.225];
    let exact = apply_drifted(&u, &h, &spec, &x, &QuadratureScheme::default()).unwrap();
    let mut errs = Vec::new();
    for &n in &[40usize, 120, 360] {
        let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, 2.0 / n as f64).unwrap());
        let op = assemble(&lat, &spec, &h, &vec![0.0; lat.len()]).unwrap();
        let lu = op.apply(&lat.sample(&u));
        let i = lat.locate(&x).unwrap();
        assert!((lat.points()[i][0] - x[0]).abs() < 1e-12);
        errs.push((lu[i] - exact).abs());
    }
    assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
    assert!(errs[2] < 2e-2 * exact.abs(), "{errs:?} vs {exact}");
}

#[test]
fn fractional_poisson_matches_closed_form() {
    // (-Δ)^s u = 1 on (-1, 1), u = 0 outside: u = κ (1 - x²)^s
    for &s in &[0.3, 0.5, 0.8] {
        let kappa = gamma(0.5) / (4f64.powf(s) * gamma(1.0 + s) * gamma(0.5 + s));
        let spec = KernelSpec::fractional_laplacian(1, s).unwrap();
        let mut sup = Vec::new();
        for &n in &[100usize, 200] {
            let lat = interval(n);
            let op = assemble(&lat, &spec, &zero_drift(1), &vec![0.0; lat.len()]).unwrap();
            let sol = dirichlet_solve(&op, 0.0, &vec![-1.0; lat.len()]).unwrap();
            assert!(sol.residual < 1e-9);
            let mut worst: f64 = 0.0;
            let mut centre = 0.0;
            for (p, v) in lat.points().iter().zip(&sol.u.values) {
                let exact = kappa * (1.0 - p[0] * p[0]).powf(s);
                worst = worst.max((v - exact).abs());
                if p[0].abs() < 1.0 / n as f64 + 1e-12 {
                    centre = (v - exact).abs();
                }
            }
            sup.push(worst / kappa);
            if n == 200 {
                assert!(centre < 0.01 * kappa, "s = {s}: centre error {centre}");
            }
        }
        assert!(sup[1] < sup[0] && sup[1] < 0.04, "s = {s}: {sup:?}");
    }
}

#[test]
fn maximum_principle_for_small_drift_oscillation() {
    let lat = interval(50);
    let spec = KernelSpec::fractional_laplacian(1, 0.4).unwrap();
    let h = SmoothFunction::new(1, |x| 0.9 * x[0].tanh()).with_range(-0.9, 0.9);
    let op = assemble(&lat, &spec, &h, &vec![0.0; lat.len()]).unwrap();
    let n = op.len();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                assert!(op.matrix[(i, j)] >= 0.0);
            }
        }
    }
    let c = (0..n).map(|i| op.matrix.row(i).sum()).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let rhs: Vec<f64> = lat.points().iter().map(|p| -(1.0 + p[0]).powi(2)).collect();
    let sol = dirichlet_solve(&op, c.max(0.0), &rhs).unwrap();
    assert!(sol.u.values.iter().all(|v| *v >= 0.0));
}

#[test]
fn singular_shift_is_reported() {
    let lat = interval(6);
    let spec = KernelSpec::fractional_laplacian(1, 0.5).unwrap();
    let op = assemble(&lat, &spec, &zero_drift(1), &vec![0.0; lat.len()]).unwrap();
    let lambda = op.matrix.clone().symmetric_eigenvalues().max();
    let err = dirichlet_solve(&op, lambda, &vec![1.0; lat.len()]).unwrap_err();
    assert!(matches!(err, crate::Error::Solver { .. }));
}

#[test]
fn grid_csv_round_trip() {
    let lat = Arc::new(LatticeDomain::ball(&[0.0, 0.0], 0.5, 0.1).unwrap());
    let u = GridFunction::sample(lat.clone(), &SmoothFunction::gaussian(vec![0.1, 0.0], 0.3, 2.0));
    let dir = std::env::temp_dir().join(format!("nldv-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("u.csv");
    write_grid_csv(&u, &path).unwrap();
    write_lattice_sidecar(&lat, &dir.join("u.json")).unwrap();
    let back = read_grid_csv(lat.clone(), &path).unwrap();
    assert_eq!(back.values, u.values);
    let meta: LatticeMeta = serde_json::from_slice(&std::fs::read(dir.join("u.json")).unwrap()).unwrap();
    assert_eq!(meta, LatticeMeta::of(&lat));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn oversized_lattices_are_refused() {
    let lat = interval(100);
    let spec = KernelSpec::fractional_laplacian(1, 0.5).unwrap();
    let opts = AssemblyOptions {
        max_bytes: 1000,
        ..AssemblyOptions::default()
    };
    let err = assemble_with(&lat, &spec, &zero_drift(1), &vec![0.0; lat.len()], &opts).unwrap_err();
    assert!(matches!(err, crate::Error::Capacity(_)));
}
