use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use nonlocal_dv::boundary_barriers::{c_star, c_star_quadrature};
use nonlocal_dv::discretize::{assemble, LatticeDomain};
use nonlocal_dv::dv_functional::{q_scalar, q_scalar_min, q_scalar_min_closed};
use nonlocal_dv::eigen::principal_eigenpair;
use nonlocal_dv::inverse_problem::{fourier_energy, FftOptions, FourierInput};
use nonlocal_dv::{KernelSpec, SmoothFunction, SpdMatrix};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn spd2(a: f64, b: f64, c: f64) -> SpdMatrix {
    // rows of M Mᵀ + ½ I for M = [[a, 0], [b, c]]
    SpdMatrix::from_rows(&[vec![a * a + 0.5, a * b], vec![a * b, b * b + c * c + 0.5]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn q_minimum_matches_closed_form(hbar in -1.9f64..1.9, r in -4.0f64..4.0) {
        let closed = q_scalar_min_closed(hbar);
        let (_, numeric) = q_scalar_min(hbar).unwrap();
        prop_assert!((closed - numeric).abs() < 1e-10);
        prop_assert!(q_scalar(r, hbar) >= closed - 1e-12);
    }

    #[test]
    fn c_star_closed_form_matches_quadrature(dim in 1usize..4, s in 0.1f64..0.9) {
        let a = c_star(dim, s).unwrap();
        let b = c_star_quadrature(dim, s).unwrap();
        prop_assert!((a - b).abs() <= 1e-6 * a);
    }

    #[test]
    fn fourier_energy_is_homogeneous(
        a in 0.2f64..1.5, b in -1.0f64..1.0, c in 0.2f64..1.5,
        s in 0.2f64..0.8, t in 0.3f64..3.0, amp in 0.5f64..2.0,
    ) {
        let base = spd2(a, b, c);
        let scaled = SpdMatrix::new(base.matrix() * t).unwrap();
        let gaussian = |amplitude: f64| FourierInput::Gaussian {
            precision: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            amplitude,
        };
        let opts = FftOptions::default();
        let e1 = fourier_energy(&base, s, &gaussian(1.0), &opts).unwrap().value;
        let e_scaled = fourier_energy(&scaled, s, &gaussian(1.0), &opts).unwrap().value;
        let e_amp = fourier_energy(&base, s, &gaussian(amp), &opts).unwrap().value;
        prop_assert!(e1 > 0.0);
        // |det(tA)|^{-1/2} ⟨(tA)^{-1} ξ, ξ⟩^s in two dimensions
        let factor = t.powf(-1.0 - s);
        prop_assert!((e_scaled - factor * e1).abs() <= 1e-9 * e_scaled, "{e_scaled} vs {}", factor * e1);
        prop_assert!((e_amp - amp * amp * e1).abs() <= 1e-9 * e_amp);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn driftless_lattice_operator_is_symmetric_and_dissipative(
        s in 0.15f64..0.85,
        n in 8usize..24,
        u in prop::collection::vec(-1.0f64..1.0, 23),
        v in prop::collection::vec(-1.0f64..1.0, 23),
    ) {
        let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, 2.0 / n as f64).unwrap());
        let spec = KernelSpec::fractional_laplacian(1, s).unwrap();
        let op = assemble(&lat, &spec, &SmoothFunction::constant(1, 0.0), &vec![0.0; lat.len()]).unwrap();
        let m = lat.len();
        let (u, v) = (&u[..m], &v[..m]);
        let (lu, lv) = (op.apply(u), op.apply(v));
        let scale = dot(u, &lu).abs() + dot(v, &lv).abs();
        prop_assert!((dot(u, &lv) - dot(v, &lu)).abs() <= 1e-10 * scale);
        prop_assert!(dot(u, &lu) < 0.0);
        let vol = lat.cell_volume();
        prop_assert!((op.energy(u, u) + dot(u, &lu) * vol).abs() <= 1e-10 * op.energy(u, u));
    }

    #[test]
    fn principal_eigenvalue_is_monotone_in_the_potential(
        s in 0.2f64..0.8,
        shift in -2.0f64..2.0,
        bumps in prop::collection::vec(0.0f64..3.0, 24),
        drift in 0.0f64..0.5,
    ) {
        let lat = Arc::new(LatticeDomain::interval(-1.0, 1.0, 0.125).unwrap());
        let spec = KernelSpec::fractional_laplacian(1, s).unwrap();
        let h = SmoothFunction::bump(vec![0.1], 0.7, drift);
        let lower: Vec<f64> = lat.points().iter().map(|p| -p[0] * p[0]).collect();
        let upper: Vec<f64> = lower.iter().zip(&bumps).map(|(v, b)| v + b).collect();
        let shifted: Vec<f64> = lower.iter().map(|v| v + shift).collect();
        let eig = |pot: &[f64]| {
            let op = assemble(&lat, &spec, &h, pot).unwrap();
            principal_eigenpair(&op, 1e-11, 4000).unwrap().lambda1
        };
        let l_lower = eig(&lower);
        prop_assert!(eig(&upper) <= l_lower + 1e-8);
        prop_assert!((eig(&shifted) - (l_lower - shift)).abs() <= 1e-8 * (1.0 + l_lower.abs()));
    }
}
