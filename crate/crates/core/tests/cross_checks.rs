use std::sync::Arc;

use nalgebra::DMatrix;

use nonlocal_dv::discretize::{assemble, LatticeDomain};
use nonlocal_dv::dv_functional::DensitySpec;
use nonlocal_dv::inverse_problem::{diffusion_limit, fourier_energy, FftOptions, FourierInput};
use nonlocal_dv::{AnisotropyField, EllipticityBounds, KernelSpec, SmoothFunction, SpdMatrix};

fn lattice_energy(spec: &KernelSpec, g: &SmoothFunction, lo: &[f64], hi: &[f64], mesh: f64) -> f64 {
    let lat = Arc::new(LatticeDomain::box_domain(lo, hi, mesh).unwrap());
    let zero = SmoothFunction::constant(lo.len(), 0.0);
    let op = assemble(&lat, spec, &zero, &vec![0.0; lat.len()]).unwrap();
    let u = lat.sample(g);
    op.energy(&u, &u)
}

#[test]
fn lattice_energy_converges_to_fourier_energy_1d() {
    let a = SpdMatrix::from_rows(&[vec![1.7]]).unwrap();
    let s = 0.4;
    let spec = KernelSpec::constant(a.clone(), s, true).unwrap();
    let g = SmoothFunction::bump(vec![0.1], 0.8, 1.0);
    let input = FourierInput::Sampled {
        g: g.clone(),
        lo: vec![-1.0],
        hi: vec![1.0],
        nodes: 512,
    };
    let reference = fourier_energy(&a, s, &input, &FftOptions::default()).unwrap();
    assert!(reference.error_estimate < 1e-3 * reference.value);
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| (lattice_energy(&spec, &g, &[-1.0], &[1.0], h) - reference.value).abs() / reference.value)
        .collect();
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    assert!(errs[2] < 1e-3, "{errs:?}");
}

#[test]
fn lattice_energy_matches_fourier_energy_for_anisotropic_2d() {
    let a = SpdMatrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let s = 0.5;
    let spec = KernelSpec::constant(a.clone(), s, true).unwrap();
    let g = SmoothFunction::bump(vec![0.0, 0.0], 0.9, 1.0);
    let input = FourierInput::Sampled {
        g: g.clone(),
        lo: vec![-1.0, -1.0],
        hi: vec![1.0, 1.0],
        nodes: 64,
    };
    let reference = fourier_energy(&a, s, &input, &FftOptions::default()).unwrap();
    let coarse = lattice_energy(&spec, &g, &[-1.0, -1.0], &[1.0, 1.0], 0.2);
    let fine = lattice_energy(&spec, &g, &[-1.0, -1.0], &[1.0, 1.0], 0.1);
    let (ec, ef) = (
        (coarse - reference.value).abs() / reference.value,
        (fine - reference.value).abs() / reference.value,
    );
    assert!(ef < ec, "{ec} {ef}");
    assert!(ef < 1.5e-2, "{ec} {ef}");
}

#[test]
fn slowly_varying_field_freezes_in_the_diffusion_limit() {
    let s = 0.5;
    let field = AnisotropyField::separable_sum(1, |x: &[f64]| DMatrix::from_element(1, 1, 1.0 + 0.3 * x[0].sin()));
    let spec = KernelSpec::new(field, EllipticityBounds::new(0.7, 1.3, s, 1).unwrap(), true).unwrap();
    let density = DensitySpec::bump(vec![0.0], 0.6).unwrap();
    let h = SmoothFunction::bump(vec![0.2], 0.5, 0.3);
    let base = LatticeDomain::interval(-1.0, 1.0, 0.05).unwrap();
    let x0 = [0.4];
    let lim = diffusion_limit(&spec, &density, &h, &x0, &[0.5, 0.25, 0.125], &base).unwrap();
    let frozen = lim.frozen[2];
    for w in lim.frozen.windows(2) {
        assert!((w[0] - w[1]).abs() < 1e-9 * frozen, "{:?}", lim.frozen);
    }
    let gaps: Vec<f64> = lim.values.iter().zip(&lim.frozen).map(|(v, f)| (v - f).abs()).collect();
    assert!(gaps[2] < gaps[1] && gaps[1] < gaps[0], "{gaps:?}");
    assert!((lim.extrapolation.limit - frozen).abs() < 1e-2 * frozen);
}
