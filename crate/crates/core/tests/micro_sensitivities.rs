//! Analytic coefficient sensitivities against central differences of
//! complete cell re-solves.

use std::collections::BTreeMap;

use csahomog_core::material::NeoHookean;
use csahomog_core::mesh::builders::{InclusionCell, INCLUSION_REGION, MATRIX_REGION};
use csahomog_core::micro::{CellProblem, MicroSettings, MODES, SENSITIVITY_MODES};
use csahomog_core::tensor::{Tensor2, Tensor4};

fn problem() -> CellProblem<f64> {
    let mut mats = BTreeMap::new();
    mats.insert(MATRIX_REGION, NeoHookean::new(5.7e9, 1.35e9).unwrap());
    mats.insert(INCLUSION_REGION, NeoHookean::new(43.21e9, 28.46e9).unwrap());
    CellProblem::new(&InclusionCell::coarse().build(), &mats, MicroSettings::default()).unwrap()
}

fn direction(mode: usize) -> Tensor2<f64> {
    let (r, s) = SENSITIVITY_MODES[mode];
    (Tensor2::unit(r, s) + Tensor2::unit(s, r)) * 0.5
}

fn in_plane_max(t: &Tensor4<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for &(i, j) in &MODES {
        for &(k, l) in &MODES {
            m = m.max(t.get(i, j, k, l).abs());
        }
    }
    m
}

#[test]
fn sensitivities_match_finite_differences_of_full_solves() {
    let p = problem();
    assert!(p.reference().node_count() > 450 && p.reference().node_count() < 650);
    let s0 = p.initial_state().unwrap();
    let stretch = Tensor2::from_plane([[1.012, 0.004], [0.004, 0.993]], 1.0);
    let base = p.step_to(&s0, &stretch).unwrap();
    let sens = base.coefficients().sensitivities.clone().unwrap();

    let h = 1e-5;
    for mode in 0..3 {
        let g = direction(mode);
        let plus = p.micro_step(&base, &(g * h)).unwrap();
        let minus = p.micro_step(&base, &(g * -h)).unwrap();
        let fd_s = (plus.coefficients().stress - minus.coefficients().stress) * (0.5 / h);
        let fd_a = (plus.coefficients().tangent - minus.coefficients().tangent).scale(0.5 / h);
        let err_s = (fd_s - sens.stress[mode]).max_abs() / fd_s.max_abs();
        let err_a = in_plane_max(&(fd_a - sens.tangent[mode])) / in_plane_max(&fd_a);
        assert!(err_s <= 1e-4, "mode {mode}: stress sensitivity error {err_s:e}");
        assert!(err_a <= 1e-4, "mode {mode}: tangent sensitivity error {err_a:e}");
    }
}

#[test]
fn sensitivities_at_rest_match_finite_differences() {
    let p = problem();
    let s0 = p.initial_state().unwrap();
    let sens = s0.coefficients().sensitivities.clone().unwrap();
    let h = 1e-5;
    for mode in 0..3 {
        let g = direction(mode);
        let plus = p.micro_step(&s0, &(g * h)).unwrap();
        let minus = p.micro_step(&s0, &(g * -h)).unwrap();
        let fd_s = (plus.coefficients().stress - minus.coefficients().stress) * (0.5 / h);
        let fd_a = (plus.coefficients().tangent - minus.coefficients().tangent).scale(0.5 / h);
        assert!((fd_s - sens.stress[mode]).max_abs() <= 1e-4 * fd_s.max_abs());
        assert!(in_plane_max(&(fd_a - sens.tangent[mode])) <= 1e-4 * in_plane_max(&fd_a));
    }
}

#[test]
fn tangent_is_symmetric_and_equals_energy_form() {
    let p = problem();
    let s0 = p.initial_state().unwrap();
    let s = p.step_to(&s0, &Tensor2::from_plane([[1.01, 0.02], [-0.01, 0.99]], 1.0)).unwrap();
    let a = &s.coefficients().tangent;
    assert!(a.major_asymmetry() <= 1e-10 * in_plane_max(a));
}
