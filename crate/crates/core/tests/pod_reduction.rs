//! Snapshot bank, basis truncation and reduced cell solves.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use csahomog_core::csa::stretch_of;
use csahomog_core::material::NeoHookean;
use csahomog_core::mesh::builders::{uniform_cell, InclusionCell, INCLUSION_REGION, MATRIX_REGION};
use csahomog_core::micro::{CellProblem, MicroSettings};
use csahomog_core::pod::{
    generate_snapshots, reduced_step_to, truncation_size, ReducedBasis, SnapshotBank, COLUMNS_PER_STATE,
};
use csahomog_core::tensor::{Tensor2, Tensor4};

fn materials() -> BTreeMap<u32, NeoHookean<f64>> {
    let mut mats = BTreeMap::new();
    mats.insert(MATRIX_REGION, NeoHookean::new(5.7e9, 1.35e9).unwrap());
    mats.insert(INCLUSION_REGION, NeoHookean::new(43.21e9, 28.46e9).unwrap());
    mats
}

fn no_sensitivities() -> MicroSettings<f64> {
    MicroSettings { sensitivities: false, ..Default::default() }
}

struct Fixture {
    problem: CellProblem<f64>,
    bank: SnapshotBank<f64>,
}

fn coarse() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let problem = CellProblem::new(&InclusionCell::coarse().build(), &materials(), no_sensitivities()).unwrap();
        let bank = generate_snapshots(&problem, 0.015, 10).unwrap();
        Fixture { problem, bank }
    })
}

fn rel2(a: &Tensor2<f64>, b: &Tensor2<f64>) -> f64 {
    (*a - *b).max_abs() / b.max_abs()
}

fn rel4(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    (*a - *b).max_abs() / b.max_abs()
}

#[test]
fn homogeneous_cell_has_a_zero_bank_and_exact_empty_basis() {
    let mut mats = BTreeMap::new();
    mats.insert(MATRIX_REGION, NeoHookean::new(5.7e9, 1.35e9).unwrap());
    let problem = CellProblem::new(&uniform_cell(4, 4), &mats, no_sensitivities()).unwrap();
    let bank = generate_snapshots(&problem, 0.015, 3).unwrap();
    assert!(bank.columns.iter().flatten().all(|v| v.abs() < 1e-12));
    let empty = ReducedBasis { vectors: Vec::new(), eigenvalues: Vec::new(), tolerance: 0.0 };
    let s0 = problem.initial_state().unwrap();
    let target = stretch_of(&[0.01, -0.004, 0.003]);
    let reduced = reduced_step_to(&problem, &empty, &s0, &target).unwrap().state;
    let full = problem.step_to(&s0, &target).unwrap();
    assert!(rel2(&reduced.coefficients().stress, &full.coefficients().stress) < 1e-10);
    assert!(rel4(&reduced.coefficients().tangent, &full.coefficients().tangent) < 1e-10);
}

#[test]
fn two_state_ramps_give_two_states_per_sign() {
    let problem = CellProblem::new(&InclusionCell::tiny().build(), &materials(), no_sensitivities()).unwrap();
    let bank = generate_snapshots(&problem, 0.01, 2).unwrap();
    assert_eq!(bank.len(), 3 * 2 * 2 * COLUMNS_PER_STATE);
}

#[test]
fn rank_one_bank_yields_its_normalized_column() {
    let col = vec![0.0, -3.0, 4.0, 0.0];
    let bank = SnapshotBank { columns: vec![col, vec![0.0; 4]], bound: 0.0, steps: 2 };
    let basis = ReducedBasis::build(&bank, 0.0, false).unwrap();
    assert_eq!(basis.size(), 1);
    let expect: [f64; 4] = [0.0, -0.6, 0.8, 0.0];
    for (a, b) in basis.vectors[0].iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn spectrum_is_sorted_nonnegative_and_sums_to_the_frobenius_norm() {
    let f = coarse();
    let basis = ReducedBasis::build(&f.bank, 0.0, false).unwrap();
    let total: f64 = basis.eigenvalues.iter().sum();
    assert!((total - f.bank.frobenius_squared()).abs() <= 1e-10 * total);
    assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    assert!(basis.eigenvalues.iter().all(|l| *l >= 0.0));
    for (i, a) in basis.vectors.iter().enumerate() {
        for (j, b) in basis.vectors.iter().enumerate() {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-10);
        }
    }
    // The leading mode carries most of the energy.
    assert!(basis.eigenvalues[0] > 0.3 * total);
}

#[test]
fn truncation_is_monotone_and_meets_the_tail_bound() {
    let f = coarse();
    let full = ReducedBasis::build(&f.bank, 0.0, false).unwrap();
    let deltas = [0.0, 1e-6, 1e-4, 1e-3, 0.005, 0.02, 0.05, 0.2];
    let sizes: Vec<usize> = deltas.iter().map(|d| truncation_size(&full.eigenvalues, *d)).collect();
    assert!(sizes.windows(2).all(|w| w[0] >= w[1]), "{sizes:?}");
    let b = ReducedBasis::build(&f.bank, 0.02, false).unwrap();
    assert!(b.tail_ratio() < 0.02);
    assert!(b.size() * 10 < f.problem.n_free(), "M = {} of {}", b.size(), f.problem.n_free());
    // One fewer mode would violate the bound.
    let total: f64 = full.eigenvalues.iter().sum();
    let tail: f64 = full.eigenvalues.iter().skip(b.size() - 1).sum();
    assert!((tail / total).sqrt() >= 0.02);
}

#[test]
fn dense_correlation_path_agrees_with_snapshot_path() {
    let problem = CellProblem::new(&InclusionCell::tiny().build(), &materials(), no_sensitivities()).unwrap();
    let bank = generate_snapshots(&problem, 0.015, 4).unwrap();
    let a = ReducedBasis::build(&bank, 1e-4, false).unwrap();
    let b = ReducedBasis::build(&bank, 1e-4, true).unwrap();
    assert_eq!(a.size(), b.size());
    for m in 0..a.size() {
        let (la, lb) = (a.eigenvalues[m], b.eigenvalues[m]);
        assert!((la - lb).abs() <= 1e-9 * a.eigenvalues[0], "eigenvalue {m}: {la} vs {lb}");
    }
    // Leading modes are well separated and so agree up to the sign convention.
    let d: f64 = a.vectors[0].iter().zip(&b.vectors[0]).map(|(x, y)| x * y).sum();
    assert!((d - 1.0).abs() < 1e-8);
}

#[test]
fn identity_basis_reproduces_the_full_step() {
    let problem = CellProblem::new(&InclusionCell::tiny().build(), &materials(), no_sensitivities()).unwrap();
    let basis = ReducedBasis::complete(problem.n_free());
    let s0 = problem.initial_state().unwrap();
    let target = Tensor2::from_plane([[1.012, 0.004], [-0.003, 0.99]], 1.0);
    let reduced = reduced_step_to(&problem, &basis, &s0, &target).unwrap();
    let full = problem.step_to(&s0, &target).unwrap();
    assert!(rel2(&reduced.state.coefficients().stress, &full.coefficients().stress) <= 1e-8);
    assert!(rel4(&reduced.state.coefficients().tangent, &full.coefficients().tangent) <= 1e-8);
    assert!(reduced.galerkin_residual <= 1e-10);
}

#[test]
fn untruncated_basis_is_exact_on_training_states() {
    let f = coarse();
    let basis = ReducedBasis::build(&f.bank, 0.0, false).unwrap();
    let s0 = f.problem.initial_state().unwrap();
    for e in [[0.015 * 4.0 / 9.0, 0.0, 0.0], [0.0, -0.015, 0.0], [0.0, 0.0, 0.015 * 7.0 / 9.0]] {
        let target = stretch_of(&e);
        let reduced = reduced_step_to(&f.problem, &basis, &s0, &target).unwrap();
        let full = f.problem.step_to(&s0, &target).unwrap();
        let es = rel2(&reduced.state.coefficients().stress, &full.coefficients().stress);
        let ea = rel4(&reduced.state.coefficients().tangent, &full.coefficients().tangent);
        // Both sides stop at the cell Newton tolerance along different load
        // paths, so agreement is bounded by that tolerance, not round-off.
        assert!(es <= 1e-7 && ea <= 1e-7, "{e:?}: stress {es:e}, tangent {ea:e}");
        assert!(reduced.galerkin_residual <= 1e-10, "Galerkin residual {:e}", reduced.galerkin_residual);
    }
}

#[test]
fn stress_error_shrinks_with_the_truncation_tolerance() {
    let f = coarse();
    let s0 = f.problem.initial_state().unwrap();
    let target = stretch_of(&[0.008, -0.005, 0.004]);
    let full = f.problem.step_to(&s0, &target).unwrap();
    let mut errors = Vec::new();
    for delta in [0.05, 0.02, 0.005, 1e-4] {
        let basis = ReducedBasis::build(&f.bank, delta, false).unwrap();
        let reduced = reduced_step_to(&f.problem, &basis, &s0, &target).unwrap();
        errors.push(rel2(&reduced.state.coefficients().stress, &full.coefficients().stress));
    }
    assert!(errors.windows(2).all(|w| w[1] <= w[0]), "{errors:?}");
    assert!(errors[1] < 0.05, "{errors:?}");
}

#[test]
fn basis_file_round_trip_checks_the_cell() {
    let f = coarse();
    let basis = ReducedBasis::build(&f.bank, 0.02, false).unwrap();
    let sum = [7u8; 32];
    let mut bytes = Vec::new();
    basis.write_to(&mut bytes, &sum).unwrap();
    let back = ReducedBasis::<f64>::read_from(bytes.as_slice(), &sum).unwrap();
    assert_eq!(back.vectors, basis.vectors);
    assert_eq!(back.tolerance, 0.02);
    assert!(ReducedBasis::<f64>::read_from(bytes.as_slice(), &[0u8; 32]).is_err());
}
