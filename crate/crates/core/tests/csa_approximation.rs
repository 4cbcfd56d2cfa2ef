//! Strain-space clustering, blending and the first-order coefficient expansion.

use std::collections::BTreeMap;
use std::sync::Arc;

use csahomog_core::backend::CoefficientBackend;
use csahomog_core::csa::{
    blend_weights, cover, polar_decompose, relative_deformation, stretch_of, CentroidRegistry, CsaBackend, CsaSettings, Membership,
    StrainMetric, StrainPoint,
};
use csahomog_core::material::NeoHookean;
use csahomog_core::mesh::builders::{uniform_cell, InclusionCell, INCLUSION_REGION, MATRIX_REGION};
use csahomog_core::micro::{CellProblem, MicroSettings};
use csahomog_core::tensor::{Tensor2, Tensor4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn materials() -> BTreeMap<u32, NeoHookean<f64>> {
    let mut mats = BTreeMap::new();
    mats.insert(MATRIX_REGION, NeoHookean::new(5.7e9, 1.35e9).unwrap());
    mats.insert(INCLUSION_REGION, NeoHookean::new(43.21e9, 28.46e9).unwrap());
    mats
}

fn coarse() -> Arc<CellProblem<f64>> {
    Arc::new(CellProblem::new(&InclusionCell::coarse().build(), &materials(), MicroSettings::default()).unwrap())
}

fn settings(radius: f64) -> CsaSettings<f64> {
    CsaSettings { radius, metric: StrainMetric::Components, seed: 7 }
}

fn rotation(theta: f64) -> Tensor2<f64> {
    Tensor2::from_plane([[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]], 1.0)
}

fn rel4(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    (*a - *b).max_abs() / b.max_abs()
}

proptest! {
    #[test]
    fn polar_factors_reconstruct_the_gradient(a in 0.6f64..1.5, b in -0.4f64..0.4, c in -0.4f64..0.4, d in 0.6f64..1.5) {
        let f = Tensor2::from_plane([[a, b], [c, d]], 1.0);
        prop_assume!(f.det() > 0.05);
        let p = polar_decompose(&f).unwrap();
        prop_assert!((p.rotation.dot(&p.stretch) - f).max_abs() <= 1e-12);
        prop_assert!((p.rotation.transpose().dot(&p.rotation) - Tensor2::identity()).max_abs() <= 1e-12);
        prop_assert!((p.rotation.det() - 1.0).abs() <= 1e-12);
        let u = p.stretch;
        prop_assert!((u - u.transpose()).max_abs() == 0.0);
        prop_assert!(u[(0, 0)] > 0.0 && u.det() > 0.0);
    }

    #[test]
    fn relative_deformation_composes_back(e in prop::array::uniform3(-0.05f64..0.05), c in prop::array::uniform3(-0.05f64..0.05)) {
        let g = relative_deformation(&e, &c).unwrap();
        let back = (Tensor2::identity() + g).dot(&stretch_of(&c));
        let back = Tensor2::from_plane(back.plane(), 1.0);
        prop_assert!((back - stretch_of(&e)).max_abs() <= 1e-13);
    }

    #[test]
    fn weights_form_a_partition_of_unity(d in prop::collection::vec(0.0f64..0.01, 1..6)) {
        let w = blend_weights(&d, 0.01);
        let total: f64 = w.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-14);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn relative_deformation_trivial_cases() {
    let e = [0.01, -0.004, 0.002];
    assert_eq!(relative_deformation(&e, &e).unwrap(), Tensor2::zero());
    let g = relative_deformation(&e, &[0.0; 3]).unwrap();
    assert_eq!(g.plane(), [[0.01, 0.002], [0.002, -0.004]]);
}

#[test]
fn weights_single_equidistant_and_near_boundary() {
    assert_eq!(blend_weights(&[0.003], 0.01), vec![1.0]);
    assert_eq!(blend_weights(&[0.004, 0.004], 0.01), vec![0.5, 0.5]);
    let eps: f64 = 1e-4;
    let w: Vec<f64> = blend_weights(&[0.01 - eps, 0.0], 0.01);
    assert!((w[0] - eps * eps / (eps * eps + 1e-4)).abs() < 1e-15);
}

#[test]
fn two_separated_clusters_need_exactly_two_balls() {
    let rho = 0.001;
    let mut pts = Vec::new();
    for i in 0..5 {
        let t = i as f64 * 1e-4;
        pts.push([t, 0.0, 0.0]);
        pts.push([10.0 * rho + t, 0.0, t]);
    }
    // No single ball of radius ρ can hold two points further apart than 2ρ.
    let diameter = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()))
        .fold(0.0, f64::max);
    assert!(diameter > 2.0 * rho);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centers = cover(&pts, rho, &mut rng);
    assert_eq!(centers.len(), 2);
    for p in &pts {
        assert!(centers.iter().any(|c| StrainMetric::Components.distance(p, c) < rho));
    }
}

#[test]
fn membership_is_strict_and_sees_overlaps() {
    let problem = Arc::new(CellProblem::new(&uniform_cell(2, 2), &materials(), MicroSettings::default()).unwrap());
    let mut registry = CentroidRegistry::new(settings(0.25)).unwrap();
    let s0 = problem.initial_state().unwrap();
    registry.push([0.0; 3], None, 1, s0.clone());
    registry.push([0.25, 0.0, 0.0], Some(0), 1, s0);
    assert_eq!(registry.covering(&[0.0, 0.0, 0.0]), vec![0]);
    assert_eq!(registry.covering(&[0.0, 0.25, 0.0]), Vec::<usize>::new());
    assert_eq!(registry.covering(&[0.125, 0.0, 0.0]), vec![0, 1]);
    let m = registry.membership(&[0.125, 0.0, 0.0]).unwrap();
    assert_eq!(m.weights, vec![0.5, 0.5]);
}

#[test]
fn expansion_at_the_center_returns_centroid_coefficients() {
    let problem = coarse();
    let mut registry = CentroidRegistry::new(settings(0.01)).unwrap();
    let s0 = problem.initial_state().unwrap();
    let center = [0.006, -0.002, 0.003];
    let state = problem.step_to(&s0, &stretch_of(&center)).unwrap();
    registry.push(center, None, 1, state.clone());
    let one = Membership { indices: vec![0], weights: vec![1.0] };
    let (s, a) = registry.approximate(&StrainPoint { strain: center, rotation: Tensor2::identity() }, &one).unwrap();
    assert_eq!(s, state.coefficients().stress);
    assert_eq!(a, state.coefficients().tangent);

    let r = rotation(0.3);
    let (s, a) = registry.approximate(&StrainPoint { strain: center, rotation: r }, &one).unwrap();
    assert!((s - state.coefficients().stress.rotate(&r)).max_abs() <= 1e-12 * s.max_abs());
    assert!(rel4(&a, &state.coefficients().tangent.rotate(&r)) <= 1e-12);
}

#[test]
fn expansion_error_is_second_order_against_direct_solves() {
    let problem = coarse();
    let mut registry = CentroidRegistry::new(settings(0.1)).unwrap();
    let s0 = problem.initial_state().unwrap();
    let center = [0.008, -0.003, 0.002];
    let base = problem.step_to(&s0, &stretch_of(&center)).unwrap();
    registry.push(center, None, 1, base.clone());
    let one = Membership { indices: vec![0], weights: vec![1.0] };
    let direction = [0.6, -0.5, 0.62];
    let mut errors = Vec::new();
    for scale in [1e-3, 5e-4] {
        let e = [0, 1, 2].map(|i| center[i] + scale * direction[i]);
        let direct = problem.step_to(&base, &stretch_of(&e)).unwrap();
        let (_, a) = registry.approximate(&StrainPoint { strain: e, rotation: Tensor2::identity() }, &one).unwrap();
        errors.push(rel4(&a, &direct.coefficients().tangent));
    }
    assert!(errors[0] <= 1e-5, "tangent error at |g|=1e-3: {:e}", errors[0]);
    let order = (errors[0] / errors[1]).log2();
    assert!(order > 1.6, "observed order {order} from {errors:?}");
}

#[test]
fn reconstruction_at_center_and_for_homogeneous_cells() {
    let problem = coarse();
    let mut backend = CsaBackend::new(problem.clone(), settings(0.01)).unwrap();
    backend.coefficients(&[Tensor2::identity()]).unwrap();
    let y = backend.reconstruct(&Tensor2::identity()).unwrap();
    for (a, b) in y.iter().zip(problem.initial_state().unwrap().coordinates()) {
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
    }

    let mut mats = BTreeMap::new();
    mats.insert(MATRIX_REGION, NeoHookean::new(5.7e9, 1.35e9).unwrap());
    let homogeneous = Arc::new(CellProblem::new(&uniform_cell(4, 4), &mats, MicroSettings::default()).unwrap());
    let mut backend = CsaBackend::new(homogeneous.clone(), settings(0.05)).unwrap();
    backend.coefficients(&[Tensor2::identity()]).unwrap();
    let u = stretch_of(&[0.01, -0.006, 0.004]);
    let y = backend.reconstruct(&u).unwrap();
    let x = homogeneous.reference().nodes();
    // Affine image of the reference cell, compared up to the translation
    // introduced by rotating about the mean.
    let shift = [y[0][0] - (u[(0, 0)] * x[0][0] + u[(0, 1)] * x[0][1]), y[0][1] - (u[(1, 0)] * x[0][0] + u[(1, 1)] * x[0][1])];
    for (p, q) in y.iter().zip(x) {
        let expect = [u[(0, 0)] * q[0] + u[(0, 1)] * q[1] + shift[0], u[(1, 0)] * q[0] + u[(1, 1)] * q[1] + shift[1]];
        assert!((p[0] - expect[0]).abs() < 1e-12 && (p[1] - expect[1]).abs() < 1e-12);
    }
}

#[test]
fn backend_seeds_once_and_reuses_coverage() {
    let mut backend = CsaBackend::new(coarse(), settings(0.005)).unwrap();
    let n = 6;
    let field = backend.coefficients(&vec![Tensor2::identity(); n]).unwrap();
    assert_eq!(backend.registry().len(), 1);
    assert!(field.stress.windows(2).all(|w| w[0] == w[1]));
    let small: Vec<Tensor2<f64>> = (0..n).map(|i| stretch_of(&[1e-4 * i as f64, 0.0, 0.0])).collect();
    backend.coefficients(&small).unwrap();
    assert_eq!(backend.registry().len(), 1);
    assert_eq!(backend.stats().last_new_centroids, 0);
    assert_eq!(backend.stats().micro_solves, 1);

    let far: Vec<Tensor2<f64>> = (0..n).map(|i| stretch_of(&[0.02 + 1e-4 * i as f64, 0.0, 0.0])).collect();
    backend.coefficients(&far).unwrap();
    assert_eq!(backend.stats().last_new_centroids, 1);
    assert_eq!(backend.registry().centroids()[1].source, Some(0));
}
