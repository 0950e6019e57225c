use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use selfdual::hilbert::expm;
use selfdual::lagrangian::Lagrangian;
use selfdual::pathspace::{Discretization, Path};
use selfdual::problems::{preset, BoundarySpec, Problem};
use selfdual::{ConvexFn, Semigroup, Space};

fn vector(dim: usize, radius: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-radius..radius, dim).prop_map(DVector::from_vec)
}

fn skew(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim * dim).prop_map(move |v| {
        let b = DMatrix::from_vec(dim, dim, v);
        (&b - b.transpose()) * 0.5
    })
}

fn catalog(dim: usize, exponent: f64) -> Vec<ConvexFn> {
    vec![
        ConvexFn::isotropic(dim, 0.7).unwrap(),
        ConvexFn::power(dim, exponent).unwrap(),
        ConvexFn::separable_power(dim, exponent).unwrap(),
        ConvexFn::power(dim, exponent).unwrap().tilted(DVector::from_element(dim, 0.3)).unwrap(),
        ConvexFn::isotropic(dim, 1.0).unwrap().translated(DVector::from_element(dim, -0.2)).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fenchel_young_is_nonnegative(
        x in vector(3, 2.0),
        p in vector(3, 2.0),
        exponent in 1.2..4.0f64,
    ) {
        for phi in catalog(3, exponent) {
            let conj = phi.conjugate().unwrap();
            let gap = phi.fenchel_young(&conj, &x, &p).finite().unwrap();
            prop_assert!(gap >= -1e-9, "{gap}");
        }
    }

    #[test]
    fn fenchel_young_vanishes_on_gradient(x in vector(3, 2.0), exponent in 1.5..4.0f64) {
        for phi in catalog(3, exponent) {
            let conj = phi.conjugate().unwrap();
            let grad = phi.gradient(&x).unwrap();
            let gap = phi.fenchel_young(&conj, &x, &grad).finite().unwrap();
            prop_assert!(gap.abs() <= 1e-8 * (1.0 + x.norm_squared()), "{gap}");
        }
    }

    #[test]
    fn convex_pair_gap_is_nonnegative(x in vector(2, 2.0), p in vector(2, 2.0), t in 0.0..1.0f64) {
        let l = Lagrangian::from_convex_pair(ConvexFn::power(2, 3.0).unwrap()).unwrap();
        prop_assert!(l.fenchel_gap(t, &x, &p).finite().unwrap() >= -1e-9);
    }

    #[test]
    fn skew_shift_keeps_gap_nonnegative(x in vector(3, 1.5), p in vector(3, 1.5), shift in skew(3)) {
        let l = Lagrangian::from_convex_pair(ConvexFn::isotropic(3, 1.0).unwrap())
            .unwrap()
            .skew_shift(shift)
            .unwrap();
        prop_assert!(l.fenchel_gap(0.0, &x, &p).finite().unwrap() >= -1e-9);
    }

    #[test]
    fn vector_field_closes_the_gap(x in vector(2, 1.5)) {
        let l = Lagrangian::from_convex_pair(ConvexFn::power(2, 3.0).unwrap()).unwrap();
        let field = l.vector_field(0.0, &x).unwrap();
        prop_assert!(l.fenchel_gap(0.0, &x, &field).finite().unwrap().abs() <= 1e-8);
    }

    #[test]
    fn skew_groups_are_isometries(g in skew(4), x in vector(4, 3.0), t in -2.0..2.0f64) {
        let group = Semigroup::unitary(&Space::euclidean(4), g).unwrap();
        let y = group.apply(t, &x);
        prop_assert!((y.norm() - x.norm()).abs() <= 1e-12 * (1.0 + x.norm()));
        prop_assert!((group.apply(-t, &y) - &x).amax() <= 1e-12 * (1.0 + x.amax()));
    }

    #[test]
    fn exponential_inverts(entries in prop::collection::vec(-2.0..2.0f64, 9)) {
        let a = DMatrix::from_vec(3, 3, entries);
        let product = expm(&a) * expm(&(-&a));
        prop_assert!((product - DMatrix::identity(3, 3)).amax() <= 1e-10);
    }

    #[test]
    fn path_flattening_roundtrips(values in prop::collection::vec(-5.0..5.0f64, 12)) {
        let path = Path::unflatten(3, &DVector::from_vec(values.clone())).unwrap();
        prop_assert_eq!(path.intervals(), 3);
        let flat = path.flatten();
        prop_assert_eq!(flat.as_slice(), values.as_slice());
    }

    #[test]
    fn transform_roundtrips(x in vector(16, 2.0), t in 0.0..1.0f64) {
        let mut spec = preset("gl_skew").unwrap();
        spec.grid.n = 8;
        let problem = Problem::build(&spec, None).unwrap();
        let back = problem.transform.inverse(t, &problem.transform.forward(t, &x));
        prop_assert!((back - &x).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn assembled_functionals_are_nonnegative(
        seed_values in prop::collection::vec(-1.0..1.0f64, 16 * 9),
        boundary in prop_oneof![Just(BoundarySpec::Periodic), Just(BoundarySpec::Antiperiodic)],
    ) {
        let mut spec = preset("gl_skew").unwrap();
        spec.grid.n = 8;
        spec.intervals = 8;
        spec.boundary = boundary;
        let problem = Problem::build(&spec, None).unwrap();
        let f = &problem.functional;
        let raw = Path::unflatten(16, &DVector::from_vec(seed_values)).unwrap();
        let path = f.enforce(&raw);
        let value = f.value(&path).finite().unwrap();
        prop_assert!(value >= -1e-8 * f.scale(&path), "{value}");
    }
}

#[test]
fn node_times_cover_the_horizon() {
    let disc = Discretization::new(0.5, 10).unwrap();
    let times = disc.node_times();
    assert_eq!(times.len(), 11);
    assert_eq!(times[0], 0.0);
    assert_eq!(times[10], 0.5);
}
