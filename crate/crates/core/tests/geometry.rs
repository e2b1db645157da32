mod common;

use common::{bumped, expanding, flat};
use kglattice::geometry::*;
use kglattice::Error;
use proptest::prelude::*;

fn any_region(lat: LatticeSpec) -> impl Strategy<Value = Region> {
    proptest::collection::vec((0..lat.n_t, 0..lat.n_x), 1..8).prop_map(move |pts| Region::from_points(&lat, pts))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn causal_future_is_a_closure(o in any_region(LatticeSpec::new(40, 16, 0.1))) {
        let st = flat(40, 16, 1.0);
        let fut = causal_future(&st, &o).unwrap();
        prop_assert!(o.is_subset(&fut));
        prop_assert_eq!(causal_future(&st, &fut).unwrap(), fut);
    }

    #[test]
    fn complement_is_disjoint_and_symmetric(o1 in any_region(LatticeSpec::new(40, 16, 0.1)), o2 in any_region(LatticeSpec::new(40, 16, 0.1))) {
        let st = flat(40, 16, 1.0);
        let comp = causal_complement(&st, &o1).unwrap();
        prop_assert!(comp.is_disjoint(&o1));
        let r12 = causal_relation(&st, &o1, &o2).unwrap() == CausalRelation::Disjoint;
        let r21 = causal_relation(&st, &o2, &o1).unwrap() == CausalRelation::Disjoint;
        prop_assert_eq!(r12, r21);
    }

    #[test]
    fn development_lies_in_the_hull_and_is_convex(n0 in 10usize..30, j0 in 0usize..16, w in 0usize..6) {
        let st = bumped(40, 16, 1.0);
        let lat = *st.lattice();
        let base = Region::rect(&lat, n0..n0 + 1, j0, w);
        let dev = cauchy_development(&st, &base).unwrap();
        prop_assert_eq!(&dev, &Region::diamond(&lat, n0, j0, w));
        prop_assert!(dev.is_subset(&causal_hull(&st, &base).unwrap()));
        prop_assert!(is_causally_convex(&st, &dev).unwrap());
    }

    #[test]
    fn perturbation_scaling_is_linear(s in -2.0f64..2.0) {
        let lat = LatticeSpec::new(40, 16, 0.1);
        let spec = BumpSpec { t0: 1.0, x0: 0.8, rt: 0.4, rx: 0.4, amp_beta: 0.05, amp_a: 0.02 };
        let h = MetricPerturbation::bump(&lat, &spec).unwrap();
        let hs = h.scaled(s);
        for n in 0..lat.n_t {
            for j in 0..lat.n_x {
                prop_assert!((hs.d_beta()[(n, j)] - s * h.d_beta()[(n, j)]).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn metric_families_are_valid_and_classified() {
    assert!(flat(32, 8, 1.0).is_ultrastatic());
    assert!(!bumped(32, 8, 1.0).is_ultrastatic());
    assert!(!expanding(32, 8, 1.0).is_ultrastatic());
}

#[test]
fn region_sets_obey_de_morgan() {
    let lat = LatticeSpec::new(20, 10, 0.1);
    let a = Region::diamond(&lat, 10, 3, 3);
    let b = Region::rect(&lat, 5..12, 6, 2);
    assert_eq!(a.union(&b).complement(), a.complement().intersection(&b.complement()));
    assert_eq!(a.difference(&b), a.intersection(&b.complement()));
}

#[test]
fn base_on_two_rows_has_no_development() {
    let st = flat(20, 10, 1.0);
    let lat = *st.lattice();
    assert_eq!(cauchy_development(&st, &Region::rect(&lat, 5..7, 4, 2)), Err(Error::BaseNotOnSurface));
}

#[test]
fn gradient_field_off_diagonal_part_vanishes_at_second_order() {
    // X = (∂_t ψ, ∂_x ψ) has (£_X g)_{tx} = 0 on flat space; the lattice value is O(Δ²)
    let k = 2.0 * std::f64::consts::PI / 3.2;
    let off = |scale: usize| {
        let lat = LatticeSpec::new(64 * scale, 32 * scale, 0.1 / scale as f64);
        let st = Spacetime::flat(lat, KgParams::massive(1.0)).unwrap();
        let psi = |t: f64| (1.0 - ((t - 1.6) / 1.2).powi(2)).max(0.0).powi(6);
        let h = 1e-6;
        let x = VectorField::from_fn(&lat, |t, x| {
            let dpsi = (psi(t + h) - psi(t - h)) / (2.0 * h);
            (dpsi * (k * x).sin(), psi(t) * k * (k * x).cos())
        });
        lie_perturbation(&st, &x).unwrap().max_off_diagonal()
    };
    let (e1, e2, e4) = (off(1), off(2), off(4));
    assert!((e1 / e2).log2() >= 1.8 && (e2 / e4).log2() >= 1.8, "{e1:e} {e2:e} {e4:e}");
}
