mod common;

use common::{configs, flat, random_rect};
use kglattice::algebra::{kinematic_subspace, Algebra, AlgebraElement, OneParticleBasis};
use kglattice::deformation::{development, sample_disjoint_pairs};
use kglattice::dynamics::apply_p_lattice;
use kglattice::field::*;
use kglattice::geometry::*;
use kglattice::linalg;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N_T: usize = 48;
const N_X: usize = 12;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn field_axioms_hold_on_every_metric_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, st) in configs(N_T, N_X) {
        let lat = *st.lattice();
        let alg = Algebra::new(OneParticleBasis::new(&st, N_T / 2).unwrap());
        let (mut lin, mut adj, mut eqn, mut ccr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..100 {
            let f = TestFunction::random_complex(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
            let h = TestFunction::random_complex(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
            let (a, b) = (c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)), c(0.3, -1.1));
            let (gf, gh) = (alg.gen(&st, &f).unwrap(), alg.gen(&st, &h).unwrap());

            let combo = alg.gen(&st, &f.scale(a).add(&h.scale(b))).unwrap();
            lin = lin.max(combo.sub(&gf.scale(a)).sub(&gh.scale(b)).norm());

            adj = adj.max(alg.adjoint(&gf).sub(&alg.gen(&st, &f.conj()).unwrap()).norm());

            // P applied to a compactly supported field that keeps P φ off the padding
            let inner = Region::slab(&lat, lat.n_pad + 1..lat.n_t - lat.n_pad - 1);
            let phi = TestFunction::random_real(&st, &random_rect(&lat, &mut rng).intersection(&inner), &mut rng);
            if let Ok(phi) = phi {
                let p_phi = Grid::from_vec(lat.n_t, lat.n_x, apply_p_lattice(&st, &phi.re())).unwrap();
                let p_phi = TestFunction::from_real(&st, &p_phi).unwrap();
                eqn = eqn.max(alg.gen(&st, &p_phi).unwrap().norm());
            }

            let e = commutator_function(&st, &f, &h).unwrap();
            let comm = alg.commutator(&gf, &gh).unwrap();
            ccr = ccr.max(comm.sub(&AlgebraElement::scalar(c(0.0, 1.0) * e)).norm());
        }
        assert!(lin <= 1e-12, "{name}: linearity {lin:e}");
        assert_eq!(adj, 0.0, "{name}: adjoint");
        assert!(eqn <= 1e-12, "{name}: field equation {eqn:e}");
        assert!(ccr <= 1e-11, "{name}: commutator {ccr:e}");
    }
}

#[test]
fn commutator_function_is_antisymmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, st) in configs(N_T, N_X) {
        let lat = *st.lattice();
        for _ in 0..30 {
            let f = TestFunction::random_real(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
            let h = TestFunction::random_real(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
            let (fh, hf) = (commutator_function(&st, &f, &h).unwrap(), commutator_function(&st, &h, &f).unwrap());
            assert!((fh + hf).norm() <= 1e-12, "{name}: {fh} vs {hf}");
        }
    }
}

#[test]
fn retarded_support_lies_in_dilated_future_cone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, st) in configs(N_T, 24) {
        let lat = *st.lattice();
        for _ in 0..20 {
            let o = random_rect(&lat, &mut rng);
            let f = TestFunction::random_real(&st, &o, &mut rng).unwrap();
            let fut = causal_future(&st, &o).unwrap().dilate();
            let past = causal_past(&st, &o).unwrap().dilate();
            let ret = green_retarded(&st, &f).unwrap().re();
            let adv = green_advanced(&st, &f).unwrap().re();
            for n in 0..lat.n_t {
                for j in 0..lat.n_x {
                    let i = n * lat.n_x + j;
                    assert!(ret[i] == 0.0 || fut.contains(n, j), "{name}: retarded leaks to ({n},{j})");
                    assert!(adv[i] == 0.0 || past.contains(n, j), "{name}: advanced leaks to ({n},{j})");
                }
            }
        }
    }
}

/// `½ ∫ f` over the past (sign −1) or future (sign +1) light cone of `(t, x)`,
/// with `f = b((t − t0)/r) b((x − x0)/r)` periodic in `x` with period `l`.
/// The cone is parametrised as `t′ = t ∓ u`, `x′ = x + s u`, `|s| ≤ 1`, and
/// the `u`-range is clipped to the time support of `f`.
fn cone_integral(t: f64, x: f64, sign: f64, (t0, x0, r, l): (f64, f64, f64, f64)) -> f64 {
    let (u_lo, u_hi) = if sign < 0.0 { (t - t0 - r, t - t0 + r) } else { (t0 - r - t, t0 + r - t) };
    let (u_lo, u_hi) = (u_lo.max(0.0), u_hi);
    if u_hi <= u_lo {
        return 0.0;
    }
    let f = |tp: f64, xp: f64| {
        let mut sep = (xp - x0).rem_euclid(l);
        if sep > 0.5 * l {
            sep -= l;
        }
        smooth_bump((tp - t0) / r) * smooth_bump(sep / r)
    };
    let simpson = |n: usize, a: f64, b: f64, g: &dyn Fn(f64) -> f64| {
        let h = (b - a) / n as f64;
        let mut s = g(a) + g(b);
        for k in 1..n {
            s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let outer = |u: f64| u * simpson(800, -1.0, 1.0, &|s| f(t + sign * u, x + s * u));
    0.5 * simpson(400, u_lo, u_hi, &outer)
}

#[test]
fn massless_commutator_converges_to_dalembert_solution() {
    let (t_len, l, r) = (3.2, 3.2, 0.5);
    let (t0, x0) = (1.6, 1.3);
    let coarse = 0.1;
    let probe_rows: Vec<usize> = (1..8).map(|k| 4 * k).collect();
    let mut errors = Vec::new();
    for level in 0..4 {
        let scale = 1usize << level;
        let dx = coarse / scale as f64;
        let lat = LatticeSpec::new((t_len / (0.5 * dx)).round() as usize, (l / dx).round() as usize, dx);
        let st = Spacetime::flat(lat, KgParams::massless()).unwrap();
        let f = TestFunction::bump(&st, t0, x0, r, r).unwrap();
        let u = commutator_solution(&st, &f).unwrap().re();
        let mut err = 0.0f64;
        for &n in &probe_rows {
            for j in (0..32).step_by(2) {
                let (nn, jj) = (n * 2 * scale, j * scale);
                let (t, x) = (lat.t(nn), lat.x(jj));
                let exact = cone_integral(t, x, 1.0, (t0, x0, r, l)) - cone_integral(t, x, -1.0, (t0, x0, r, l));
                err = err.max((u[nn * lat.n_x + jj] - exact).abs());
            }
        }
        errors.push(err);
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    assert!(orders.iter().all(|p| *p >= 1.8), "errors {errors:?}, orders {orders:?}");
}

#[test]
fn commutator_vanishes_for_disjoint_and_touching_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, st) in configs(64, 24) {
        let pairs = sample_disjoint_pairs(&st, 50, &mut rng).unwrap();
        let mut n_touch = 0;
        for (o1, o2) in &pairs {
            if causal_relation(&st, o1, o2).unwrap() == CausalRelation::Touching {
                n_touch += 1;
            }
            let f = TestFunction::random_complex(&st, o1, &mut rng).unwrap();
            let h = TestFunction::random_complex(&st, o2, &mut rng).unwrap();
            let e = commutator_function(&st, &f, &h).unwrap();
            assert!(e.norm() <= 1e-11, "{name}: E = {e}");
        }
        assert!(n_touch >= 10, "{name}: only {n_touch} touching pairs");
    }
}

#[test]
fn timeslice_representative_lives_in_band_with_same_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, st) in configs(64, 16) {
        let lat = *st.lattice();
        let band = (28, 34);
        let t_ref = 40;
        for _ in 0..50 {
            let f = TestFunction::random_complex(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
            let g = timeslice_representative(&st, &f, band).unwrap();
            assert!(g.support().points().all(|(n, _)| (band.0..=band.1).contains(&n)), "{name}");
            let (qf, qg) = (to_quotient(&st, &f, t_ref).unwrap(), to_quotient(&st, &g, t_ref).unwrap());
            assert!(qf.sub(&qg).max_abs() <= 1e-12, "{name}: {:e}", qf.sub(&qg).max_abs());
        }
    }
}

#[test]
fn kinematic_subspace_of_thickened_base_equals_that_of_its_development() {
    for (name, st) in configs(64, 24) {
        let lat = *st.lattice();
        let base = Region::rect(&lat, 30..32, 12, 4);
        let dev = development(&st, &base).unwrap();
        assert!(base.is_subset(&dev) && dev.len() > 2 * base.len(), "{name}");
        let (k0, k1) = (kinematic_subspace(&st, &base, 20).unwrap(), kinematic_subspace(&st, &dev, 20).unwrap());
        assert_eq!(k0.dim(), k1.dim(), "{name}");
        let angle = linalg::max_principal_angle(&k0.basis, &k1.basis);
        assert!(angle <= 1e-6, "{name}: {angle:e}");
    }
}

#[test]
fn quotient_data_reproduce_the_commutator_pairing() {
    // σ(Q f, Q h) = E(f, h) on every family
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (name, st) in configs(N_T, N_X) {
        let lat = *st.lattice();
        for _ in 0..10 {
            let f = TestFunction::random_real(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
            let h = TestFunction::random_real(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
            let s = symplectic_form(&to_quotient(&st, &f, 20).unwrap(), &to_quotient(&st, &h, 20).unwrap()).unwrap();
            let e = commutator_function(&st, &f, &h).unwrap();
            assert!((s - e).norm() <= 1e-11 * (1.0 + e.norm()), "{name}: {s} vs {e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn commutator_function_is_bilinear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let st = flat(N_T, N_X, 1.0);
        let lat = *st.lattice();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f1 = TestFunction::random_complex(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
        let f2 = TestFunction::random_complex(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
        let h = TestFunction::random_complex(&st, &random_rect(&lat, &mut rng), &mut rng).unwrap();
        let lhs = commutator_function(&st, &f1.scale(c(a, 0.0)).add(&f2.scale(c(0.0, b))), &h).unwrap();
        let rhs = c(a, 0.0) * commutator_function(&st, &f1, &h).unwrap() + c(0.0, b) * commutator_function(&st, &f2, &h).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn evolution_round_trip_is_identity(seed in any::<u64>(), from in 5usize..40, to in 5usize..40) {
        let st = common::bumped(N_T, N_X, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi: Vec<f64> = (0..N_X).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pi: Vec<f64> = (0..N_X).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = CauchyData::from_real(&phi, &pi, from, st.dx());
        let back = evolve(&st, &evolve(&st, &d, to).unwrap(), from).unwrap();
        prop_assert!(back.sub(&d).max_abs() <= 1e-9);
    }

    #[test]
    fn evolution_preserves_the_symplectic_form(seed in any::<u64>(), to in 5usize..40) {
        let st = common::expanding(N_T, N_X, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = || {
            let phi: Vec<f64> = (0..N_X).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pi: Vec<f64> = (0..N_X).map(|_| rng.random_range(-1.0..1.0)).collect();
            CauchyData::from_real(&phi, &pi, 20, st.dx())
        };
        let (d1, d2) = (data(), data());
        let before = symplectic_form(&d1, &d2).unwrap();
        let after = symplectic_form(&evolve(&st, &d1, to).unwrap(), &evolve(&st, &d2, to).unwrap()).unwrap();
        prop_assert!((before - after).norm() <= 1e-11);
    }
}
