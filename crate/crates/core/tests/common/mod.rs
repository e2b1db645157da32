#![allow(dead_code)]

use kglattice::geometry::{perturb, BumpSpec, KgParams, LatticeSpec, MetricPerturbation, Region, Spacetime};
use rand::Rng;

pub fn flat(n_t: usize, n_x: usize, m_sq: f64) -> Spacetime {
    Spacetime::flat(LatticeSpec::new(n_t, n_x, 0.1), KgParams::massive(m_sq)).unwrap()
}

/// Flat spacetime with a smooth bump in both metric functions at the window centre.
pub fn bumped(n_t: usize, n_x: usize, m_sq: f64) -> Spacetime {
    let st = flat(n_t, n_x, m_sq);
    let lat = *st.lattice();
    let spec = BumpSpec {
        t0: lat.t(n_t / 2),
        x0: 0.5 * lat.circumference(),
        rt: 0.25 * lat.t(n_t),
        rx: 0.3 * lat.circumference(),
        amp_beta: 0.1,
        amp_a: -0.05,
    };
    perturb(&st, &MetricPerturbation::bump(&lat, &spec).unwrap()).unwrap()
}

pub fn expanding(n_t: usize, n_x: usize, m_sq: f64) -> Spacetime {
    let lat = LatticeSpec::new(n_t, n_x, 0.1);
    Spacetime::cosmological(lat, KgParams::new(m_sq, 0.2).unwrap(), 1.0, 1.4, lat.t(n_t / 4), lat.t(3 * n_t / 4)).unwrap()
}

/// The three metric families used by the axiom and causality suites.
pub fn configs(n_t: usize, n_x: usize) -> Vec<(&'static str, Spacetime)> {
    vec![
        ("flat", flat(n_t, n_x, 1.0)),
        ("bump", bumped(n_t, n_x, 1.0)),
        ("cosmological", expanding(n_t, n_x, 1.0)),
    ]
}

/// Random rectangle of interior cells.
pub fn random_rect<R: Rng + ?Sized>(lat: &LatticeSpec, rng: &mut R) -> Region {
    let rows = lat.interior_rows();
    let h = rng.random_range(1..6usize);
    let n0 = rng.random_range(rows.start..rows.end - h);
    let j0 = rng.random_range(0..lat.n_x);
    Region::rect(lat, n0..n0 + h, j0, rng.random_range(0..3usize))
}
