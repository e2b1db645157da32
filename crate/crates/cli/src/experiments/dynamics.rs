use anyhow::{ensure, Result};
use kglattice::algebra::kinematic_subspace;
use kglattice::dynamics::{self as dynm, FixedSubspaceOptions};
use kglattice::field::{cauchy_data, commutator_solution, evolve, to_quotient, TestFunction};
use kglattice::geometry::*;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{orders, random_rect};
use crate::config::ExperimentConfig;
use crate::report::{num, Check, Report, Table};

/// Rows of `h`'s support.
fn support_rows(h: &MetricPerturbation) -> Result<(usize, usize)> {
    h.support().row_span().ok_or_else(|| anyhow::anyhow!("the perturbation vanishes on the lattice"))
}

/// Rows strictly above the influence of `h` that may carry sources.
fn rows_above(lat: &LatticeSpec, h: &MetricPerturbation) -> Result<std::ops::Range<usize>> {
    let (_, hi) = support_rows(h)?;
    let (lo, top) = (hi + 3, (hi + 16).min(lat.n_t - lat.n_pad - 12));
    ensure!(lo < top, "no room above the perturbation for test functions");
    Ok(lo..top)
}

/// A diamond of radius ≤ 2 in the causal complement of `supp h`.
fn disjoint_diamond(st: &Spacetime, h: &MetricPerturbation) -> Result<Option<Region>> {
    let lat = *st.lattice();
    let comp = causal_complement(st, h.support())?;
    for radius in [2usize, 1] {
        for n in lat.interior_rows().skip(radius) {
            for j in 0..lat.n_x {
                let d = Region::diamond(&lat, n, j, radius);
                if n + radius < lat.n_t - lat.n_pad && d.is_subset(&comp) {
                    return Ok(Some(d));
                }
            }
        }
    }
    Ok(None)
}

/// Properties of the one-particle relative Cauchy evolution.
pub fn rce(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let lat = *st.lattice();
    let h = cfg.perturbation()?;
    let t_ref = cfg.run.t_ref;
    let dim = 2 * lat.n_x;

    let zero = dynm::rce(&st, &MetricPerturbation::zero(&lat), t_ref)?;
    rep.check(Check::holds("rce of zero perturbation is the identity", zero.matrix == DMatrix::identity(dim, dim)));

    let map = dynm::rce(&st, &h, t_ref)?;
    rep.check(Check::at_most("symplecticity", map.symplectic_defect, 1e-10, scale));
    rep.notes.push(format!("identity defect of rce[h]: {:.3e}", map.identity_defect()));

    let mut surfaces = Table::new("surfaces", &["sigma_plus", "max_difference"]);
    let mut worst = 0.0f64;
    for shift in [0usize, 3, 9] {
        let plus = map.sigma_plus + shift;
        if plus + 2 > lat.n_t - lat.n_pad {
            continue;
        }
        let d = (&dynm::rce_with_surface(&st, &h, t_ref, plus)?.matrix - &map.matrix).amax();
        worst = worst.max(d);
        surfaces.push(vec![plus.to_string(), num(d)]);
    }
    rep.check(Check::at_most("surface independence", worst, 1e-10, scale));
    rep.tables.push(surfaces);

    match disjoint_diamond(&st, &h)? {
        Some(o) => {
            let kin = kinematic_subspace(&st, &o, t_ref)?;
            let moved = ((&map.matrix - DMatrix::identity(dim, dim)) * &kin.basis).amax();
            rep.check(Check::at_most("locality on causally disjoint data", moved, 1e-11, scale));
        }
        None => rep.check(Check::holds("causally disjoint region available for locality", false)),
    }

    // four-map oracle
    let sh = perturb(&st, &h)?;
    let above = rows_above(&lat, &h)?;
    let (lo, _) = support_rows(&h)?;
    let top = lat.n_t - lat.n_pad - 3;
    let below = lo.saturating_sub(3).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut table = Table::new("four_map", &["sample", "difference", "norm"]);
    let mut worst = 0.0f64;
    for s in 0..cfg.samples_or(10) {
        let f = TestFunction::random_real(&st, &random_rect(&lat, above.clone(), &mut rng), &mut rng)?;
        let direct = to_quotient(&st, &dynm::rce_testfunction(&st, &h, &f)?, t_ref)?;
        let data = cauchy_data(&st, &commutator_solution(&st, &f)?, top)?;
        let oracle = evolve(&st, &evolve(&sh, &data, below)?, t_ref)?;
        let d = direct.sub(&oracle).max_abs() / direct.max_abs().max(1.0);
        worst = worst.max(d);
        table.push(vec![s.to_string(), num(d), num(direct.norm())]);
    }
    rep.check(Check::at_most("four-map transport", worst, 1e-10, scale));
    rep.tables.push(table);
    Ok(rep)
}

/// Finite-difference derivative of `rce` against the stress-energy pairing.
pub fn stress_energy(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let lat = *st.lattice();
    let h = cfg.perturbation()?;
    let t_ref = cfg.run.t_ref;
    let s0 = cfg.perturbation.step;
    let above = rows_above(&lat, &h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut table = Table::new(
        "stress_energy",
        &["sample", "relative_error", "err_4s", "err_2s", "err_s", "order_1", "order_2"],
    );
    let (mut worst, mut min_order) = (0.0f64, f64::INFINITY);
    for s in 0..cfg.samples_or(3) {
        let f = TestFunction::random_real(&st, &random_rect(&lat, above.clone(), &mut rng), &mut rng)?;
        let exact = dynm::stress_energy_pairing(&st, &h, &f, t_ref)?;
        let rel = dynm::rce_derivative(&st, &h, &f, t_ref, s0)?.sub(&exact).norm() / exact.norm();
        let errs = [4.0 * s0, 2.0 * s0, s0]
            .iter()
            .map(|step| Ok(dynm::rce_central_difference(&st, &h, &f, t_ref, *step)?.sub(&exact).norm()))
            .collect::<Result<Vec<f64>>>()?;
        let ord = orders(&errs);
        worst = worst.max(rel);
        min_order = ord.iter().copied().fold(min_order, f64::min);
        table.push(vec![s.to_string(), num(rel), num(errs[0]), num(errs[1]), num(errs[2]), num(ord[0]), num(ord[1])]);
    }
    rep.check(Check::at_most("derivative vs stress-energy pairing (relative)", worst, 1e-6, scale));
    rep.check(Check::at_least("order in the amplitude", min_order, 1.8));
    rep.tables.push(table);
    Ok(rep)
}

/// Gradient of `ψ = p(t) sin(2πx/L)` with a C⁵ polynomial bump `p` of radius `r` at `t0`.
fn gradient_field(lat: &LatticeSpec, t0: f64, r: f64, amp: f64) -> VectorField {
    let k = 2.0 * std::f64::consts::PI / lat.circumference();
    let p = |t: f64| (1.0 - ((t - t0) / r).powi(2)).max(0.0).powi(6);
    let dp = |t: f64| {
        let u = (t - t0) / r;
        if u.abs() >= 1.0 {
            0.0
        } else {
            -12.0 * u / r * (1.0 - u * u).powi(5)
        }
    };
    VectorField::from_fn(lat, |t, x| (amp * dp(t) * (k * x).sin(), amp * p(t) * k * (k * x).cos()))
}

/// Stress-energy pairing with Lie-derivative perturbations under refinement.
pub fn conserve(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let base = cfg.lattice();
    let p = &cfg.perturbation;
    // the gauge field needs about eight cells of its radius on the coarsest grid
    let r = (1.5 * p.rt).max(8.0 * base.dx);
    let tf = p.t0 + r + 0.25 + 6.0 * base.dt;
    ensure!(tf + 0.25 < base.t(base.n_t - base.n_pad - 2), "window too short above the gauge field");
    let mut table = Table::new("conservation", &["level", "dx", "residual", "scale", "relative", "max_off_diagonal", "order"]);
    let mut rel = Vec::new();
    for level in 0..=cfg.run.refine {
        let k = 1usize << level;
        let lat = LatticeSpec::new(base.n_t * k, base.n_x * k, base.dx / k as f64);
        let st = match cfg.metric.family {
            crate::config::MetricFamily::Cosmological => {
                let m = &cfg.metric;
                Spacetime::cosmological(lat, cfg.kg()?, m.a0, m.a1, m.t_start, m.t_end)?
            }
            _ => Spacetime::flat(lat, cfg.kg()?)?,
        };
        let lie = lie_perturbation(&st, &gradient_field(&lat, p.t0, r, 0.2))?;
        let f = TestFunction::bump(&st, tf, p.x0, 0.25, 0.4)?;
        let c = dynm::conservation_check(&st, &lie, &f, cfg.run.t_ref * k)?;
        rel.push(c.relative);
        let order = orders(&rel).last().copied();
        table.push(vec![
            level.to_string(),
            num(lat.dx),
            num(c.residual),
            num(c.scale),
            num(c.relative),
            num(c.max_off_diagonal),
            order.map(num).unwrap_or_default(),
        ]);
    }
    let finest = *rel.last().unwrap();
    rep.check(Check::at_most("conservation (relative, finest grid)", finest, 1e-6, scale));
    if rel.len() > 1 {
        let min_order = orders(&rel).into_iter().fold(f64::INFINITY, f64::min);
        rep.check(Check::at_least("residual convergence order", min_order, 1.8));
    }
    rep.notes.push(
        "the lattice scheme is not diffeomorphism invariant; the residual is a discretisation error of second order".into(),
    );
    rep.tables.push(table);
    Ok(rep)
}

/// Fixed subspace of sampled relative Cauchy evolutions against the
/// kinematic subspace of a diamond.
pub fn dynloc(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let lat = *st.lattice();
    let r = &cfg.region;
    let o = Region::diamond(&lat, r.row, r.col, r.radius);
    let opts = FixedSubspaceOptions {
        n_samples: r.n_perturbations,
        seed: cfg.run.seed,
        t_ref: cfg.run.t_ref,
        ..Default::default()
    };
    let out = dynm::dynamical_vs_kinematic(&st, &o, &opts, r.angle_tol)?;
    let mut dims = Table::new("fixed_dimension", &["samples", "dim_fixed", "dim_kinematic"]);
    for (k, d) in out.dims_vs_samples.iter().enumerate() {
        dims.push(vec![(k + 1).to_string(), d.to_string(), out.dim_kinematic.to_string()]);
    }
    let mut angles = Table::new("principal_angles", &["index", "angle"]);
    for (k, a) in out.principal_angles.iter().enumerate() {
        angles.push(vec![k.to_string(), num(*a)]);
    }
    rep.notes.push(format!("verdict: {}", out.verdict));
    let massless = cfg.field.m_sq == 0.0 && cfg.field.xi == 0.0;
    if massless {
        let surplus = out.dim_fixed as f64 - out.dim_kinematic as f64;
        rep.check(Check::at_least("massless fixed-subspace surplus", surplus, 1.0));
    } else {
        rep.check(Check::holds("fixed and kinematic dimensions equal", out.dim_fixed == out.dim_kinematic));
        rep.check(Check::at_most("largest principal angle", out.max_angle, r.angle_tol, scale));
    }
    rep.tables.push(dims);
    rep.tables.push(angles);
    Ok(rep)
}
