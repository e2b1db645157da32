use anyhow::{ensure, Result};
use kglattice::algebra::{kinematic_subspace, Algebra, AlgebraElement, OneParticleBasis};
use kglattice::deformation::{development, sample_disjoint_pairs, verify_causality_rigidity};
use kglattice::dynamics::apply_p_lattice;
use kglattice::field::*;
use kglattice::geometry::*;
use kglattice::linalg;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{orders, random_rect};
use crate::config::ExperimentConfig;
use crate::report::{num, Check, Report, Table};

fn simpson(n: usize, a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = g(a) + g(b);
    for k in 1..n {
        s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// d'Alembert: `½ ∫ f` over the future (`sign = 1`) or past (`sign = −1`)
/// light cone of `(t, x)` on the circle of length `l`, for the product bump
/// of radius `r` at `(t0, x0)`.
fn cone_integral(t: f64, x: f64, sign: f64, t0: f64, x0: f64, r: f64, l: f64) -> f64 {
    let (lo, hi) = if sign < 0.0 { (t - t0 - r, t - t0 + r) } else { (t0 - r - t, t0 + r - t) };
    let lo = lo.max(0.0);
    if hi <= lo {
        return 0.0;
    }
    let f = |tp: f64, xp: f64| {
        let mut sep = (xp - x0).rem_euclid(l);
        if sep > 0.5 * l {
            sep -= l;
        }
        smooth_bump((tp - t0) / r) * smooth_bump(sep / r)
    };
    // about 40 nodes across the bump's width in `s` at the largest `u`
    let s_nodes = 2 * ((20.0 * hi / r).ceil() as usize).max(200);
    0.5 * simpson(400, lo, hi, |u| u * simpson(s_nodes, -1.0, 1.0, |s| f(t + sign * u, x + s * u)))
}

/// Antisymmetry and support of the configured Green operators, plus a
/// refinement study of the flat massless commutator against d'Alembert.
pub fn green(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let lat = *st.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let (mut anti, mut leaks) = (0.0f64, 0usize);
    for _ in 0..cfg.samples_or(20) {
        let o = random_rect(&lat, lat.interior_rows(), &mut rng);
        let f = TestFunction::random_real(&st, &o, &mut rng)?;
        let h = TestFunction::random_real(&st, &random_rect(&lat, lat.interior_rows(), &mut rng), &mut rng)?;
        anti = anti.max((commutator_function(&st, &f, &h)? + commutator_function(&st, &h, &f)?).norm());
        let fut = causal_future(&st, &o)?.dilate();
        let u = green_retarded(&st, &f)?.re();
        leaks += (0..u.len()).filter(|&i| u[i] != 0.0 && !fut.contains(i / lat.n_x, i % lat.n_x)).count();
    }
    rep.check(Check::at_most("E antisymmetry", anti, 1e-12, scale));
    rep.check(Check::holds("retarded support inside dilated cone", leaks == 0));

    // refinement study
    let (t_len, l) = (lat.t(lat.n_t), lat.circumference());
    let r = 0.2 * t_len.min(l);
    let (t0, x0) = (0.5 * t_len, 0.45 * l);
    let coarse_rows: Vec<usize> = (1..8).map(|k| k * lat.n_t / 8).collect();
    let coarse_cols: Vec<usize> = (0..lat.n_x).step_by((lat.n_x / 12).max(1)).collect();
    let mut table = Table::new("convergence", &["level", "dx", "max_error", "order"]);
    let mut errors = Vec::new();
    for level in 0..=cfg.run.refine {
        let k = 1usize << level;
        let fine = LatticeSpec::new(lat.n_t * k, lat.n_x * k, lat.dx / k as f64);
        let st = Spacetime::flat(fine, KgParams::massless())?;
        let f = TestFunction::bump(&st, t0, x0, r, r)?;
        let u = commutator_solution(&st, &f)?.re();
        let mut err = 0.0f64;
        for &n in &coarse_rows {
            for &j in &coarse_cols {
                let (nn, jj) = (n * k, j * k);
                let (t, x) = (fine.t(nn), fine.x(jj));
                let exact = cone_integral(t, x, 1.0, t0, x0, r, l) - cone_integral(t, x, -1.0, t0, x0, r, l);
                err = err.max((u[nn * fine.n_x + jj] - exact).abs());
            }
        }
        errors.push(err);
        let order = orders(&errors).last().copied();
        table.push(vec![level.to_string(), num(fine.dx), num(err), order.map(num).unwrap_or_default()]);
    }
    let min_order = orders(&errors).into_iter().fold(f64::INFINITY, f64::min);
    if cfg.run.refine > 0 {
        rep.check(Check::at_least("observed order vs d'Alembert", min_order, 1.8));
    }
    rep.tables.push(table);
    Ok(rep)
}

/// Linearity, hermiticity, field equation and commutator of the generators.
pub fn ccr(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let lat = *st.lattice();
    let alg = Algebra::new(OneParticleBasis::new(&st, cfg.run.t_ref)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let inner = Region::slab(&lat, lat.n_pad + 1..lat.n_t - lat.n_pad - 1);
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let mut table = Table::new("ccr", &["sample", "linearity", "adjoint", "field_equation", "commutator"]);
    let (mut lin_max, mut adj_max, mut eqn_max, mut ccr_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in 0..cfg.samples_or(100) {
        let f = TestFunction::random_complex(&st, &random_rect(&lat, lat.interior_rows(), &mut rng), &mut rng)?;
        let h = TestFunction::random_complex(&st, &random_rect(&lat, lat.interior_rows(), &mut rng), &mut rng)?;
        let (a, b) = (c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)), c(rng.random_range(-2.0..2.0), 0.0));
        let (gf, gh) = (alg.gen(&st, &f)?, alg.gen(&st, &h)?);
        let lin = alg.gen(&st, &f.scale(a).add(&h.scale(b)))?.sub(&gf.scale(a)).sub(&gh.scale(b)).norm();
        let adj = alg.adjoint(&gf).sub(&alg.gen(&st, &f.conj())?).norm();
        let support = random_rect(&lat, inner_rows(&lat), &mut rng).intersection(&inner);
        let phi = TestFunction::random_real(&st, &support, &mut rng)?;
        let p_phi = Grid::from_vec(lat.n_t, lat.n_x, apply_p_lattice(&st, &phi.re()))?;
        let eqn = alg.gen(&st, &TestFunction::from_real(&st, &p_phi)?)?.norm();
        let e = commutator_function(&st, &f, &h)?;
        let comm = alg.commutator(&gf, &gh)?.sub(&AlgebraElement::scalar(c(0.0, 1.0) * e)).norm();
        table.push(vec![s.to_string(), num(lin), num(adj), num(eqn), num(comm)]);
        lin_max = lin_max.max(lin);
        adj_max = adj_max.max(adj);
        eqn_max = eqn_max.max(eqn);
        ccr_max = ccr_max.max(comm);
    }
    rep.check(Check::at_most("KG1 linearity", lin_max, 1e-12, scale));
    rep.check(Check::holds("KG2 adjoint exact", adj_max == 0.0));
    rep.check(Check::at_most("KG3 field equation", eqn_max, 1e-12, scale));
    rep.check(Check::at_most("KG4 commutator", ccr_max, 1e-11, scale));
    rep.tables.push(table);
    Ok(rep)
}

fn inner_rows(lat: &LatticeSpec) -> std::ops::Range<usize> {
    lat.n_pad + 1..lat.n_t - lat.n_pad - 1
}

/// Commutator function on causally disjoint and touching pairs, and the
/// rigidity report against the deformed spacetime.
pub fn causality(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let pairs = sample_disjoint_pairs(&st, cfg.samples_or(50), &mut rng)?;
    let mut table = Table::new("pairs", &["pair", "relation", "abs_E"]);
    let (mut worst, mut touching) = (0.0f64, 0usize);
    for (k, (o1, o2)) in pairs.iter().enumerate() {
        let rel = causal_relation(&st, o1, o2)?;
        touching += usize::from(rel == CausalRelation::Touching);
        let f = TestFunction::random_complex(&st, o1, &mut rng)?;
        let h = TestFunction::random_complex(&st, o2, &mut rng)?;
        let e = commutator_function(&st, &f, &h)?.norm();
        worst = worst.max(e);
        table.push(vec![k.to_string(), format!("{rel:?}").to_lowercase(), num(e)]);
    }
    rep.check(Check::at_most("E on disjoint pairs", worst, 1e-11, scale));
    rep.check(Check::at_least("touching pairs sampled", touching as f64, 1.0));
    rep.tables.push(table);

    let (ultra, deformed) = (cfg.flat()?, cfg.deformed()?);
    let pairs = sample_disjoint_pairs(&ultra, cfg.samples_or(50).min(20), &mut rng)?;
    let rig = verify_causality_rigidity(&ultra, &deformed, &pairs)?;
    let mut table = Table::new("rigidity", &["pair", "relation", "mapped_relation", "residual_flat", "residual_deformed", "pass"]);
    for (k, p) in rig.pairs.iter().enumerate() {
        table.push(vec![
            k.to_string(),
            format!("{:?}", p.relation).to_lowercase(),
            format!("{:?}", p.mapped_relation).to_lowercase(),
            num(p.residual_ultrastatic),
            num(p.residual_deformed),
            p.pass.to_string(),
        ]);
    }
    rep.check(Check::holds("rigidity report all pass", rig.all_pass));
    rep.tables.push(table);
    Ok(rep)
}

/// Band representatives and kinematic subspaces of Cauchy developments.
pub fn timeslice(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let lat = *st.lattice();
    let band = (cfg.region.band_lo, cfg.region.band_hi);
    ensure!(band.1 > band.0 + 1, "band_hi must exceed band_lo + 1");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut table = Table::new("timeslice", &["sample", "support_in_band", "quotient_difference"]);
    let (mut worst, mut outside) = (0.0f64, 0usize);
    for s in 0..cfg.samples_or(50) {
        let f = TestFunction::random_complex(&st, &random_rect(&lat, lat.interior_rows(), &mut rng), &mut rng)?;
        let g = timeslice_representative(&st, &f, band)?;
        let inside = g.support().points().all(|(n, _)| (band.0..=band.1).contains(&n));
        outside += usize::from(!inside);
        let d = to_quotient(&st, &f, cfg.run.t_ref)?.sub(&to_quotient(&st, &g, cfg.run.t_ref)?).max_abs();
        worst = worst.max(d);
        table.push(vec![s.to_string(), inside.to_string(), num(d)]);
    }
    rep.check(Check::holds("representatives supported in band", outside == 0));
    rep.check(Check::at_most("quotient data preserved", worst, 1e-12, scale));

    let r = &cfg.region;
    let base = Region::rect(&lat, r.row..r.row + 2, r.col, r.radius);
    let dev = development(&st, &base)?;
    let (k0, k1) = (kinematic_subspace(&st, &base, cfg.run.t_ref)?, kinematic_subspace(&st, &dev, cfg.run.t_ref)?);
    let angle = if k0.dim() == k1.dim() { linalg::max_principal_angle(&k0.basis, &k1.basis) } else { f64::INFINITY };
    rep.notes.push(format!("kinematic dimensions: base {}, development {}", k0.dim(), k1.dim()));
    rep.check(Check::at_most("kinematic subspace of development", angle, 1e-6, scale));
    rep.tables.push(table);
    Ok(rep)
}
