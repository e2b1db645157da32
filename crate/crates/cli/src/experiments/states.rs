use anyhow::{ensure, Result};
use kglattice::algebra::{Algebra, AlgebraElement, OneParticleBasis};
use kglattice::geometry::Worldline;
use kglattice::states::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::report::{num, Check, Report, Table};

/// Sum over perfect matchings, enumerated as permutations listed in
/// canonical order (`p₀ < p₁`, `p₂ < p₃`, …, and `p₀ < p₂ < …`).
fn pairing_sum(pair: &dyn Fn(usize, usize) -> Complex64, n: usize) -> Complex64 {
    fn perms(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            cur.push(v);
            perms(rest, cur, out);
            cur.pop();
            rest.insert(i, v);
        }
    }
    if n % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    let mut all = Vec::new();
    perms(&mut (0..n).collect(), &mut Vec::new(), &mut all);
    all.iter()
        .filter(|p| (0..n / 2).all(|k| p[2 * k] < p[2 * k + 1]) && (1..n / 2).all(|k| p[2 * k - 2] < p[2 * k]))
        .map(|p| (0..n / 2).map(|k| pair(p[2 * k], p[2 * k + 1])).product::<Complex64>())
        .sum()
}

fn random_c<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Positivity, pairing structure and one-particle energies of Gaussian states.
pub fn vacuum(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let t_ref = cfg.run.t_ref;
    let modes = ModeBasis::new(&st, t_ref)?;
    let vac = modes.vacuum_state()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);

    let mut squeezed_covs = modes.vacuum_covariances();
    let k1 = 1.min(modes.len() - 1);
    squeezed_covs[k1] = squeezed(&squeezed_covs[k1], 1.2, 0.5);
    let mut warm = modes.vacuum_covariances();
    warm.iter_mut().for_each(|g| *g *= 1.5);
    let states = [("vacuum", vac.clone()), ("squeezed", modes.state(&squeezed_covs)?), ("warm", modes.state(&warm)?)];

    let alg = Algebra::new(OneParticleBasis::new(&st, t_ref)?);
    let dim = alg.basis().dim() as u32;
    let mut positivity = Table::new("positivity", &["state", "sample", "re", "im"]);
    let (mut min_re, mut max_im) = (f64::INFINITY, 0.0f64);
    for (name, s) in &states {
        for k in 0..cfg.samples_or(100) {
            let mut a = AlgebraElement::scalar(random_c(&mut rng));
            for _ in 0..4 {
                let deg = rng.random_range(1..=3);
                let mut word: Vec<u32> = (0..deg).map(|_| rng.random_range(0..dim)).collect();
                word.sort();
                a = a.add(&AlgebraElement::monomial(&word, random_c(&mut rng))?);
            }
            let v = expectation(s, &alg.mul(&alg.adjoint(&a), &a)?);
            min_re = min_re.min(v.re);
            max_im = max_im.max(v.im.abs() / (1.0 + v.re.abs()));
            positivity.push(vec![name.to_string(), k.to_string(), num(v.re), num(v.im)]);
        }
    }
    rep.check(Check::at_least("min omega(A*A)", min_re, -1e-9 * scale));
    rep.check(Check::at_most("imaginary part of omega(A*A)", max_im, 1e-9, scale));
    rep.tables.push(positivity);

    let mut npt = Table::new("n_point", &["state", "n", "re", "im", "oracle_re", "oracle_im", "error"]);
    let mut worst = 0.0f64;
    for (name, s) in &states {
        for n in 1..=6 {
            let qs: Vec<Vec<Complex64>> = (0..n).map(|_| (0..dim).map(|_| random_c(&mut rng)).collect()).collect();
            let got = n_point_data(s, &qs)?;
            let want = pairing_sum(&|a, b| s.two_point(&qs[a], &qs[b]), n);
            let err = (got - want).norm() / (1.0 + want.norm());
            worst = worst.max(err);
            npt.push(vec![name.to_string(), n.to_string(), num(got.re), num(got.im), num(want.re), num(want.im), num(err)]);
        }
    }
    rep.check(Check::at_most("n-point vs pairing oracle", worst, 1e-11, scale));
    rep.tables.push(npt);

    // one quantum in a resolved mode: the lattice time step shifts energies by O((ω dt)²)
    let mut one = Table::new("one_particle", &["mode", "omega", "energy", "relative_error"]);
    let mut worst = 0.0f64;
    let resolved: Vec<usize> = (0..modes.len()).filter(|k| modes.frequency(*k) * st.dt() < 0.35).take(6).collect();
    ensure!(!resolved.is_empty(), "no mode with omega * dt < 0.35 on this grid");
    for &k in &resolved {
        let mut covs = modes.vacuum_covariances();
        covs[k] *= 3.0;
        let e = total_energy(&st, &modes.state(&covs)?, &vac)?;
        let w = modes.frequency(k);
        let rel = (e - w).abs() / w;
        worst = worst.max(rel);
        one.push(vec![k.to_string(), num(w), num(e), num(rel)]);
    }
    rep.check(Check::at_most("one-particle energy vs omega_k", worst, 0.02, scale));
    rep.tables.push(one);
    Ok(rep)
}

/// Sampled energy densities of random Gaussian states against the QEI bound.
pub fn qei(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let st = cfg.spacetime()?;
    let t_ref = cfg.run.t_ref;
    let w = &cfg.worldline;
    let s = &cfg.sampling;
    let modes = ModeBasis::new(&st, t_ref)?;
    let gamma = Worldline::stationary(&st, w.col, w.row_start..w.row_end)?;
    let f = SamplingFunction::gaussian(&gamma, s.tau0, s.width)?;
    let mut family = random_gaussian_family(&modes, s.n_states, s.max_squeeze, cfg.run.seed)?;
    let bound = qei_bound(&st, &modes, &gamma, &f)?;
    family.push(modes.state(&bound.optimal)?);
    let out = qei_check(&st, &family, &gamma, &f, t_ref)?;
    let mut table = Table::new("qei", &["state", "averaged_energy", "bound"]);
    for (k, v) in out.values.iter().enumerate() {
        table.push(vec![k.to_string(), num(*v), num(out.bound)]);
    }
    let sampled = out.values.len() - 1;
    rep.check(Check::at_least("sampled Gaussian states", sampled as f64, 200.0));
    rep.check(Check::at_least("min averaged energy - bound", out.gap, -1e-8 * scale));
    rep.check(Check::holds("bound finite and negative", out.bound.is_finite() && out.bound < 0.0));
    let sampled_negative = out.values[..sampled].iter().filter(|v| **v < 0.0).count();
    rep.check(Check::at_least("sampled states with negative average", sampled_negative as f64, 1.0));
    if out.regulated {
        rep.notes.push("massless zero mode regulated".into());
    }
    rep.notes.push(format!("bound {:.6e}, attained by the last row", out.bound));
    rep.tables.push(table);
    Ok(rep)
}
