use anyhow::Result;
use kglattice::deformation::{interpolate, sample_disjoint_pairs, transport_state, verify_causality_rigidity, CauchyChain};
use kglattice::geometry::perturb;
use kglattice::states::ultrastatic_vacuum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::report::{num, Check, Report, Table};

/// Interpolating chain from flat space to the deformed spacetime, and the
/// commutator check on disjoint regions before and after deformation.
pub fn deform(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let (m, n) = (cfg.flat()?, cfg.deformed()?);
    let band = (cfg.region.band_lo, cfg.region.band_hi);
    let chain = interpolate(&m, &n, band, cfg.run.t_ref)?;
    rep.check(Check::at_most("chain map symplecticity", chain.symplectic_defect, 1e-10, scale));
    let below = chain.i.agrees_with(0..chain.sigma_p + 2, &m, 0, 0.0);
    let above = chain.i.agrees_with(chain.sigma_f - 1..m.n_t(), &n, 0, 0.0);
    rep.check(Check::holds("intermediate agrees with both ends on their bands", below && above));
    let mut links = Table::new("chain", &["from", "to", "first_row", "last_row"]);
    for l in &chain.links {
        links.push(vec![l.from.into(), l.to.into(), l.rows.start.to_string(), (l.rows.end - 1).to_string()]);
    }
    rep.tables.push(links);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let pairs = sample_disjoint_pairs(&m, cfg.samples_or(20), &mut rng)?;
    let rig = verify_causality_rigidity(&m, &n, &pairs)?;
    let mut table = Table::new("rigidity", &["pair", "relation", "residual_flat", "residual_deformed", "pass"]);
    for (k, p) in rig.pairs.iter().enumerate() {
        table.push(vec![
            k.to_string(),
            format!("{:?}", p.relation).to_lowercase(),
            num(p.residual_ultrastatic),
            num(p.residual_deformed),
            p.pass.to_string(),
        ]);
    }
    rep.check(Check::holds("rigidity report all pass", rig.all_pass));
    rep.tables.push(table);
    Ok(rep)
}

/// Vacuum transport along a trivial chain and along a chain through a
/// curvature bump.
pub fn no_natural_state(cfg: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::default();
    let scale = cfg.run.tol_scale;
    let m = cfg.flat()?;
    let t_ref = cfg.run.t_ref;
    let vac = ultrastatic_vacuum(&m, t_ref)?;
    let h = cfg.perturbation()?;
    let (lo, hi) = h.support().row_span().ok_or_else(|| anyhow::anyhow!("the perturbation vanishes on the lattice"))?;
    anyhow::ensure!(lo >= 4, "perturbation starts too early for a past band");

    let trivial = interpolate(&m, &m, (lo, hi), t_ref)?;
    let bumped = CauchyChain::through(m.clone(), perturb(&m, &h)?, m.clone(), lo - 3, hi + 3, t_ref)?;
    let mut table = Table::new(
        "transport",
        &["chain", "particle_number", "ccr_defect", "min_eigenvalue", "hadamard_growth", "hadamard_compatible"],
    );
    let mut numbers = Vec::new();
    for (name, chain) in [("trivial", &trivial), ("bump", &bumped)] {
        let out = transport_state(chain, &vac, None)?;
        let n = out.particle_number.unwrap_or(f64::NAN);
        let had = out.hadamard.as_ref();
        table.push(vec![
            name.into(),
            num(n),
            num(out.ccr_defect),
            num(out.min_eigenvalue),
            had.map(|h| num(h.growth)).unwrap_or_default(),
            had.map(|h| h.compatible.to_string()).unwrap_or_default(),
        ]);
        numbers.push((n, out));
    }
    let (n_trivial, _) = &numbers[0];
    let (n_bump, out) = &numbers[1];
    rep.check(Check::at_most("trivial chain particle number", n_trivial.abs(), 1e-10, scale));
    rep.check(Check::at_least("bump chain particle number", *n_bump, 1e-6));
    rep.check(Check::at_most("transported state CCR defect", out.ccr_defect, 1e-10, scale));
    rep.check(Check::at_least("transported state positivity", out.min_eigenvalue, -1e-10 * scale));
    rep.tables.push(table);
    Ok(rep)
}
