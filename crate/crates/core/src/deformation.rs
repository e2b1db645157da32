//! Cauchy chains between spacetimes sharing a spatial lattice, state
//! transport along them, and commutator checks under deformation.
//!
//! A chain `M ← P → I ← F → N` is realised by an interpolating spacetime `I`
//! that agrees with `M` on the rows of `P` (below the band) and with `N` on the
//! rows of `F` (above the band). Its one-particle map sends data on `M` at
//! `t_ref` to data on `N` at `t_ref`.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::symplectic_defect;
use crate::error::{Error, Result};
use crate::field::{commutator_real, evolve_real};
use crate::geometry::{
    causal_relation, cauchy_development, smoothstep, CausalRelation, Grid, Region, Spacetime,
};
use crate::linalg;
use crate::states::{hadamard_difference, particle_number, ultrastatic_vacuum, HadamardReport, ProbeFamily, QuasifreeState};

/// Rows shared by two members of a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandIdentification {
    pub from: &'static str,
    pub to: &'static str,
    pub rows: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct CauchyChain {
    pub m: Spacetime,
    pub i: Spacetime,
    pub n: Spacetime,
    /// Surface of `P` where data passes from `M` to `I`.
    pub sigma_p: usize,
    /// Surface of `F` where data passes from `I` to `N`.
    pub sigma_f: usize,
    pub t_ref: usize,
    pub links: Vec<BandIdentification>,
    /// Data on `M` at `t_ref` to data on `N` at `t_ref`.
    pub composite: DMatrix<f64>,
    pub symplectic_defect: f64,
}

fn evolution_matrix(st: &Spacetime, from: usize, to: usize) -> DMatrix<f64> {
    let dim = 2 * st.n_x();
    let cols: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            evolve_real(st, &e, from, to)
        })
        .collect();
    linalg::from_columns(dim, &cols)
}

fn same_lattice(a: &Spacetime, b: &Spacetime) -> Result<()> {
    let (la, lb) = (a.lattice(), b.lattice());
    if la.n_t != lb.n_t || la.n_x != lb.n_x || la.dx != lb.dx || la.dt != lb.dt || la.n_pad != lb.n_pad {
        return Err(Error::InvalidSpacetime("chain members must share the lattice".into()));
    }
    if a.kg() != b.kg() {
        return Err(Error::InvalidSpacetime("chain members must share field parameters".into()));
    }
    Ok(())
}

impl CauchyChain {
    /// Chain through a given intermediate spacetime. `I` must agree with `M`
    /// on rows `0 ..= sigma_p + 1` and with `N` on rows `sigma_f − 1 ..`.
    pub fn through(m: Spacetime, i: Spacetime, n: Spacetime, sigma_p: usize, sigma_f: usize, t_ref: usize) -> Result<Self> {
        same_lattice(&m, &i)?;
        same_lattice(&i, &n)?;
        let n_t = m.n_t();
        for s in [sigma_p, sigma_f, t_ref] {
            if s + 2 >= n_t {
                return Err(Error::SurfaceOutOfRange { surface: s, n_t });
            }
        }
        if sigma_p + 2 > sigma_f {
            return Err(Error::BandTooThin(sigma_f.saturating_sub(sigma_p)));
        }
        let past = 0..sigma_p + 2;
        let future = sigma_f - 1..n_t;
        if !i.agrees_with(past.clone(), &m, 0, 0.0) {
            return Err(Error::InvalidSpacetime("intermediate spacetime differs from M below the band".into()));
        }
        if !i.agrees_with(future.clone(), &n, 0, 0.0) {
            return Err(Error::InvalidSpacetime("intermediate spacetime differs from N above the band".into()));
        }
        let composite = evolution_matrix(&n, sigma_f, t_ref) * evolution_matrix(&i, sigma_p, sigma_f) * evolution_matrix(&m, t_ref, sigma_p);
        let defect = symplectic_defect(&composite);
        if defect > 1e-9 {
            return Err(Error::NotSymplectic(defect));
        }
        let links = vec![
            BandIdentification { from: "P", to: "M", rows: past.clone() },
            BandIdentification { from: "P", to: "I", rows: past },
            BandIdentification { from: "F", to: "I", rows: future.clone() },
            BandIdentification { from: "F", to: "N", rows: future },
        ];
        Ok(CauchyChain { m, i, n, sigma_p, sigma_f, t_ref, links, composite, symplectic_defect: defect })
    }

    pub fn identity_defect(&self) -> f64 {
        let d = self.composite.nrows();
        linalg::max_abs(&(&self.composite - DMatrix::identity(d, d)))
    }
}

/// Static in time on the given rows, within rounding.
fn static_on(st: &Spacetime, rows: Range<usize>) -> bool {
    let r0 = rows.start;
    rows.clone().all(|n| {
        st.beta().row(n).iter().zip(st.beta().row(r0)).all(|(a, b)| (a - b).abs() <= 1e-12)
            && st.a().row(n).iter().zip(st.a().row(r0)).all(|(a, b)| (a - b).abs() <= 1e-12)
    })
}

/// Interpolating spacetime equal to `m_from` below `band` and to `m_to` above,
/// with a smoothstep blend of `β` and `a` across the band.
pub fn interpolate(m_from: &Spacetime, m_to: &Spacetime, band: (usize, usize), t_ref: usize) -> Result<CauchyChain> {
    same_lattice(m_from, m_to)?;
    let lat = *m_from.lattice();
    let (b0, b1) = band;
    if b0 < 2 || b1 < b0 + 2 || b1 + 3 >= lat.n_t {
        return Err(Error::BandTooThin(b1.saturating_sub(b0)));
    }
    let edge = lat.n_pad + 2;
    if !static_on(m_from, 0..edge.min(b0)) || !static_on(m_to, lat.n_t - edge.min(lat.n_t - b1)..lat.n_t) {
        return Err(Error::InvalidSpacetime("metrics must be static near their window edges".into()));
    }
    let blend = |g0: &Grid<f64>, g1: &Grid<f64>| {
        Grid::from_fn(lat.n_t, lat.n_x, |n, j| {
            let s = smoothstep((n as f64 - b0 as f64) / (b1 - b0) as f64);
            (1.0 - s) * g0[(n, j)] + s * g1[(n, j)]
        })
    };
    let beta = blend(m_from.beta(), m_to.beta());
    let a = blend(m_from.a(), m_to.a());
    let i = Spacetime::new(lat, *m_from.kg(), beta, a).map_err(|e| match e {
        Error::InvalidSpacetime(msg) if msg.contains("CFL") => {
            Error::CflViolated(format!("{msg}; widen the band beyond {b0}..{b1} or refine dt"))
        }
        other => other,
    })?;
    CauchyChain::through(m_from.clone(), i, m_to.clone(), b0 - 2, b1 + 2, t_ref)
}

#[derive(Debug, Clone)]
pub struct TransportReport {
    pub state: QuasifreeState,
    pub ccr_defect: f64,
    pub min_eigenvalue: f64,
    /// Against `M`'s own vacuum, when `M` is ultrastatic.
    pub hadamard: Option<HadamardReport>,
    pub particle_number: Option<f64>,
}

/// Pullback of a state on `N` to `M` along the chain.
pub fn transport_state(chain: &CauchyChain, state: &QuasifreeState, probes: Option<&ProbeFamily>) -> Result<TransportReport> {
    let on_ref = if state.surface() == chain.t_ref { state.clone() } else { state.on_surface(&chain.n, chain.t_ref)? };
    let pulled = on_ref.pullback(&chain.composite, chain.t_ref)?;
    let (mut hadamard, mut number) = (None, None);
    if chain.m.is_ultrastatic() {
        let vac = ultrastatic_vacuum(&chain.m, chain.t_ref)?;
        number = Some(particle_number(&vac, &pulled)?);
        let lat = chain.m.lattice();
        let default = ProbeFamily::null_pair(&chain.m, lat.t(lat.n_t / 2), 0.5 * lat.circumference(), 4.0 * lat.dx);
        hadamard = Some(hadamard_difference(&chain.m, &pulled, &vac, probes.unwrap_or(&default))?);
    }
    Ok(TransportReport {
        ccr_defect: pulled.ccr_defect(),
        min_eigenvalue: pulled.min_eigenvalue(),
        state: pulled,
        hadamard,
        particle_number: number,
    })
}

/// Largest `|E(δ_p, δ_q)|` over interior cells `p ∈ o1`, `q ∈ o2`.
pub fn max_commutator(st: &Spacetime, o1: &Region, o2: &Region) -> f64 {
    let lat = st.lattice();
    let rows = lat.interior_rows();
    let n_x = lat.n_x;
    let src: Vec<(usize, usize)> = o2.points().filter(|(n, _)| rows.contains(n)).collect();
    let tgt: Vec<(usize, usize)> = o1.points().filter(|(n, _)| rows.contains(n)).collect();
    src.par_iter()
        .map(|&(n, j)| {
            let mut f = vec![0.0; lat.n_t * n_x];
            f[n * n_x + j] = 1.0;
            let u = commutator_real(st, &f);
            tgt.iter().fold(0.0f64, |m, &(a, b)| m.max((st.volume(a, b) * u[a * n_x + b]).abs()))
        })
        .reduce(|| 0.0, f64::max)
}

/// Union of the Cauchy developments of the rows of `o`.
pub fn development(st: &Spacetime, o: &Region) -> Result<Region> {
    let (lo, hi) = o.row_span().ok_or(Error::EmptyRegion)?;
    let lat = st.lattice();
    let mut out = Region::empty(lat);
    for n in lo..=hi {
        let row = o.restrict_rows(n..n + 1);
        if !row.is_empty() {
            out = out.union(&cauchy_development(st, &row)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResidual {
    pub relation: CausalRelation,
    pub mapped_relation: CausalRelation,
    pub residual_ultrastatic: f64,
    pub residual_deformed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidityReport {
    pub pairs: Vec<PairResidual>,
    pub all_pass: bool,
}

/// Commutator vanishing for causally disjoint pairs on the undeformed
/// spacetime and for their developments on the deformed one.
pub fn verify_causality_rigidity(
    m_ultra: &Spacetime,
    m_deformed: &Spacetime,
    pairs: &[(Region, Region)],
) -> Result<RigidityReport> {
    same_lattice(m_ultra, m_deformed)?;
    for (o1, o2) in pairs {
        if causal_relation(m_ultra, o1, o2)? == CausalRelation::Related {
            return Err(Error::NotCausallyDisjoint);
        }
    }
    let out = pairs
        .par_iter()
        .map(|(o1, o2)| -> Result<PairResidual> {
            let relation = causal_relation(m_ultra, o1, o2)?;
            let r0 = max_commutator(m_ultra, o1, o2);
            let (d1, d2) = (development(m_deformed, o1)?, development(m_deformed, o2)?);
            let mapped_relation = causal_relation(m_deformed, &d1, &d2)?;
            let r1 = max_commutator(m_deformed, &d1, &d2);
            let pass = r0 <= 1e-11 && r1 <= 1e-10 && mapped_relation != CausalRelation::Related;
            Ok(PairResidual { relation, mapped_relation, residual_ultrastatic: r0, residual_deformed: r1, pass })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_pass = out.iter().all(|p| p.pass);
    Ok(RigidityReport { pairs: out, all_pass })
}

/// Random diamond pairs that are causally disjoint or touch at the boundary;
/// roughly every third pair is placed to touch.
pub fn sample_disjoint_pairs<R: Rng + ?Sized>(st: &Spacetime, count: usize, rng: &mut R) -> Result<Vec<(Region, Region)>> {
    let lat = st.lattice();
    let lo = lat.n_pad + 4;
    let hi = lat.n_t - lat.n_pad - 4;
    if hi <= lo + 2 {
        return Err(Error::InvalidSpacetime("window too short for region sampling".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 200 * count.max(1) {
            return Err(Error::InvalidSpacetime("could not sample disjoint pairs".into()));
        }
        let r1 = rng.random_range(0..3usize);
        let r2 = rng.random_range(0..3usize);
        let n1 = rng.random_range(lo + r1..hi - r1);
        let n2 = rng.random_range(lo + r2..hi - r2);
        let j1 = rng.random_range(0..lat.n_x);
        let want_touch = out.len() % 3 == 0;
        let gap = if want_touch { rng.random_range(0..2usize) } else { rng.random_range(1..lat.n_x / 2) };
        let sep = n1.abs_diff(n2) + r1 + r2 + gap;
        if sep >= lat.n_x / 2 {
            continue;
        }
        let j2 = (j1 + sep) % lat.n_x;
        let o1 = Region::diamond(lat, n1, j1, r1);
        let o2 = Region::diamond(lat, n2, j2, r2);
        let rel = causal_relation(st, &o1, &o2)?;
        let ok = match rel {
            CausalRelation::Touching => want_touch,
            CausalRelation::Disjoint => !want_touch,
            CausalRelation::Related => false,
        };
        if ok {
            out.push((o1, o2));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{KgParams, LatticeSpec};

    #[test]
    fn equal_endpoints_give_identity() {
        let st = Spacetime::flat(LatticeSpec::new(64, 12, 0.1), KgParams::massive(1.0)).unwrap();
        let chain = interpolate(&st, &st, (20, 40), 10).unwrap();
        assert!(chain.identity_defect() <= 1e-12, "{}", chain.identity_defect());
    }

    #[test]
    fn thin_band_is_rejected() {
        let st = Spacetime::flat(LatticeSpec::new(64, 12, 0.1), KgParams::massive(1.0)).unwrap();
        assert!(matches!(interpolate(&st, &st, (20, 21), 10), Err(Error::BandTooThin(_))));
    }
}
