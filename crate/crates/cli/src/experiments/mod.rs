//! One function per subcommand, each producing a [`Report`].

mod deform;
mod dynamics;
mod field;
mod states;

use anyhow::Result;
use clap::ValueEnum;
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::report::Report;
use kglattice::geometry::{LatticeSpec, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Experiment {
    Green,
    Ccr,
    Causality,
    Timeslice,
    Rce,
    StressEnergy,
    Conserve,
    Dynloc,
    Vacuum,
    Qei,
    Deform,
    NoNaturalState,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Green => "green",
            Experiment::Ccr => "ccr",
            Experiment::Causality => "causality",
            Experiment::Timeslice => "timeslice",
            Experiment::Rce => "rce",
            Experiment::StressEnergy => "stress-energy",
            Experiment::Conserve => "conserve",
            Experiment::Dynloc => "dynloc",
            Experiment::Vacuum => "vacuum",
            Experiment::Qei => "qei",
            Experiment::Deform => "deform",
            Experiment::NoNaturalState => "no-natural-state",
        }
    }

    pub fn all() -> &'static [Experiment] {
        Experiment::value_variants()
    }
}

pub fn run(exp: Experiment, cfg: &ExperimentConfig) -> Result<Report> {
    match exp {
        Experiment::Green => field::green(cfg),
        Experiment::Ccr => field::ccr(cfg),
        Experiment::Causality => field::causality(cfg),
        Experiment::Timeslice => field::timeslice(cfg),
        Experiment::Rce => dynamics::rce(cfg),
        Experiment::StressEnergy => dynamics::stress_energy(cfg),
        Experiment::Conserve => dynamics::conserve(cfg),
        Experiment::Dynloc => dynamics::dynloc(cfg),
        Experiment::Vacuum => states::vacuum(cfg),
        Experiment::Qei => states::qei(cfg),
        Experiment::Deform => deform::deform(cfg),
        Experiment::NoNaturalState => deform::no_natural_state(cfg),
    }
}

/// Random rectangle of at most 5 × 5 interior cells within `rows`.
pub(crate) fn random_rect<R: Rng + ?Sized>(lat: &LatticeSpec, rows: std::ops::Range<usize>, rng: &mut R) -> Region {
    let h = rng.random_range(1..6usize).min(rows.len());
    let n0 = rng.random_range(rows.start..=rows.end - h);
    let j0 = rng.random_range(0..lat.n_x);
    Region::rect(lat, n0..n0 + h, j0, rng.random_range(0..3usize))
}

pub(crate) fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
