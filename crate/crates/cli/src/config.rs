//! Experiment configuration: TOML with one level of sections.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use kglattice::geometry::{perturb, BumpSpec, KgParams, LatticeSpec, MetricPerturbation, Spacetime};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub metric: MetricSection,
    pub field: FieldSection,
    pub run: RunSection,
    pub perturbation: PerturbationSection,
    pub region: RegionSection,
    pub worldline: WorldlineSection,
    pub sampling: SamplingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_t: usize,
    pub n_x: usize,
    pub dx: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n_t: 128, n_x: 32, dx: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricFamily {
    Flat,
    Bump,
    Cosmological,
}

/// Background metric. `bump` adds the `[perturbation]` bump to flat space;
/// `cosmological` has `β = 1` and `a(t)` rising from `a0` to `a1` over `t_start .. t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    pub family: MetricFamily,
    pub a0: f64,
    pub a1: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl Default for MetricSection {
    fn default() -> Self {
        MetricSection { family: MetricFamily::Flat, a0: 1.0, a1: 1.4, t_start: 1.6, t_end: 4.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub m_sq: f64,
    pub xi: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection { m_sq: 1.0, xi: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Random samples per suite; 0 selects the experiment's own default.
    pub samples: usize,
    pub t_ref: usize,
    pub refine: usize,
    pub tol_scale: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 42, samples: 0, t_ref: 64, refine: 3, tol_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSection {
    pub t0: f64,
    pub x0: f64,
    pub rt: f64,
    pub rx: f64,
    pub amp_beta: f64,
    pub amp_a: f64,
    /// Base step of the finite-difference derivative in the amplitude.
    pub step: f64,
}

impl Default for PerturbationSection {
    fn default() -> Self {
        PerturbationSection { t0: 1.6, x0: 1.6, rt: 0.4, rx: 0.4, amp_beta: 0.06, amp_a: -0.04, step: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    /// Diamond centre row and column, and its radius in lattice steps.
    pub row: usize,
    pub col: usize,
    pub radius: usize,
    /// Inclusive row band of the timeslice experiment.
    pub band_lo: usize,
    pub band_hi: usize,
    pub n_perturbations: usize,
    pub angle_tol: f64,
}

impl Default for RegionSection {
    fn default() -> Self {
        RegionSection { row: 64, col: 16, radius: 5, band_lo: 60, band_hi: 68, n_perturbations: 20, angle_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldlineSection {
    pub col: usize,
    pub row_start: usize,
    pub row_end: usize,
}

impl Default for WorldlineSection {
    fn default() -> Self {
        WorldlineSection { col: 3, row_start: 8, row_end: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    /// Centre and width of the Gaussian in proper time along the worldline.
    pub tau0: f64,
    pub width: f64,
    pub n_states: usize,
    pub max_squeeze: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection { tau0: 2.8, width: 0.3, n_states: 200, max_squeeze: 1.5 }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that the TOML schema cannot express.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        ensure!(g.n_t >= 32 && g.n_x >= 8, "grid needs n_t >= 32 and n_x >= 8, got {} x {}", g.n_t, g.n_x);
        ensure!(g.dx > 0.0 && g.dx.is_finite(), "grid.dx must be positive, got {}", g.dx);
        ensure!(self.run.t_ref < g.n_t, "run.t_ref = {} lies outside the {} rows", self.run.t_ref, g.n_t);
        ensure!(self.run.refine <= 5, "run.refine = {} exceeds 5", self.run.refine);
        ensure!(self.run.tol_scale > 0.0 && self.run.tol_scale.is_finite(), "run.tol_scale must be positive");
        let r = &self.region;
        ensure!(r.band_lo < r.band_hi && r.band_hi < g.n_t, "region band must satisfy band_lo < band_hi < n_t");
        ensure!(r.row < g.n_t && r.col < g.n_x, "region centre lies outside the grid");
        let w = &self.worldline;
        ensure!(w.row_start < w.row_end && w.row_end <= g.n_t && w.col < g.n_x, "worldline lies outside the grid");
        ensure!(self.sampling.width > 0.0, "sampling.width must be positive");
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn lattice(&self) -> LatticeSpec {
        LatticeSpec::new(self.grid.n_t, self.grid.n_x, self.grid.dx)
    }

    pub fn kg(&self) -> Result<KgParams> {
        Ok(KgParams::new(self.field.m_sq, self.field.xi)?)
    }

    pub fn flat(&self) -> Result<Spacetime> {
        Ok(Spacetime::flat(self.lattice(), self.kg()?)?)
    }

    pub fn bump_spec(&self) -> BumpSpec {
        let p = &self.perturbation;
        BumpSpec { t0: p.t0, x0: p.x0, rt: p.rt, rx: p.rx, amp_beta: p.amp_beta, amp_a: p.amp_a }
    }

    pub fn perturbation(&self) -> Result<MetricPerturbation> {
        Ok(MetricPerturbation::bump(&self.lattice(), &self.bump_spec())?)
    }

    /// The background spacetime named by `[metric]`.
    pub fn spacetime(&self) -> Result<Spacetime> {
        let m = &self.metric;
        match m.family {
            MetricFamily::Flat => self.flat(),
            MetricFamily::Bump => Ok(perturb(&self.flat()?, &self.perturbation()?)?),
            MetricFamily::Cosmological => {
                Ok(Spacetime::cosmological(self.lattice(), self.kg()?, m.a0, m.a1, m.t_start, m.t_end)?)
            }
        }
    }

    /// A spacetime differing from flat space: the configured one, or the
    /// perturbation bump when the configured metric is itself flat.
    pub fn deformed(&self) -> Result<Spacetime> {
        match self.metric.family {
            MetricFamily::Flat => Ok(perturb(&self.flat()?, &self.perturbation()?)?),
            _ => self.spacetime(),
        }
    }

    pub fn samples_or(&self, default: usize) -> usize {
        if self.run.samples == 0 {
            default
        } else {
            self.run.samples
        }
    }
}
