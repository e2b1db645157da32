//! Results of an experiment and their on-disk layout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Holds,
}

/// One assertion of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Check {
    /// `value ≤ tol`; the tolerance is multiplied by `--tol-scale`.
    pub fn at_most(name: &str, value: f64, tol: f64, scale: f64) -> Self {
        let tol = tol * scale;
        Check { name: name.into(), value, bound: Bound::AtMost(tol), pass: value <= tol }
    }

    /// `value ≥ bound`, unscaled (orders, counts, margins).
    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound: Bound::AtLeast(bound), pass: value >= bound }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Check { name: name.into(), value: if ok { 1.0 } else { 0.0 }, bound: Bound::Holds, pass: ok }
    }

    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match self.bound {
            Bound::AtMost(t) => format!("{verdict} {}: {:.3e} <= {:.1e}", self.name, self.value, t),
            Bound::AtLeast(b) => format!("{verdict} {}: {} >= {}", self.name, short(self.value), short(b)),
            Bound::Holds => format!("{verdict} {}", self.name),
        }
    }
}

fn short(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v}")
    } else {
        format!("{v:.4e}")
    }
}

/// A CSV table. Cells are pre-formatted so that output is byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn summary(&self, command: &str) -> String {
        let mut s = format!("{command}\n");
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let _ = writeln!(s, "{}", if self.passed() { "ALL PASS" } else { "FAILED" });
        s
    }

    /// Writes `manifest.toml`, `summary.txt` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        let manifest = format!(
            "# run manifest\ncommand = \"{command}\"\nseed = {}\nkglattice = \"{}\"\nkglattice-cli = \"{}\"\n\n# configuration\n{}",
            cfg.run.seed,
            kglattice::VERSION,
            env!("CARGO_PKG_VERSION"),
            cfg.to_toml()
        );
        let path = dir.join("manifest.toml");
        fs::write(&path, manifest)?;
        written.push(path);
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path)?;
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            w.flush()?;
            written.push(path);
        }
        let path = dir.join("summary.txt");
        fs::write(&path, self.summary(command))?;
        written.push(path);
        Ok(written)
    }
}
