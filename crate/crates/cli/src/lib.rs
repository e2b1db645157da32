//! Experiment runner for the `kglattice` workbench.
//!
//! Each experiment reads an [`config::ExperimentConfig`], runs a set of
//! numerical checks and returns a [`report::Report`] that is written to a
//! results directory.

pub mod config;
pub mod experiments;
pub mod report;
