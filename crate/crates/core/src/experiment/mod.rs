//! Desk-scale replication of the slab experiment: synthetic data on a fine
//! mesh, the REF/CEM/BAE inversions on a coarse one, posterior analysis and
//! file outputs.

pub mod cli;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod run;

pub use config::{Case, ExperimentConfig};
pub use run::*;
