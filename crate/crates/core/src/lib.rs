//! Closed-loop generation, verification, execution and scoring of LAMMPS
//! input scripts.

pub mod agent;
pub mod bench;
pub mod config;
pub mod exec;
pub mod llm;
pub mod potentials;
pub mod reward;
pub mod script;
pub mod thermo;
pub mod util;
