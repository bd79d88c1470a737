//! Vacuum and telescoping potentials for the 2D Ising model restricted to a
//! one-dimensional layer, with exact-enumeration and Monte Carlo kernels,
//! identity verification, decay diagnostics, decimation, and thermodynamic
//! functions.

pub mod cli;
pub mod convergence;
pub mod decimation;
pub mod engine;
pub mod golden;
pub mod estimate;
pub mod exact;
pub mod lattice;
pub mod mc;
pub mod observable;
pub mod potentials;
pub mod thermo;

/// CLI entry point; returns the process exit code (0 ok, 1 check failure,
/// 2 usage error).
pub fn cli_main() -> i32 {
    cli::main()
}
