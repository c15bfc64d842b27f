//! Sparse solutions of nonlinear systems `F(x) = 0` by Bregman-Kaczmarz
//! iterations.
//!
//! The central method is the averaging block nonlinear Bregman-Kaczmarz
//! iteration (ABNBK) with constant or adaptive stepsize. The single-row NBK
//! and MRNBK baselines run on the same engine. The crate also ships the
//! quadratic sparse-recovery test problems, diagnostics for the convergence
//! hypotheses and an experiment harness (`abnbk` binary).

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod generators;
pub mod io;
pub mod linalg;
pub mod priors;
pub mod selection;
pub mod solver;
pub mod systems;

pub use error::{Error, Result};
pub use generators::{GeneratorKind, GeneratorSpec, ProblemInstance};
pub use priors::{PriorFunction, SparsePrior};
pub use selection::{SelectionRule, StepsizePolicy, WeightScheme};
pub use solver::{run, Method, RunRecord, RunStatus, SolverConfig};
pub use systems::{NonlinearSystem, QuadraticSystem};
