//! Monte Carlo solution of autonomous ODEs `x' = f(x)` by averaging a
//! weighted functional over random marked branching trees, together with
//! the integrability certificates that make the average a valid
//! representation of the solution.
//!
//! The pieces, bottom up:
//!
//! - [`lifetime_densities`]: branch lifetime laws.
//! - [`branching_tree`]: the random marked trees and marked Yule trees.
//! - [`butcher`]: labeled Butcher trees, elementary differentials, Butcher series.
//! - [`estimator`]: the tree functional and its Monte Carlo averages.
//! - [`certification`]: constants, hypotheses and bounds.
//! - [`progeny_analysis`]: Yule progeny laws and dominance checks.
//! - [`reference_solutions`]: builtin problems with exact solutions.
//! - [`cli`]: configuration parsing and the batch subcommands.

pub mod branching_tree;
pub mod butcher;
pub mod certification;
pub mod cli;
pub mod estimator;
pub mod lifetime_densities;
pub mod progeny_analysis;
pub mod quadrature;
pub mod reference_solutions;
pub mod rng;
pub mod tensor;

pub use branching_tree::{Base, Label, Mark, TreeSample};
pub use butcher::ButcherTree;
pub use estimator::{Estimate, McConfig};
pub use lifetime_densities::LifetimeDensity;
pub use reference_solutions::{BuiltinProblem, ProblemKind};
pub use tensor::{DerivativeOracle, Tensor};
