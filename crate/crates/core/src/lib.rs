//! Solvers and benchmark tooling for the most probable explanation (MPE)
//! task in Bayesian networks.

pub mod elim;
pub mod generators;
pub mod graph;
pub mod harness;
pub mod localsearch;
pub mod model;
pub mod propagation;
pub mod search;
