//! Distributed second-order optimization over a network of agents.
//!
//! The crate solves the penalized consensus problem
//!
//! ```text
//!   minimize_x  F(x) = 1/2 x' (I - W) x + alpha * sum_i f_i(x_i)
//! ```
//!
//! where each agent `i` owns a local objective `f_i`, `W` is a doubly
//! stochastic consensus matrix built from a connected undirected graph, and
//! the blocks `x_i` are local copies of a common decision variable. Agents
//! wake up at random, take a damped Newton-type step built from a two-term
//! matrix-splitting approximation of the global Hessian inverse, and push
//! fresh state to their one- and two-hop neighborhood.
//!
//! Modules:
//!
//! * [`topology`]: graph generators and the consensus matrix.
//! * [`objectives`]: local objective families (quadratic, regularized
//!   logistic), the stacked penalized objective, and a LIBSVM reader.
//! * [`newton`]: per-agent Newton quantities, dense verification oracles,
//!   and the closed-form convergence constants.
//! * [`engine`]: deterministic event simulators for the asynchronous
//!   method, its synchronous ancestor, and a gossip baseline, plus exact
//!   one-step expectation enumeration.
//! * [`analysis`]: reference solves, error metrics, and multi-seed rate
//!   aggregation.
//! * [`config`]: INI-style experiment configuration files.
//! * [`verify`]: invariant suites that check the implemented iteration
//!   against the theory at runtime.

pub mod analysis;
pub mod config;
pub mod engine;
mod error;
pub mod newton;
pub mod objectives;
pub mod report;
pub mod topology;
pub mod verify;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
