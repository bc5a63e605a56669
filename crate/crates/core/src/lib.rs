//! Finite-horizon consumption-savings-portfolio problems under recursive
//! preferences, with numerical checks of how consumption responds to shocks
//! that move the continuation value.
//!
//! The crate is organised bottom-up: preference primitives
//! ([`aggregator`], [`certainty`]), problem descriptions ([`setting`],
//! [`regularity`]), solvers ([`twoperiod`], [`solver`]), one-period
//! reductions ([`environment`]) and the comparative statics built on them
//! ([`statics`], [`shocks`], [`identify`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod certainty;
pub mod config;
pub mod environment;
pub mod error;
pub mod grid;
pub mod identify;
pub mod numerics;
pub mod parallel;
pub mod regularity;
pub mod report;
pub mod setting;
pub mod shocks;
pub mod solver;
pub mod statics;
pub mod twoperiod;

pub use aggregator::{Aggregator, CustomAggregator, Partials};
pub use certainty::{CertaintyEquivalent, Curvature};
pub use environment::{ContinuationPoint, Environment};
pub use error::{Error, Result};
pub use grid::WealthGrid;
pub use parallel::Execution;
pub use setting::{Distribution, Period, Portfolio, Setting, StateSpace, TerminalUtility};
pub use solver::{solve_backward, solve_homothetic, Solution};
