//! Evolving-categories multinomial (ECM) and ECM-Poisson count distributions.
//!
//! The crate is organised bottom-up:
//!
//! * [`ecm`]: category schedules, count arrangements, path probability tables,
//!   moments, pair pmfs, conditional samplers and small-instance oracles.
//! * [`gauss`]: univariate and bivariate standard-normal rectangle probabilities.
//! * [`movement`]: Gaussian trajectory laws (OU, conditioned OU, Brownian,
//!   mixtures) and the map from a survey design to a path probability table.
//! * [`simulate`]: survey design generation, exact trajectory sampling and
//!   count simulation.
//! * [`inference`]: Gaussian pseudo-likelihood, pairwise composite likelihood,
//!   the multi-start box-constrained optimizer and parametric bootstrap.
//! * [`vote`]: two-round vote-transfer estimation from district counts.
//! * [`io`]: the on-disk CSV/JSON formats shared with the command-line tool.

pub mod ecm;
pub mod error;
pub mod gauss;
pub mod inference;
pub mod io;
pub mod movement;
pub mod simulate;
pub mod vote;

pub use error::{Error, Result};
