//! Probabilistic reduced-order models of dynamical systems learned from
//! noisy and/or sparse trajectory data.
//!
//! The workflow combines three ingredients:
//!
//! 1. Gaussian-process regression of each reduced state trajectory, which
//!    smooths the data and supplies analytic time-derivative estimates with
//!    quantified uncertainty ([`gp`], [`kernels`]).
//! 2. A Bayesian linear regression over the operators of a polynomial
//!    reduced-order model, solved in closed form as a Tikhonov-regularized,
//!    generalized least-squares problem ([`structure`], [`inference`]).
//! 3. Regularization selection by stability-gated reconstruction error and
//!    Monte Carlo prediction with uncertainty bands ([`selection`],
//!    [`pipeline`]).
//!
//! The [`dynamics`] module supplies the benchmark full-order models (a 1D
//! compressible-flow system, a nonlinear diffusion-reaction equation, and a
//! five-compartment epidemic model), the time integrators, and the noise
//! models used to generate synthetic observations. [`reduction`] holds the
//! POD compression machinery.

pub mod dynamics;
pub mod error;
pub mod gp;
pub mod inference;
pub mod kernels;
pub mod pipeline;
pub mod reduction;
pub mod selection;
pub mod structure;
pub mod util;

pub use error::{Error, Result};
