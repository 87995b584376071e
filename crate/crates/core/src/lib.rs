//! Non-intrusive reduced-order modeling with latent linear dynamics.
//!
//! An autoencoder compresses full-order snapshots to a handful of latent
//! variables, and a linear ODE per training parameter is fitted to the latent
//! trajectories while the network trains. The ODE coefficients are then
//! interpolated over parameter space by independent Gaussian processes, whose
//! predictive uncertainty is pushed through the latent integration and the
//! decoder. The resulting variance field picks where the next full-order run
//! goes.
//!
//! | module | contents |
//! |--------|----------|
//! | [`linalg`] | dense matrices, Cholesky, SPD solves |
//! | [`nn`] | softplus MLPs, backprop, Adam, the autoencoder |
//! | [`fom`] | periodic 1D viscous Burgers solver and parameter grids |
//! | [`sindy`] | library, time derivatives, residual, least squares |
//! | [`gp`] | RBF Gaussian processes per ODE coefficient |
//! | [`rom`] | coefficient sampling, latent integration, ensemble statistics |
//! | [`trainer`] | joint training loop with greedy acquisition |
//! | [`io`] | configuration, snapshot files, checkpoints, commands |

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fom;
pub mod gp;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod rom;
pub mod sindy;
pub mod trainer;

pub use error::{Error, Result};
