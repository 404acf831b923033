//! Numerical laboratory for isotropic Ornstein-Uhlenbeck flows (IOUFs).
//!
//! An IOUF is the stochastic flow generated by an isotropic Brownian vector
//! field `F(t, x)` with an added linear restoring drift `-c x`. The crate
//! simulates its n-point motions and Jacobian cocycle, and evaluates the
//! closed-form quantities attached to it: the covariance tensor, the
//! Lyapunov spectrum and Lyapunov dimension, the scale function and speed
//! measure of the distance process, and a set of Monte Carlo diagnostics for
//! the global weak attractor.
//!
//! Module map:
//!
//! * [`correlation`]: covariance tensors `b(x)` built from longitudinal and
//!   transversal correlation functions.
//! * [`sampler`]: joint Gaussian increments of the field and its gradient.
//! * [`flow`]: Euler-type integration of n-point motions and Jacobians.
//! * [`spectrum`]: closed-form and QR-estimated Lyapunov spectra.
//! * [`radial`]: the distance process as a scalar diffusion.
//! * [`dimension`]: pullback clouds and correlation-dimension fits.
//! * [`attractor`]: sup-norm, tail and contraction diagnostics.

pub mod attractor;
pub mod correlation;
pub mod dimension;
mod error;
pub mod flow;
pub mod lattice;
pub mod points;
pub mod quadrature;
pub mod radial;
pub mod rng;
pub mod sampler;
pub mod spectrum;
pub mod stats;

pub use correlation::{CorrelationModel, Family, PairwiseBound};
pub use dimension::{DimensionFit, EmpiricalMeasure};
pub use error::{Error, Result};
pub use flow::{FlowState, Scheme, SimConfig};
pub use points::Points;
pub use radial::RadialLaw;
pub use sampler::SamplerKind;
pub use spectrum::LyapunovSpectrum;
