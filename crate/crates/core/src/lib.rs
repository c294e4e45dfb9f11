//! Globally linear representations of non-linear network dynamics.
//!
//! This crate implements a Koopman message-passing autoencoder (KMPNN)
//! together with the classical baselines it is measured against (exact DMD,
//! extended DMD, and an MLP Koopman autoencoder), the synthetic network
//! dynamical systems and neural-network training trajectories they are
//! evaluated on, and an evaluation harness for prediction loss and
//! optimisation-performance metrics.
//!
//! The numerics layer is generic over the floating-point scalar via
//! [`scalar::Scalar`]; the artifact itself runs in `f64`, pinned by the
//! aliases below.

pub mod dmd;
pub mod dynamics;
pub mod eval;
pub mod graphs;
pub mod koopman;
pub mod nn_tasks;
pub mod numerics;
pub mod optim;
pub mod scalar;
pub mod seeding;

pub use scalar::Scalar;

/// Concrete matrix type used by datasets and models.
pub type Mat = numerics::Matrix<f64>;
/// Concrete gradient tape used for all training in this crate.
pub type Tape = numerics::GradientTape<f64>;
/// Concrete eigenvalue spectrum type.
pub type Spectrum = numerics::ComplexSpectrum<f64>;
/// Concrete parameter registry.
pub type Params = numerics::ParamSet<f64>;
