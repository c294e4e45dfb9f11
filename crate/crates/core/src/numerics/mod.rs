//! Dense linear algebra and reverse-mode differentiation.
//!
//! Everything model-facing in this crate — DMD regression, the Koopman
//! autoencoders, the neural-network task trainers — is built on these
//! primitives: [`Matrix`], [`svd`], [`eig_small`], [`pinv_solve`] and the
//! [`GradientTape`].

pub mod eig;
pub mod matrix;
pub mod params;
pub mod solve;
pub mod svd;
pub mod tape;

pub use eig::{eig_small, eigvals_small, ComplexSpectrum, EIG_MAX_DIM};
pub use matrix::Matrix;
pub use params::ParamSet;
pub use solve::{condition_number, lu_solve_complex, pinv_solve, PINV_RELATIVE_CUTOFF};
pub use svd::{householder_qr_thin, svd, Svd};
pub use tape::{Activation, ConvDims, GradientTape, Gradients, NodeId, PoolDims};

use thiserror::Error;

/// Errors from the numerics layer.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("non-finite values in {what}")]
    NonFinite { what: &'static str },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("gradients require a scalar loss node, got {rows} x {cols}")]
    NonScalar { rows: usize, cols: usize },
    #[error("QR iteration failed to converge for dimension {dim}")]
    EigNoConvergence { dim: usize },
    #[error("singular linear system of dimension {dim}")]
    SingularSystem { dim: usize },
}
