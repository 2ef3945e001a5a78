//! Neural-network training with spectral norm regularization, plus the
//! measurement suite used to compare it against weight decay and
//! adversarial training: generalization gap, input-gradient sensitivity,
//! Hessian maximum eigenvalue, and per-layer singular spectra.
//!
//! The crate is organized around a small dense/conv network engine with
//! exact reverse-mode gradients (`nn`), dense linear algebra with a
//! warm-started power iteration and an exact Jacobi SVD oracle (`linalg`),
//! the four training objectives (`regularize`), Nesterov SGD (`optim`),
//! the analysis operations (`analyze`), data generation and ingestion
//! (`data`), and the CLI driver (`cli`).
//!
//! Batch-level inner loops are data-parallel via rayon when the default
//! `parallel` feature is enabled; reductions always run in sample order,
//! so results are bitwise identical with and without the feature.

pub mod analyze;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod regularize;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
