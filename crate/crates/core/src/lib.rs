//! Neural NARX identification with stability certificates.
//!
//! A neural NARX model predicts the next output from the last `N` outputs and
//! inputs through a feed-forward network. Written in canonical state-space
//! form, the model is input-to-state stable and incrementally input-to-state
//! stable whenever the spectral norms of its state-path weights satisfy
//!
//! ```text
//! prod_{i=0..M} ||U_i|| < 1 / (prod_{i=1..M} L_i * sqrt(N))
//! ```
//!
//! The crate is organized by pipeline stage:
//!
//! - [`model`]: canonical form, network forward pass and open-loop simulation
//! - [`stability`]: the certificate, Lyapunov matrix and contraction probes
//! - [`training`]: output-error loss, BPTT gradients, RMSProp, early stopping
//! - [`plant`]: benchmark plants, MPRS excitation and dataset generation
//! - [`eval`]: FIT index and test-set evaluation
//! - [`io`] and [`cli`]: file formats and the `nnarx` command-line driver

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod plant;
pub mod seeds;
pub mod stability;
pub mod training;

pub use error::{Error, Result};
pub use model::{
    build_canonical_matrices, stack_state, Activation, CanonicalMatrices, FfnnParams, Layer, NnarxModel,
    NormalizationStats, StackedState,
};
pub use stability::{certify, compute_constants, stability_residual, CertificateReport, Verdict};
