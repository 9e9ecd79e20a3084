//! Spectral graph neural network engine.
//!
//! The model encodes the eigenvalues of a normalized graph Laplacian with a
//! sinusoidal encoding, lets them attend to each other in a Transformer
//! encoder, decodes one new set of eigenvalues per attention head, and uses
//! the resulting learnable bases `U diag(λ_m) Uᵀ` for channel-wise graph
//! convolution.
//!
//! Module map:
//! - [`linalg`]: dense matrices, symmetric eigendecomposition, truncation.
//! - [`autodiff`]: a small reverse-mode tape over dense matrices.
//! - [`graph`]: graphs, Laplacians, grids, synthetic filter tasks, datasets.
//! - [`model`]: the encoder/decoder/convolution stack.
//! - [`train`]: Adam, losses, metrics, training loops.
//! - [`cli`]: command implementations and attention condensation.

pub mod autodiff;
pub mod cli;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod train;
