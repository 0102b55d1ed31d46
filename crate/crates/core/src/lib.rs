//! Exact and compressed dynamic mode decomposition (cDMD) for video
//! background modeling.
//!
//! A grayscale video is flattened into a snapshot matrix (one column per
//! frame), optionally sketched by a random measurement operator, and
//! factored into spatial modes with temporal eigenvalues. Background modes
//! are picked by orthogonal matching pursuit, and per-frame foreground masks
//! are obtained by thresholding the distance to the synthesized background.
//!
//! Module map:
//!
//! * [`frames_io`] loads and writes frame sequences, masks and batches.
//! * [`sensing`] builds the measurement operators (Gaussian, sparse,
//!   single-pixel, SRFT).
//! * [`numkernel`] holds the dense kernels: truncated SVD, eigendecomposition,
//!   least squares and optimal hard-threshold rank selection.
//! * [`dmd`] implements exact and compressed DMD plus reconstruction.
//! * [`modeselect`] runs OMP and synthesizes the background frame.
//! * [`pipeline`] ties everything into batch background subtraction with
//!   evaluation metrics.
//! * [`synth`] generates planted-spectrum matrices and synthetic scenes.
//! * [`bench`] times the decomposition stages across resolutions.

pub mod bench;
pub mod dmd;
pub mod error;
pub mod frames_io;
pub mod modeselect;
pub mod numkernel;
pub mod pipeline;
pub mod report;
mod rng;
pub mod scalar;
pub mod sensing;
pub mod synth;

pub use error::{CdmdError, Result};
pub use faer::{c64, Mat, MatRef};
