//! Tensor-ring completion on the quotient manifold of injective tensor rings.
//!
//! The crate provides dense tensors and unfoldings, tensor-ring (TR) and
//! uniform tensor-ring (uTR) representations, the quotient geometry under the
//! gauge group, sampled least-squares completion objectives, and Riemannian
//! gradient and conjugate-gradient solvers.

pub mod completion;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod tensor;
pub mod tr;
pub mod utr_geometry;

pub use completion::{CompletionProblem, Reference, RingModel, SampleSet};
pub use error::{Error, Result};
pub use geometry::{GaugeDirection, TangentVector, TrTangent};
pub use linalg::Matrix;
pub use tensor::{DenseTensor, Shape};
pub use tr::{CoreDistribution, GaugeElement, TrCores, TrRank, UtrCore};
