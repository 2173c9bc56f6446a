//! Desk-scale MRI reconstruction toolkit: interpolates undersampled k-space
//! with an attention-augmented residual encoder-decoder, plus the sampling,
//! metrics, and data plumbing around it.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fourier;
pub mod kspace;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod stats;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::{ChannelTensor, Scalar, Tensor};
pub use volume::{ComplexVolume, Domain, RealImage};
