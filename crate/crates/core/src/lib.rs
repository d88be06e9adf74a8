//! Convolutional spiking neural network training on event-camera data.
//!
//! The crate is `no_std` and only needs an allocator. It covers the whole
//! numerical pipeline: slicing and binning event streams into binary spike
//! frames, leaky integrate-and-fire dynamics with surrogate gradients, the
//! conv/pool/linear kernels, the time-unrolled network with its hand-written
//! backward pass, the spike-count loss and Adam.
//!
//! File formats, CSV ingestion and the command line live in the `evsnn`
//! crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod events;
pub mod lif;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use events::{EncodingMode, Event, EventBatch, FrameTensor, Polarity, SensorGeometry};
pub use lif::{LifParams, LifState, ResetMode, SurrogateSpec};
pub use network::{ConvBlockConfig, ForwardRecord, NetworkConfig, NetworkWeights};
pub use tensor::Tensor;
pub use training::{AdamParams, LossTargets, MetricsRow, TrainConfig};
