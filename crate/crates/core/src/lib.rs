//! Split semantic-segmentation inference over a simulated radio link.
//!
//! A small three-branch segmentation network is cut after its fifth stage.
//! The transmitter runs the first half, quantizes the coarse feature map
//! and sends it over a Gray-mapped QPSK or 16QAM link with additive white
//! Gaussian noise; the receiver finishes inference. Two baselines are
//! simulated alongside: sending the raw image, and segmenting fully at the
//! transmitter and sending the label map.
//!
//! Modules, bottom up:
//!
//! - [`tensor`]: dense tensors and the inference primitives.
//! - [`model`]: the network, its split executor, weights and MAC accounting.
//! - [`codec`]: bitstreams for feature payloads, label maps and images.
//! - [`phy`]: modulation, the AWGN channel and hard-decision demodulation.
//! - [`metrics`]: confusion matrices, mIoU, bit-rate and compute reports.
//! - [`experiments`]: datasets, the three pipelines, SNR sweeps, CSV and SVG.

pub mod codec;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod phy;
pub mod seed;
pub mod tensor;

pub use model::{ModelConfig, SegmentationMap, WeightSet};
pub use tensor::Tensor;
