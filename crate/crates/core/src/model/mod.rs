//! A miniature three-branch segmentation network that can be cut after
//! stage 5.
//!
//! The transmitter half runs stages 0 through 5 and fuses the three
//! branches into one coarse feature map at 1/64 of the input resolution.
//! The receiver half runs the pyramid pooling module and the segmentation
//! head, then upsamples the logits back to the input size.

mod arch;
mod forward;
mod weights;

pub use arch::{describe, mac_count, stage_macs, Architecture, ConvSpec, LayerSpec, StageInfo};
pub use forward::{
    argmax_map, forward_full, forward_full_traced, forward_receiver, forward_transmitter,
    ForwardTrace, Segmentation,
};
pub use weights::{build, load_weights, save_weights, Param, WeightSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

/// Stage 5 runs at 1/64 of the input resolution.
pub const SPLIT_DOWNSAMPLE: usize = 64;
/// The segmentation head runs at 1/8 of the input resolution.
pub const HEAD_DOWNSAMPLE: usize = 8;
/// Index of the last transmitter-side stage.
pub const SPLIT_STAGE: usize = 5;
pub const NUM_STAGES: usize = 7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input shape mismatch: {0}")]
    InputShape(String),
    #[error("weight file is missing entry `{0}`")]
    MissingEntry(String),
    #[error("weight entry `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weight file has unexpected entry `{0}`")]
    UnexpectedEntry(String),
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Stem width `C0`; branch widths are multiples of it.
    pub base_channels: usize,
    /// Width `C5` of the transmitted stage-5 feature map.
    pub feature_channels: usize,
    pub num_classes: usize,
    pub ppm_bins: Vec<usize>,
    pub seed: u64,
}

impl ModelConfig {
    /// 1024x1024 input, C0=32, C5=512, 19 classes, bins {1,2,3,6}.
    pub fn full_scale() -> Self {
        ModelConfig {
            input_height: 1024,
            input_width: 1024,
            base_channels: 32,
            feature_channels: 512,
            num_classes: 19,
            ppm_bins: vec![1, 2, 3, 6],
            seed: 0,
        }
    }

    /// 256x256 input, C0=16, C5=64, 8 classes. Stage 5 is only 4x4 here,
    /// so the pyramid uses bins {1,2,4}.
    pub fn desk_scale() -> Self {
        ModelConfig {
            input_height: 256,
            input_width: 256,
            base_channels: 16,
            feature_channels: 64,
            num_classes: 8,
            ppm_bins: vec![1, 2, 4],
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.input_height == 0
            || self.input_width == 0
            || !self.input_height.is_multiple_of(SPLIT_DOWNSAMPLE)
            || !self.input_width.is_multiple_of(SPLIT_DOWNSAMPLE)
        {
            return bad(format!(
                "input {}x{} must be a positive multiple of {SPLIT_DOWNSAMPLE}",
                self.input_height, self.input_width
            ));
        }
        if self.input_height / SPLIT_DOWNSAMPLE > u16::MAX as usize
            || self.input_width / SPLIT_DOWNSAMPLE > u16::MAX as usize
        {
            return bad("input too large".into());
        }
        if !(2..=1 << 16).contains(&self.num_classes) {
            return bad(format!(
                "num_classes {} must be in 2..=65536",
                self.num_classes
            ));
        }
        if self.base_channels < 4 {
            return bad(format!(
                "base_channels {} must be at least 4",
                self.base_channels
            ));
        }
        if self.feature_channels < 4 {
            return bad(format!(
                "feature_channels {} must be at least 4",
                self.feature_channels
            ));
        }
        if self.ppm_bins.is_empty() {
            return bad("ppm_bins must not be empty".into());
        }
        if self.ppm_bins[0] == 0 || self.ppm_bins.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "ppm_bins {:?} must be positive and strictly increasing",
                self.ppm_bins
            ));
        }
        let (h, w) = self.split_dims();
        let largest = *self.ppm_bins.last().unwrap();
        if largest > h.min(w) {
            return bad(format!(
                "largest pyramid bin {largest} exceeds the {h}x{w} stage-5 map"
            ));
        }
        Ok(())
    }

    /// Spatial size of the transmitted feature map.
    pub fn split_dims(&self) -> (usize, usize) {
        (
            self.input_height / SPLIT_DOWNSAMPLE,
            self.input_width / SPLIT_DOWNSAMPLE,
        )
    }

    pub fn head_dims(&self) -> (usize, usize) {
        (
            self.input_height / HEAD_DOWNSAMPLE,
            self.input_width / HEAD_DOWNSAMPLE,
        )
    }

    /// Width of the 3x3 head convolution.
    pub fn head_channels(&self) -> usize {
        4 * self.base_channels
    }

    /// Width of each pyramid branch before concatenation.
    pub fn ppm_branch_channels(&self) -> usize {
        (self.feature_channels / self.ppm_bins.len()).max(1)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid segmentation map: {0}")]
pub struct MapError(pub String);

/// Per-pixel class labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl SegmentationMap {
    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u16>,
    ) -> std::result::Result<Self, MapError> {
        if height == 0 || width == 0 {
            return Err(MapError("dimensions must be positive".into()));
        }
        if labels.len() != height * width {
            return Err(MapError(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(SegmentationMap {
            height,
            width,
            labels,
        })
    }

    /// Like [`SegmentationMap::new`] but also checks every label is below
    /// `num_classes`.
    pub fn with_classes(
        height: usize,
        width: usize,
        labels: Vec<u16>,
        num_classes: usize,
    ) -> std::result::Result<Self, MapError> {
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(MapError(format!("label {bad} not below {num_classes}")));
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of positions where the two maps agree.
    pub fn agreement(&self, other: &SegmentationMap) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count()
    }
}
