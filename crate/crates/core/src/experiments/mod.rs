//! End-to-end experiments: datasets, the three pipelines, SNR sweeps and
//! their CSV/SVG artifacts.

mod dataset;
mod pipelines;
mod plot;
mod results;
mod stats;
mod sweep;

pub use dataset::{
    generate_synthetic, load_dataset, load_directory, read_pgm, read_ppm, save_dataset, write_pgm,
    write_ppm, Sample,
};
pub use pipelines::{run_full_tx, run_pipeline, run_split, run_traditional, PipelineOutput};
pub use plot::{render_bar_chart, render_plot, write_plot};
pub use results::{
    ext_path, meta_path, read_csv, write_csv, PerPipeline, RowExtra, SweepMeta, SweepResult,
    SweepRow, CSV_HEADER, EXT_HEADER,
};
pub use stats::{median, snr_at_level, spearman};
pub use sweep::{output_stem, sweep, sweep_to_dir};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, QuantBits};
use crate::metrics::{AbsentPolicy, MetricsError, Pipeline};
use crate::model::{ModelConfig, ModelError};
use crate::phy::Modulation;

/// Version string written into every result's metadata.
pub const ARTIFACT_VERSION: &str = concat!("semsplit ", env!("CARGO_PKG_VERSION"));

/// Environment variable that overrides the sweep output directory.
pub const OUT_DIR_ENV: &str = "SEMSPLIT_OUT_DIR";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidSpec(String),
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: String, message: String },
    #[error("{}", format_dataset_errors(.0))]
    Dataset(Vec<(PathBuf, String)>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },
    #[error("cannot render plot: {0}")]
    Plot(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn format_dataset_errors(errors: &[(PathBuf, String)]) -> String {
    let mut out = format!("dataset failed to load ({} problem(s))", errors.len());
    for (path, msg) in errors {
        out.push_str(&format!("\n  {}: {msg}", path.display()));
    }
    out
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Square side or explicit `[height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSize {
    Square(usize),
    HeightWidth([usize; 2]),
}

impl InputSize {
    pub fn dims(self) -> (usize, usize) {
        match self {
            InputSize::Square(s) => (s, s),
            InputSize::HeightWidth([h, w]) => (h, w),
        }
    }
}

/// The `model` block of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub input_size: InputSize,
    pub base_channels: usize,
    pub feature_channels: usize,
    pub num_classes: usize,
    pub ppm_bins: Vec<usize>,
    /// Weight initialization seed.
    #[serde(default)]
    pub seed: u64,
}

impl ModelSection {
    pub fn to_config(&self) -> ModelConfig {
        let (h, w) = self.input_size.dims();
        ModelConfig {
            input_height: h,
            input_width: w,
            base_channels: self.base_channels,
            feature_channels: self.feature_channels,
            num_classes: self.num_classes,
            ppm_bins: self.ppm_bins.clone(),
            seed: self.seed,
        }
    }
}

impl From<&ModelConfig> for ModelSection {
    fn from(c: &ModelConfig) -> Self {
        ModelSection {
            input_size: if c.input_height == c.input_width {
                InputSize::Square(c.input_height)
            } else {
                InputSize::HeightWidth([c.input_height, c.input_width])
            },
            base_channels: c.base_channels,
            feature_channels: c.feature_channels,
            num_classes: c.num_classes,
            ppm_bins: c.ppm_bins.clone(),
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGrid {
    pub modulations: Vec<Modulation>,
    /// Es/N0 points in dB, strictly increasing.
    pub snr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    /// PPM images with same-stem PGM label maps.
    Directory(PathBuf),
}

/// What the received maps are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    GroundTruth,
    /// The noiseless full-network output on the same image, so the score
    /// isolates what the link and quantization cost.
    NoiselessOutput,
}

fn default_pipelines() -> Vec<Pipeline> {
    Pipeline::ALL.to_vec()
}
fn default_num_images() -> usize {
    50
}
fn default_quant_bits() -> u32 {
    8
}
fn default_fps() -> f64 {
    1.0
}
fn default_reference() -> ReferenceMode {
    ReferenceMode::NoiselessOutput
}
fn default_dataset() -> DatasetSource {
    DatasetSource::Synthetic
}

/// A complete, self-describing experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelSection,
    pub channel: ChannelGrid,
    #[serde(default = "default_pipelines")]
    pub pipelines: Vec<Pipeline>,
    #[serde(default = "default_num_images")]
    pub num_images: usize,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetSource,
    #[serde(default = "default_reference")]
    pub reference_mode: ReferenceMode,
    #[serde(default = "default_quant_bits")]
    pub quant_bits: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Master seed for the dataset and every channel realization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub absent_classes: AbsentPolicy,
}

impl ExperimentSpec {
    /// 256x256 desk-scale network, 50 synthetic images, both modulations
    /// at 5..=30 dB in 5 dB steps, scored against the noiseless output.
    pub fn desk_default() -> Self {
        ExperimentSpec {
            model: ModelSection::from(&ModelConfig::desk_scale()),
            channel: ChannelGrid {
                modulations: Modulation::ALL.to_vec(),
                snr_db: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            },
            pipelines: default_pipelines(),
            num_images: default_num_images(),
            dataset: DatasetSource::Synthetic,
            reference_mode: ReferenceMode::NoiselessOutput,
            quant_bits: default_quant_bits(),
            fps: default_fps(),
            seed: 0,
            absent_classes: AbsentPolicy::Exclude,
        }
    }

    /// The 1024x1024, 19-class configuration with 500 images.
    pub fn full_scale_default() -> Self {
        ExperimentSpec {
            model: ModelSection::from(&ModelConfig::full_scale()),
            num_images: 500,
            ..Self::desk_default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.to_config()
    }

    pub fn bits(&self) -> Result<QuantBits> {
        Ok(QuantBits::new(self.quant_bits)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        self.model_config()
            .validate()
            .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
        let snr = &self.channel.snr_db;
        if snr.is_empty() {
            return bad("channel.snr_db must not be empty".into());
        }
        if snr.iter().any(|s| !s.is_finite()) {
            return bad("channel.snr_db values must be finite".into());
        }
        if snr.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "channel.snr_db {snr:?} must be strictly increasing"
            ));
        }
        if self.channel.modulations.is_empty() {
            return bad("channel.modulations must not be empty".into());
        }
        if has_duplicates(&self.channel.modulations) {
            return bad("channel.modulations lists a scheme twice".into());
        }
        if self.pipelines.is_empty() {
            return bad("pipelines must not be empty".into());
        }
        if has_duplicates(&self.pipelines) {
            return bad("pipelines lists a pipeline twice".into());
        }
        if self.num_images == 0 {
            return bad("num_images must be at least 1".into());
        }
        if !QuantBits::SUPPORTED.contains(&self.quant_bits) {
            return bad(format!(
                "quant_bits {} must be one of {:?}",
                self.quant_bits,
                QuantBits::SUPPORTED
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| ExperimentError::ConfigParse {
                path: "<inline>".into(),
                message: e.to_string(),
            })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads and validates a JSON config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let spec: ExperimentSpec =
            serde_json::from_str(&text).map_err(|e| ExperimentError::ConfigParse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].contains(a))
}
