//! Segmentation accuracy and link/compute accounting.
//!
//! mIoU is computed from integer confusion counts, and the mean over
//! classes is summed as an exact rational before the single final rounding
//! to `f64`. That makes the result independent of class order, so
//! relabeling both maps permutes the per-class values and leaves the mean
//! bit-identical.

use std::ops::AddAssign;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{header_bits, label_bits, QuantBits};
use crate::model::{self, ModelConfig, ModelError, SegmentationMap, NUM_STAGES, SPLIT_STAGE};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("map dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u16, classes: usize },
    #[error("confusion matrices have different class counts ({0} vs {1})")]
    ClassCountMismatch(usize, usize),
}

/// The three ways of getting a segmentation to the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Raw image over the link, whole network at the receiver.
    Traditional,
    /// Whole network at the transmitter, label map over the link.
    FullTx,
    /// Stages 0..=5 at the transmitter, quantized features over the link.
    Split,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::Traditional, Pipeline::FullTx, Pipeline::Split];

    /// Stable index used for seed derivation.
    pub fn index(self) -> u64 {
        match self {
            Pipeline::Traditional => 0,
            Pipeline::FullTx => 1,
            Pipeline::Split => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Traditional => "traditional",
            Pipeline::FullTx => "full_tx",
            Pipeline::Split => "split",
        }
    }

    /// Short legend label used in plots.
    pub fn label(self) -> &'static str {
        match self {
            Pipeline::Traditional => "Traditional",
            Pipeline::FullTx => "Full Sem",
            Pipeline::Split => "Split Sem",
        }
    }
}

/// `K x K` pixel counts, rows indexed by reference label, columns by
/// predicted label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.get(k, k)
    }

    /// Pixels predicted as `k` whose reference is something else.
    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.classes)
            .filter(|&r| r != k)
            .map(|r| self.get(r, k))
            .sum()
    }

    /// Pixels of reference class `k` predicted as something else.
    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != k)
            .map(|p| self.get(k, p))
            .sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k * self.classes..(k + 1) * self.classes]
            .iter()
            .sum()
    }

    /// Adds `other` elementwise.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.classes != other.classes {
            return Err(MetricsError::ClassCountMismatch(
                self.classes,
                other.classes,
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    /// Panics if the class counts differ; use [`ConfusionMatrix::merge`] to
    /// get an error instead.
    fn add_assign(&mut self, other: &ConfusionMatrix) {
        self.merge(other)
            .expect("confusion matrix class count mismatch");
    }
}

/// Counts `(reference, predicted)` label pairs over all pixels.
pub fn confusion(
    reference: &SegmentationMap,
    predicted: &SegmentationMap,
    classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if reference.height() != predicted.height() || reference.width() != predicted.width() {
        return Err(MetricsError::DimensionMismatch(
            reference.height(),
            reference.width(),
            predicted.height(),
            predicted.width(),
        ));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&r, &p) in reference.labels().iter().zip(predicted.labels()) {
        for label in [r, p] {
            if label as usize >= classes {
                return Err(MetricsError::LabelOutOfRange { label, classes });
            }
        }
        cm.counts[r as usize * classes + p as usize] += 1;
    }
    Ok(cm)
}

/// How classes with `TP + FP + FN == 0` enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsentPolicy {
    /// Left out of the mean.
    #[default]
    Exclude,
    /// Counted as a perfect score.
    CountAsOne,
    /// Counted as zero.
    CountAsZero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouReport {
    /// IoU per class; `None` where the class is absent from both maps.
    pub per_class: Vec<Option<f64>>,
    /// `None` when no class contributes to the mean.
    pub mean: Option<f64>,
}

/// Per-class IoU `TP / (TP + FP + FN)` and their mean.
pub fn miou(cm: &ConfusionMatrix, policy: AbsentPolicy) -> MiouReport {
    let mut per_class = Vec::with_capacity(cm.classes);
    let mut sum = BigRational::zero();
    let mut counted = 0u64;
    for k in 0..cm.classes {
        let tp = cm.true_positives(k);
        let union = tp + cm.false_positives(k) + cm.false_negatives(k);
        if union == 0 {
            per_class.push(None);
            match policy {
                AbsentPolicy::Exclude => {}
                AbsentPolicy::CountAsOne => {
                    sum += BigRational::from_integer(BigInt::from(1));
                    counted += 1;
                }
                AbsentPolicy::CountAsZero => counted += 1,
            }
            continue;
        }
        let iou = BigRational::new(BigInt::from(tp), BigInt::from(union));
        per_class.push(Some(tp as f64 / union as f64));
        sum += iou;
        counted += 1;
    }
    let mean = (counted > 0).then(|| {
        (sum / BigRational::from_integer(BigInt::from(counted)))
            .to_f64()
            .expect("mean of ratios in [0, 1] converts to f64")
    });
    MiouReport { per_class, mean }
}

/// Convenience wrapper: mean IoU of `predicted` against `reference`.
pub fn miou_of(
    reference: &SegmentationMap,
    predicted: &SegmentationMap,
    classes: usize,
    policy: AbsentPolicy,
) -> Result<Option<f64>, MetricsError> {
    Ok(miou(&confusion(reference, predicted, classes)?, policy).mean)
}

/// Bits sent over the link for one image.
///
/// Traditional sends 24 bits per pixel, full-at-transmitter sends
/// `ceil(log2 K)` bits per pixel, and split sends the quantized stage-5
/// map plus its header.
pub fn bits_per_image(pipeline: Pipeline, config: &ModelConfig, bits: QuantBits) -> u64 {
    let pixels = (config.input_height * config.input_width) as u64;
    match pipeline {
        Pipeline::Traditional => 24 * pixels,
        Pipeline::FullTx => label_bits(config.num_classes) as u64 * pixels,
        Pipeline::Split => {
            let (h, w) = config.split_dims();
            let c = config.feature_channels;
            (c * h * w) as u64 * bits.get() as u64 + header_bits(c) as u64
        }
    }
}

/// Megabits per second at `fps` images per second.
pub fn bitrate_mbps(bits: u64, fps: f64) -> f64 {
    bits as f64 * fps / 1e6
}

/// `100 * (1 - value / baseline)`.
pub fn reduction_percent(value: u64, baseline: u64) -> f64 {
    100.0 * (1.0 - value as f64 / baseline as f64)
}

/// Reference reductions for the full-scale system.
pub const REFERENCE_REDUCTION_VS_TRADITIONAL: f64 = 91.0;
pub const REFERENCE_REDUCTION_VS_FULL_TX: f64 = 72.6;
/// Reference drop in transmitter processing for the split system.
pub const REFERENCE_TX_COMPUTE_REDUCTION: f64 = 19.8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRate {
    pub pipeline: Pipeline,
    pub bits_per_image: u64,
    pub mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub model: ModelConfig,
    pub quant_bits: u32,
    pub fps: f64,
    pub pipelines: Vec<PipelineRate>,
    pub split_body_bits: u64,
    pub split_header_bits: u64,
    pub reduction_vs_traditional_pct: f64,
    pub reduction_vs_full_tx_pct: f64,
    pub reference_reduction_vs_traditional_pct: f64,
    pub reference_reduction_vs_full_tx_pct: f64,
}

impl RateReport {
    pub fn bits(&self, pipeline: Pipeline) -> u64 {
        self.pipelines
            .iter()
            .find(|p| p.pipeline == pipeline)
            .map(|p| p.bits_per_image)
            .expect("every pipeline is reported")
    }
}

pub fn rate_report(
    config: &ModelConfig,
    bits: QuantBits,
    fps: f64,
) -> Result<RateReport, ModelError> {
    config.validate()?;
    let pipelines: Vec<PipelineRate> = Pipeline::ALL
        .iter()
        .map(|&p| {
            let b = bits_per_image(p, config, bits);
            PipelineRate {
                pipeline: p,
                bits_per_image: b,
                mbps: bitrate_mbps(b, fps),
            }
        })
        .collect();
    let split = bits_per_image(Pipeline::Split, config, bits);
    let header = header_bits(config.feature_channels) as u64;
    Ok(RateReport {
        model: config.clone(),
        quant_bits: bits.get(),
        fps,
        split_body_bits: split - header,
        split_header_bits: header,
        reduction_vs_traditional_pct: reduction_percent(
            split,
            bits_per_image(Pipeline::Traditional, config, bits),
        ),
        reduction_vs_full_tx_pct: reduction_percent(
            split,
            bits_per_image(Pipeline::FullTx, config, bits),
        ),
        reference_reduction_vs_traditional_pct: REFERENCE_REDUCTION_VS_TRADITIONAL,
        reference_reduction_vs_full_tx_pct: REFERENCE_REDUCTION_VS_FULL_TX,
        pipelines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineCompute {
    pub pipeline: Pipeline,
    pub tx_macs: u64,
    pub rx_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputeReport {
    pub model: ModelConfig,
    pub stage_macs: [u64; NUM_STAGES],
    pub total_macs: u64,
    pub pipelines: Vec<PipelineCompute>,
    /// Share of all MACs spent in stage 6, in percent.
    pub stage6_share_pct: f64,
    /// Transmitter MAC reduction of split vs. full-at-transmitter, percent.
    pub tx_reduction_pct: f64,
    pub reference_tx_reduction_pct: f64,
}

impl ComputeReport {
    pub fn get(&self, pipeline: Pipeline) -> &PipelineCompute {
        self.pipelines
            .iter()
            .find(|p| p.pipeline == pipeline)
            .expect("every pipeline is reported")
    }
}

/// Transmitter/receiver MACs for one pipeline.
pub fn pipeline_macs(pipeline: Pipeline, config: &ModelConfig) -> Result<(u64, u64), ModelError> {
    let (tx, rx) = match pipeline {
        Pipeline::Traditional => {
            let (all, _) = model::mac_count(config, NUM_STAGES - 1)?;
            (0, all)
        }
        Pipeline::FullTx => model::mac_count(config, NUM_STAGES - 1)?,
        Pipeline::Split => model::mac_count(config, SPLIT_STAGE)?,
    };
    Ok((tx, rx))
}

pub fn compute_report(config: &ModelConfig) -> Result<ComputeReport, ModelError> {
    let stage_macs = model::stage_macs(config)?;
    let total: u64 = stage_macs.iter().sum();
    let pipelines = Pipeline::ALL
        .iter()
        .map(|&p| {
            pipeline_macs(p, config).map(|(tx_macs, rx_macs)| PipelineCompute {
                pipeline: p,
                tx_macs,
                rx_macs,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (split_tx, _) = pipeline_macs(Pipeline::Split, config)?;
    let (full_tx, _) = pipeline_macs(Pipeline::FullTx, config)?;
    Ok(ComputeReport {
        model: config.clone(),
        stage_macs,
        total_macs: total,
        pipelines,
        stage6_share_pct: 100.0 * stage_macs[NUM_STAGES - 1] as f64 / total as f64,
        tx_reduction_pct: reduction_percent(split_tx, full_tx),
        reference_tx_reduction_pct: REFERENCE_TX_COMPUTE_REDUCTION,
    })
}
