//! The three transmission pipelines, one image at a time.

use super::Result;
use crate::codec::{self, QuantBits, RgbImage};
use crate::metrics::{pipeline_macs, Pipeline};
use crate::model::{self, SegmentationMap, WeightSet};
use crate::phy::{self, ChannelConfig};

/// What one pipeline delivered for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOutput {
    pub map: SegmentationMap,
    /// Bits per image, including the error-free split header.
    pub bits_sent: u64,
    /// Bits that crossed the noisy link and arrived flipped.
    pub bit_errors: u64,
    pub tx_macs: u64,
    pub rx_macs: u64,
}

fn output(
    pipeline: Pipeline,
    weights: &WeightSet,
    map: SegmentationMap,
    bits_sent: usize,
    bit_errors: usize,
) -> Result<PipelineOutput> {
    let (tx_macs, rx_macs) = pipeline_macs(pipeline, weights.config())?;
    Ok(PipelineOutput {
        map,
        bits_sent: bits_sent as u64,
        bit_errors: bit_errors as u64,
        tx_macs,
        rx_macs,
    })
}

/// Raw 24-bit pixels over the link, whole network at the receiver.
pub fn run_traditional(
    image: &RgbImage,
    weights: &WeightSet,
    channel: &ChannelConfig,
) -> Result<PipelineOutput> {
    let sent = codec::encode_image(image);
    let received = phy::transmit(&sent, channel);
    let decoded = codec::decode_image(&received, image.width(), image.height())?;
    let seg = model::forward_full(&decoded.to_tensor(), weights)?;
    output(
        Pipeline::Traditional,
        weights,
        seg.map,
        sent.len(),
        sent.hamming_distance(&received),
    )
}

/// Whole network at the transmitter, label map over the link.
pub fn run_full_tx(
    image: &RgbImage,
    weights: &WeightSet,
    channel: &ChannelConfig,
) -> Result<PipelineOutput> {
    let classes = weights.config().num_classes;
    let seg = model::forward_full(&image.to_tensor(), weights)?;
    let sent = codec::encode_labelmap(&seg.map, classes)?;
    let received = phy::transmit(&sent, channel);
    let map = codec::decode_labelmap(&received, image.height(), image.width(), classes)?;
    output(
        Pipeline::FullTx,
        weights,
        map,
        sent.len(),
        sent.hamming_distance(&received),
    )
}

/// Stages 0..=5 at the transmitter; the quantized feature body crosses the
/// noisy link while its header is delivered intact.
pub fn run_split(
    image: &RgbImage,
    weights: &WeightSet,
    channel: &ChannelConfig,
    bits: QuantBits,
) -> Result<PipelineOutput> {
    let features = model::forward_transmitter(&image.to_tensor(), weights)?;
    let payload = codec::quantize_features(&features, bits)?;
    let (header, body) = codec::serialize_payload(&payload)?;
    let received = phy::transmit(&body, channel);
    let map = split_receiver(&header, &received, weights)?;
    output(
        Pipeline::Split,
        weights,
        map,
        header.len() + body.len(),
        body.hamming_distance(&received),
    )
}

pub(super) fn split_receiver(
    header: &codec::BitStream,
    body: &codec::BitStream,
    weights: &WeightSet,
) -> Result<SegmentationMap> {
    let payload = codec::deserialize_payload(header, body)?;
    let features = codec::dequantize_features(&payload)?;
    Ok(model::forward_receiver(&features, weights)?.map)
}

/// Dispatches on `pipeline`.
pub fn run_pipeline(
    pipeline: Pipeline,
    image: &RgbImage,
    weights: &WeightSet,
    channel: &ChannelConfig,
    bits: QuantBits,
) -> Result<PipelineOutput> {
    match pipeline {
        Pipeline::Traditional => run_traditional(image, weights, channel),
        Pipeline::FullTx => run_full_tx(image, weights, channel),
        Pipeline::Split => run_split(image, weights, channel, bits),
    }
}
