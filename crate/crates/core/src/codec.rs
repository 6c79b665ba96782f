//! Bitstream encodings for everything that crosses the link.
//!
//! Three kinds of object are transmitted, one per pipeline: a quantized
//! stage-5 feature payload (split), a packed label map (segment at the
//! transmitter), and a raw 24-bit RGB raster (traditional). All decoders
//! accept corrupted bodies and still produce in-range output.

use thiserror::Error;

use crate::model::SegmentationMap;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("unsupported quantization width {0} (expected 1..=16)")]
    InvalidBits(u32),
    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),
    #[error("bit length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("malformed payload header: {0}")]
    MalformedHeader(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// Bits packed most-significant-bit first; trailing pad bits are zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BitStream {
    len: usize,
    bytes: Vec<u8>,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        BitStream {
            len: 0,
            bytes: Vec::with_capacity(bits.div_ceil(8)),
        }
    }

    /// Wraps packed bytes holding `len` bits. Fails unless
    /// `len <= 8 * bytes.len() < len + 8` and all pad bits are zero.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(CodecError::InvalidInput(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let pad = bytes.len() * 8 - len;
        if pad > 0 && bytes[bytes.len() - 1] & ((1u8 << pad) - 1) != 0 {
            return Err(CodecError::InvalidInput("nonzero pad bits".into()));
        }
        Ok(BitStream { len, bytes })
    }

    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut s = BitStream::new();
        for b in bits {
            s.push_bit(b);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32);
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    /// Drops bits beyond `len`, re-zeroing the pad.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.len {
            return;
        }
        self.len = len;
        self.bytes.truncate(len.div_ceil(8));
        let pad = self.bytes.len() * 8 - len;
        if pad > 0 {
            let last = self.bytes.len() - 1;
            self.bytes[last] &= !((1u8 << pad) - 1);
        }
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for {} bits", self.len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for {} bits", self.len);
        self.bytes[i / 8] ^= 0x80 >> (i % 8);
    }

    /// Reads `width` bits starting at `pos` as an unsigned integer.
    pub fn read_bits(&self, pos: usize, width: u32) -> u32 {
        (0..width as usize).fold(0u32, |acc, i| (acc << 1) | self.get(pos + i) as u32)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Number of positions where two equal-length streams differ.
    pub fn hamming_distance(&self, other: &BitStream) -> usize {
        assert_eq!(self.len, other.len, "streams differ in length");
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

/// Width of each quantization code, 1 to 16 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantBits(u32);

impl QuantBits {
    /// Widths offered by experiment configs.
    pub const SUPPORTED: [u32; 4] = [4, 6, 8, 16];

    pub fn new(bits: u32) -> Result<Self> {
        if (1..=16).contains(&bits) {
            Ok(QuantBits(bits))
        } else {
            Err(CodecError::InvalidBits(bits))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Largest code, `2^b - 1`.
    pub fn levels(self) -> u32 {
        (1u32 << self.0) - 1
    }
}

/// Metadata that travels error-free ahead of a feature payload body.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadHeader {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub bits: QuantBits,
    pub mins: Vec<f32>,
    pub maxs: Vec<f32>,
}

/// A quantized feature map: header plus fixed-width codes, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePayload {
    pub header: PayloadHeader,
    pub body: BitStream,
}

impl PayloadHeader {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(CodecError::MalformedHeader("zero dimension".into()));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(CodecError::MalformedHeader(
                "spatial size exceeds 16 bits".into(),
            ));
        }
        if self.mins.len() != self.channels || self.maxs.len() != self.channels {
            return Err(CodecError::MalformedHeader("range table length".into()));
        }
        for (c, (lo, hi)) in self.mins.iter().zip(&self.maxs).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(CodecError::MalformedHeader(format!(
                    "channel {c} has range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn body_bits(&self) -> usize {
        self.channels * self.height * self.width * self.bits.get() as usize
    }

    /// `96 + 64 * channels`.
    pub fn serialized_bits(&self) -> usize {
        header_bits(self.channels)
    }
}

/// Header size for a payload with `channels` channels.
pub fn header_bits(channels: usize) -> usize {
    96 + 64 * channels
}

/// Per-channel affine uniform quantization to `bits`-wide codes.
pub fn quantize_features(features: &Tensor, bits: QuantBits) -> Result<FeaturePayload> {
    if let Some(i) = features.data().iter().position(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite(i));
    }
    let levels = bits.levels() as f64;
    let (c, h, w) = features.shape();
    let mut mins = Vec::with_capacity(c);
    let mut maxs = Vec::with_capacity(c);
    let mut body = BitStream::with_capacity(c * h * w * bits.get() as usize);
    for ch in 0..c {
        let plane = features.channel(ch);
        let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        mins.push(lo);
        maxs.push(hi);
        let range = hi as f64 - lo as f64;
        for &v in plane {
            let code = if range > 0.0 {
                ((v as f64 - lo as f64) / range * levels).round() as u32
            } else {
                0
            };
            body.push_bits(code, bits.get());
        }
    }
    let header = PayloadHeader {
        channels: c,
        height: h,
        width: w,
        bits,
        mins,
        maxs,
    };
    header.validate()?;
    Ok(FeaturePayload { header, body })
}

/// Reconstructs `min + code * (max - min) / (2^b - 1)` per element. Any
/// body, corrupted or not, decodes to values inside each channel's range.
pub fn dequantize_features(payload: &FeaturePayload) -> Result<Tensor> {
    let hdr = &payload.header;
    hdr.validate()?;
    if payload.body.len() != hdr.body_bits() {
        return Err(CodecError::LengthMismatch {
            expected: hdr.body_bits(),
            found: payload.body.len(),
        });
    }
    let width = hdr.bits.get();
    let levels = hdr.bits.levels() as f64;
    let plane = hdr.height * hdr.width;
    let mut data = Vec::with_capacity(hdr.channels * plane);
    let mut pos = 0;
    for ch in 0..hdr.channels {
        let (lo, hi) = (hdr.mins[ch], hdr.maxs[ch]);
        let range = hi as f64 - lo as f64;
        for _ in 0..plane {
            let code = payload.body.read_bits(pos, width) as f64;
            pos += width as usize;
            let v = (lo as f64 + range * code / levels) as f32;
            data.push(v.clamp(lo, hi));
        }
    }
    Tensor::new(hdr.channels, hdr.height, hdr.width, data)
        .map_err(|e| CodecError::MalformedHeader(e.to_string()))
}

/// Splits a payload into its header bits and body bits.
pub fn serialize_payload(payload: &FeaturePayload) -> Result<(BitStream, BitStream)> {
    let hdr = &payload.header;
    hdr.validate()?;
    let mut out = BitStream::with_capacity(hdr.serialized_bits());
    out.push_bits(hdr.channels as u32, 32);
    out.push_bits(((hdr.height as u32) << 16) | hdr.width as u32, 32);
    out.push_bits(hdr.bits.get(), 32);
    for (lo, hi) in hdr.mins.iter().zip(&hdr.maxs) {
        out.push_bits(lo.to_bits(), 32);
        out.push_bits(hi.to_bits(), 32);
    }
    Ok((out, payload.body.clone()))
}

pub fn deserialize_payload(header: &BitStream, body: &BitStream) -> Result<FeaturePayload> {
    if header.len() < 96 {
        return Err(CodecError::MalformedHeader(format!(
            "{} header bits, need at least 96",
            header.len()
        )));
    }
    let channels = header.read_bits(0, 32) as usize;
    if header.len() != header_bits(channels) {
        return Err(CodecError::MalformedHeader(format!(
            "{} header bits for {channels} channels",
            header.len()
        )));
    }
    let dims = header.read_bits(32, 32);
    let bits = QuantBits::new(header.read_bits(64, 32))
        .map_err(|e| CodecError::MalformedHeader(e.to_string()))?;
    let mut mins = Vec::with_capacity(channels);
    let mut maxs = Vec::with_capacity(channels);
    for c in 0..channels {
        mins.push(f32::from_bits(header.read_bits(96 + 64 * c, 32)));
        maxs.push(f32::from_bits(header.read_bits(128 + 64 * c, 32)));
    }
    let hdr = PayloadHeader {
        channels,
        height: (dims >> 16) as usize,
        width: (dims & 0xFFFF) as usize,
        bits,
        mins,
        maxs,
    };
    hdr.validate()?;
    if body.len() != hdr.body_bits() {
        return Err(CodecError::LengthMismatch {
            expected: hdr.body_bits(),
            found: body.len(),
        });
    }
    Ok(FeaturePayload {
        header: hdr,
        body: body.clone(),
    })
}

/// `ceil(log2 K)` bits per label.
pub fn label_bits(num_classes: usize) -> u32 {
    assert!(num_classes >= 2, "need at least two classes");
    usize::BITS - (num_classes - 1).leading_zeros()
}

pub fn encode_labelmap(map: &SegmentationMap, num_classes: usize) -> Result<BitStream> {
    if num_classes < 2 {
        return Err(CodecError::InvalidInput("need at least two classes".into()));
    }
    let width = label_bits(num_classes);
    let mut out = BitStream::with_capacity(map.len() * width as usize);
    for &l in map.labels() {
        if l as usize >= num_classes {
            return Err(CodecError::InvalidInput(format!(
                "label {l} not below {num_classes}"
            )));
        }
        out.push_bits(l as u32, width);
    }
    Ok(out)
}

/// Decodes row-major labels; out-of-range codes wrap modulo `num_classes`.
pub fn decode_labelmap(
    bits: &BitStream,
    height: usize,
    width: usize,
    num_classes: usize,
) -> Result<SegmentationMap> {
    if num_classes < 2 {
        return Err(CodecError::InvalidInput("need at least two classes".into()));
    }
    let w = label_bits(num_classes);
    let expected = height * width * w as usize;
    if bits.len() != expected {
        return Err(CodecError::LengthMismatch {
            expected,
            found: bits.len(),
        });
    }
    let labels = (0..height * width)
        .map(|i| (bits.read_bits(i * w as usize, w) as usize % num_classes) as u16)
        .collect();
    SegmentationMap::new(height, width, labels).map_err(|e| CodecError::InvalidInput(e.0))
}

/// An 8-bit RGB raster, row-major, interleaved R,G,B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(CodecError::InvalidInput(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar `3 x H x W` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.width * self.height;
        let mut out = vec![0.0f32; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c] as f32 / 255.0;
            }
        }
        Tensor::new(3, self.height, self.width, out).expect("non-empty image")
    }
}

/// 24 bits per pixel, R,G,B, row-major.
pub fn encode_image(image: &RgbImage) -> BitStream {
    BitStream::from_bytes(image.data.clone(), image.data.len() * 8).expect("whole bytes")
}

pub fn decode_image(bits: &BitStream, width: usize, height: usize) -> Result<RgbImage> {
    let expected = 24 * width * height;
    if bits.len() != expected {
        return Err(CodecError::LengthMismatch {
            expected,
            found: bits.len(),
        });
    }
    RgbImage::new(width, height, bits.as_bytes().to_vec())
}
