//! Dense channel-major tensors and the inference primitives built on them.
//!
//! Everything here is a pure function over immutable inputs. Arithmetic is
//! single precision; accumulation order is fixed so repeated calls are
//! bitwise identical.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("tensor dimensions must be positive, got {channels}x{height}x{width}")]
    EmptyShape {
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("data length {len} does not match shape {channels}x{height}x{width}")]
    DataLength {
        len: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A rank-3 `channels x height x width` array stored channel-major,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(TensorError::EmptyShape {
                channels,
                height,
                width,
            });
        }
        if data.len() != channels * height * width {
            return Err(TensorError::DataLength {
                len: data.len(),
                channels,
                height,
                width,
            });
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::full(channels, height, width, 0.0)
    }

    pub fn full(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies out channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.channels {
            return Err(TensorError::InvalidArgument(format!(
                "channel range {start}..{end} out of bounds for {} channels",
                self.channels
            )));
        }
        let n = self.plane_len();
        Tensor::new(
            end - start,
            self.height,
            self.width,
            self.data[start * n..end * n].to_vec(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Borrowed view of a `[out_ch, in_ch, k, k]` convolution kernel bank.
#[derive(Debug, Clone, Copy)]
pub struct Filters<'a> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub data: &'a [f32],
}

impl<'a> Filters<'a> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        data: &'a [f32],
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || size == 0 {
            return Err(TensorError::InvalidArgument(
                "kernel dimensions must be positive".into(),
            ));
        }
        if size.is_multiple_of(2) {
            return Err(TensorError::InvalidArgument(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        if data.len() != out_channels * in_channels * size * size {
            return Err(TensorError::InvalidArgument(format!(
                "kernel data length {} does not match [{out_channels}, {in_channels}, {size}, {size}]",
                data.len()
            )));
        }
        Ok(Filters {
            out_channels,
            in_channels,
            size,
            data,
        })
    }
}

/// Output extent of a convolution along one axis, or `None` when it would
/// be smaller than one.
pub fn conv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Zero-padded 2-D cross-correlation with per-output-channel bias.
pub fn conv2d(
    input: &Tensor,
    filters: Filters<'_>,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    if filters.in_channels != input.channels {
        return Err(TensorError::ShapeMismatch(format!(
            "kernel expects {} input channels, tensor has {}",
            filters.in_channels, input.channels
        )));
    }
    if bias.len() != filters.out_channels {
        return Err(TensorError::ShapeMismatch(format!(
            "bias length {} != {} output channels",
            bias.len(),
            filters.out_channels
        )));
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument(
            "stride must be positive".into(),
        ));
    }
    let k = filters.size;
    let (out_h, out_w) = match (
        conv_output_len(input.height, k, stride, padding),
        conv_output_len(input.width, k, stride, padding),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(TensorError::InvalidArgument(format!(
                "convolution output would be empty for input {}x{}, kernel {k}, stride {stride}, padding {padding}",
                input.height, input.width
            )))
        }
    };

    let in_h = input.height as isize;
    let in_w = input.width as isize;
    let pad = padding as isize;
    let s = stride as isize;
    let plane_in = input.plane_len();
    let kernel_len = input.channels * k * k;

    let mut out = vec![0.0f32; filters.out_channels * out_h * out_w];
    out.par_chunks_mut(out_h * out_w)
        .enumerate()
        .for_each(|(oc, plane)| {
            plane.fill(bias[oc]);
            let kernel = &filters.data[oc * kernel_len..(oc + 1) * kernel_len];
            for ic in 0..input.channels {
                let src = &input.data[ic * plane_in..(ic + 1) * plane_in];
                for ky in 0..k {
                    for kx in 0..k {
                        let w = kernel[(ic * k + ky) * k + kx];
                        let dx = kx as isize - pad;
                        // Valid output columns: 0 <= ox*s + dx < in_w.
                        let ox_lo = if dx >= 0 { 0 } else { (-dx + s - 1) / s };
                        let ox_hi = (in_w - 1 - dx).div_euclid(s).min(out_w as isize - 1);
                        if ox_hi < ox_lo {
                            continue;
                        }
                        let (ox_lo, ox_hi) = (ox_lo as usize, ox_hi as usize);
                        for oy in 0..out_h {
                            let iy = (oy as isize) * s + ky as isize - pad;
                            if iy < 0 || iy >= in_h {
                                continue;
                            }
                            let row =
                                &src[iy as usize * input.width..(iy as usize + 1) * input.width];
                            let dst = &mut plane[oy * out_w..(oy + 1) * out_w];
                            if stride == 1 {
                                let start = (ox_lo as isize + dx) as usize;
                                let len = ox_hi - ox_lo + 1;
                                for (o, &v) in
                                    dst[ox_lo..=ox_hi].iter_mut().zip(&row[start..start + len])
                                {
                                    *o += w * v;
                                }
                            } else {
                                for ox in ox_lo..=ox_hi {
                                    let ix = (ox as isize * s + dx) as usize;
                                    dst[ox] += w * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
    Tensor::new(filters.out_channels, out_h, out_w, out)
}

/// Per-channel `scale * x + shift`; inference-time batch norm folded.
pub fn affine_norm(input: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    if scale.len() != input.channels || shift.len() != input.channels {
        return Err(TensorError::ShapeMismatch(format!(
            "affine params ({}, {}) do not match {} channels",
            scale.len(),
            shift.len(),
            input.channels
        )));
    }
    let n = input.plane_len();
    let mut data = input.data.clone();
    for (c, plane) in data.chunks_mut(n).enumerate() {
        let (a, b) = (scale[c], shift[c]);
        for v in plane {
            *v = a * *v + b;
        }
    }
    Tensor::new(input.channels, input.height, input.width, data)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub(crate) fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// Bin edges `[floor(i*n/bins), floor((i+1)*n/bins))`.
fn pool_window(i: usize, n: usize, bins: usize) -> (usize, usize) {
    (i * n / bins, (i + 1) * n / bins)
}

/// Average pooling onto an `out_h x out_w` grid of floor-aligned windows.
pub fn adaptive_avg_pool_2d(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 || out_h > input.height || out_w > input.width {
        return Err(TensorError::InvalidArgument(format!(
            "cannot pool {}x{} onto {out_h}x{out_w}",
            input.height, input.width
        )));
    }
    let mut out = Vec::with_capacity(input.channels * out_h * out_w);
    for c in 0..input.channels {
        let plane = input.channel(c);
        for i in 0..out_h {
            let (y0, y1) = pool_window(i, input.height, out_h);
            for j in 0..out_w {
                let (x0, x1) = pool_window(j, input.width, out_w);
                let mut sum = 0.0f32;
                for y in y0..y1 {
                    for &v in &plane[y * input.width + x0..y * input.width + x1] {
                        sum += v;
                    }
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f32);
            }
        }
    }
    Tensor::new(input.channels, out_h, out_w, out)
}

/// Square adaptive average pooling to `bins x bins`.
pub fn adaptive_avg_pool(input: &Tensor, bins: usize) -> Result<Tensor> {
    adaptive_avg_pool_2d(input, bins, bins)
}

/// Source sample positions for half-pixel-center bilinear resampling.
fn resample_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    let last = (in_len - 1) as f32;
    (0..out_len)
        .map(|d| {
            let src = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f32)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::InvalidArgument(format!(
            "resize target {out_h}x{out_w} must be positive"
        )));
    }
    if out_h == input.height && out_w == input.width {
        return Ok(input.clone());
    }
    let ys = resample_axis(input.height, out_h);
    let xs = resample_axis(input.width, out_w);
    let mut out = vec![0.0f32; input.channels * out_h * out_w];
    out.par_chunks_mut(out_h * out_w)
        .enumerate()
        .for_each(|(c, plane)| {
            let src = input.channel(c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &src[y0 * input.width..(y0 + 1) * input.width];
                let r1 = &src[y1 * input.width..(y1 + 1) * input.width];
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    plane[oy * out_w + ox] = top + (bottom - top) * fy;
                }
            }
        });
    Tensor::new(input.channels, out_h, out_w, out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "cannot add {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.channels, a.height, a.width, data)
}

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::InvalidArgument("nothing to concatenate".into()))?;
    let (h, w) = (first.height, first.width);
    if let Some(bad) = parts.iter().find(|t| t.height != h || t.width != w) {
        return Err(TensorError::ShapeMismatch(format!(
            "cannot concatenate {}x{} with {}x{}",
            h, w, bad.height, bad.width
        )));
    }
    let channels = parts.iter().map(|t| t.channels).sum();
    let mut data = Vec::with_capacity(channels * h * w);
    for t in parts {
        data.extend_from_slice(&t.data);
    }
    Tensor::new(channels, h, w, data)
}
