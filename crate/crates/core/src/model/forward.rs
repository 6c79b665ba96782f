use std::cell::Cell;

use crate::tensor::{self, relu_in_place, Filters, Tensor};

use super::{LayerSpec, ModelError, Result, SegmentationMap, WeightSet, NUM_STAGES, SPLIT_STAGE};

/// Receiver output: full-resolution logits and their per-pixel argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub logits: Tensor,
    pub map: SegmentationMap,
}

/// Per-stage output shapes and convolution MACs actually executed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    pub stage_shapes: [(usize, usize, usize); NUM_STAGES],
    pub stage_macs: [u64; NUM_STAGES],
}

struct Exec<'w> {
    weights: &'w WeightSet,
    macs: Cell<[u64; NUM_STAGES]>,
}

impl<'w> Exec<'w> {
    fn new(weights: &'w WeightSet) -> Self {
        Exec {
            weights,
            macs: Cell::new([0; NUM_STAGES]),
        }
    }

    fn conv(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let spec = self
            .weights
            .architecture()
            .conv(name)
            .unwrap_or_else(|| panic!("no convolution named {name}"));
        let filters = Filters::new(
            spec.out_channels,
            spec.in_channels,
            spec.kernel,
            self.weights.data(&format!("{name}.weight")),
        )?;
        let y = tensor::conv2d(
            x,
            filters,
            self.weights.data(&format!("{name}.bias")),
            spec.stride,
            spec.padding,
        )?;
        let mut macs = self.macs.get();
        macs[spec.stage] += (spec.kernel * spec.kernel) as u64
            * x.channels() as u64
            * y.channels() as u64
            * y.plane_len() as u64;
        self.macs.set(macs);
        Ok(y)
    }

    fn affine(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        debug_assert!(matches!(
            self.weights.architecture().layer(name),
            Some(LayerSpec::Affine { .. })
        ));
        Ok(tensor::affine_norm(
            x,
            self.weights.data(&format!("{name}.scale")),
            self.weights.data(&format!("{name}.shift")),
        )?)
    }

    fn conv_affine_relu(&self, conv: &str, norm: &str, x: &Tensor) -> Result<Tensor> {
        let mut y = self.affine(norm, &self.conv(conv, x)?)?;
        relu_in_place(&mut y);
        Ok(y)
    }

    fn skip(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let proj = format!("{prefix}.proj");
        if self.weights.architecture().layer(&proj).is_some() {
            self.conv(&proj, x)
        } else {
            Ok(x.clone())
        }
    }

    fn residual(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let y = self.conv_affine_relu(&format!("{prefix}.conv1"), &format!("{prefix}.bn1"), x)?;
        let y = self.affine(
            &format!("{prefix}.bn2"),
            &self.conv(&format!("{prefix}.conv2"), &y)?,
        )?;
        let mut out = tensor::add(&y, &self.skip(prefix, x)?)?;
        relu_in_place(&mut out);
        Ok(out)
    }

    fn bottleneck(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let y = self.conv_affine_relu(&format!("{prefix}.reduce"), &format!("{prefix}.bn1"), x)?;
        let y = self.conv_affine_relu(&format!("{prefix}.conv"), &format!("{prefix}.bn2"), &y)?;
        let y = self.affine(
            &format!("{prefix}.bn3"),
            &self.conv(&format!("{prefix}.expand"), &y)?,
        )?;
        let mut out = tensor::add(&y, &self.skip(prefix, x)?)?;
        relu_in_place(&mut out);
        Ok(out)
    }

    /// Adds the upsampled, projected I-branch into the P-branch.
    fn compensate(&self, name: &str, p: &Tensor, i: &Tensor) -> Result<Tensor> {
        let proj = self.conv(name, i)?;
        let up = tensor::bilinear_resize(&proj, p.height(), p.width())?;
        Ok(tensor::add(p, &up)?)
    }

    fn transmitter(
        &self,
        image: &Tensor,
        shapes: &mut [(usize, usize, usize); NUM_STAGES],
    ) -> Result<Tensor> {
        let cfg = self.weights.config();
        if image.shape() != (3, cfg.input_height, cfg.input_width) {
            return Err(ModelError::InputShape(format!(
                "expected 3x{}x{} image, got {:?}",
                cfg.input_height,
                cfg.input_width,
                image.shape()
            )));
        }
        // Center pixel values from [0, 1] onto [-1, 1].
        let centered: Vec<f32> = image.data().iter().map(|v| 2.0 * v - 1.0).collect();
        let x = Tensor::new(3, image.height(), image.width(), centered)?;

        let x = self.conv_affine_relu("s0.conv1", "s0.bn1", &x)?;
        let x = self.conv_affine_relu("s0.conv2", "s0.bn2", &x)?;
        shapes[0] = x.shape();
        let x = self.residual("s1.rb", &x)?;
        shapes[1] = x.shape();
        let x = self.residual("s2.rb", &x)?;
        shapes[2] = x.shape();

        let p = self.residual("s3.p", &x)?;
        let i = self.residual("s3.i", &x)?;
        let d = self.residual("s3.d", &x)?;
        let p = self.compensate("s3.comp", &p, &i)?;
        shapes[3] = i.shape();

        let p = self.residual("s4.p", &p)?;
        let i = self.residual("s4.i", &i)?;
        let d = self.residual("s4.d", &d)?;
        let p = self.compensate("s4.comp", &p, &i)?;
        shapes[4] = i.shape();

        let p = self.bottleneck("s5.p", &p)?;
        let i = self.bottleneck("s5.i", &i)?;
        let d = self.bottleneck("s5.d", &d)?;
        let p = tensor::adaptive_avg_pool_2d(&p, i.height(), i.width())?;
        let d = tensor::adaptive_avg_pool_2d(&d, i.height(), i.width())?;
        let fused = self.conv("s5.fuse", &tensor::concat_channels(&[&p, &i, &d])?)?;
        shapes[SPLIT_STAGE] = fused.shape();
        Ok(fused)
    }

    fn receiver(
        &self,
        features: &Tensor,
        shapes: &mut [(usize, usize, usize); NUM_STAGES],
    ) -> Result<Segmentation> {
        let cfg = self.weights.config();
        let (h, w) = cfg.split_dims();
        if features.shape() != (cfg.feature_channels, h, w) {
            return Err(ModelError::InputShape(format!(
                "expected {}x{h}x{w} features, got {:?}",
                cfg.feature_channels,
                features.shape()
            )));
        }
        let mut pyramid = vec![features.clone()];
        for &bins in &cfg.ppm_bins {
            let pooled = tensor::adaptive_avg_pool(features, bins)?;
            let mut y = self.conv(&format!("s6.ppm.b{bins}"), &pooled)?;
            relu_in_place(&mut y);
            pyramid.push(tensor::bilinear_resize(&y, h, w)?);
        }
        let parts: Vec<&Tensor> = pyramid.iter().collect();
        let mut ctx = self.conv("s6.ppm.out", &tensor::concat_channels(&parts)?)?;
        relu_in_place(&mut ctx);

        let (hh, hw) = cfg.head_dims();
        let up = tensor::bilinear_resize(&ctx, hh, hw)?;
        let y = self.conv_affine_relu("s6.head.conv", "s6.head.bn", &up)?;
        let coarse = self.conv("s6.head.cls", &y)?;
        shapes[6] = coarse.shape();

        let logits = tensor::bilinear_resize(&coarse, cfg.input_height, cfg.input_width)?;
        let map = argmax_map(&logits);
        Ok(Segmentation { logits, map })
    }
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
pub fn argmax_map(logits: &Tensor) -> SegmentationMap {
    let n = logits.plane_len();
    let mut best = logits.channel(0).to_vec();
    let mut labels = vec![0u16; n];
    for c in 1..logits.channels() {
        for ((b, l), &v) in best
            .iter_mut()
            .zip(labels.iter_mut())
            .zip(logits.channel(c))
        {
            if v > *b {
                *b = v;
                *l = c as u16;
            }
        }
    }
    SegmentationMap::new(logits.height(), logits.width(), labels)
        .expect("logit planes are non-empty")
}

/// Stages 0-5 plus branch fusion: `3xHxW` image in `[0, 1]` to the
/// `C5 x H/64 x W/64` feature map that crosses the link.
pub fn forward_transmitter(image: &Tensor, weights: &WeightSet) -> Result<Tensor> {
    let mut shapes = Default::default();
    Exec::new(weights).transmitter(image, &mut shapes)
}

/// Pyramid pooling and segmentation head on received features.
pub fn forward_receiver(features: &Tensor, weights: &WeightSet) -> Result<Segmentation> {
    let mut shapes = Default::default();
    Exec::new(weights).receiver(features, &mut shapes)
}

pub fn forward_full(image: &Tensor, weights: &WeightSet) -> Result<Segmentation> {
    forward_receiver(&forward_transmitter(image, weights)?, weights)
}

/// [`forward_full`] that also reports per-stage shapes and executed MACs.
pub fn forward_full_traced(
    image: &Tensor,
    weights: &WeightSet,
) -> Result<(Segmentation, ForwardTrace)> {
    let exec = Exec::new(weights);
    let mut trace = ForwardTrace::default();
    let features = exec.transmitter(image, &mut trace.stage_shapes)?;
    let seg = exec.receiver(&features, &mut trace.stage_shapes)?;
    trace.stage_macs = exec.macs.get();
    Ok((seg, trace))
}
