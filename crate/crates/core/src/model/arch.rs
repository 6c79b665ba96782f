use std::collections::HashMap;

use serde::Serialize;

use super::{ModelConfig, Result, NUM_STAGES};

/// One convolution in the layer inventory, with its resolved geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvSpec {
    pub name: String,
    pub stage: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvSpec {
    /// `k*k*Cin*Cout*Hout*Wout`.
    pub fn macs(&self) -> u64 {
        (self.kernel * self.kernel) as u64
            * self.in_channels as u64
            * self.out_channels as u64
            * self.out_height as u64
            * self.out_width as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Affine {
        name: String,
        stage: usize,
        channels: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv(c) => &c.name,
            LayerSpec::Affine { name, .. } => name,
        }
    }

    pub fn stage(&self) -> usize {
        match self {
            LayerSpec::Conv(c) => c.stage,
            LayerSpec::Affine { stage, .. } => *stage,
        }
    }

    /// `(parameter name, shape)` pairs owned by this layer.
    pub fn params(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            LayerSpec::Conv(c) => vec![
                (
                    format!("{}.weight", c.name),
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                ),
                (format!("{}.bias", c.name), vec![c.out_channels]),
            ],
            LayerSpec::Affine { name, channels, .. } => vec![
                (format!("{name}.scale"), vec![*channels]),
                (format!("{name}.shift"), vec![*channels]),
            ],
        }
    }
}

/// One row of the per-stage summary table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageInfo {
    pub stage: usize,
    pub operation: &'static str,
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// The full layer inventory derived from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Architecture {
    config: ModelConfig,
    layers: Vec<LayerSpec>,
    index: HashMap<String, usize>,
    stages: Vec<StageInfo>,
}

/// `(channels, height, width)` bookkeeping while laying out the network.
type Shape = (usize, usize, usize);

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn conv(
        &mut self,
        name: String,
        stage: usize,
        input: Shape,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Shape {
        let padding = k / 2;
        let out_h = (input.1 + 2 * padding - k) / stride + 1;
        let out_w = (input.2 + 2 * padding - k) / stride + 1;
        self.layers.push(LayerSpec::Conv(ConvSpec {
            name,
            stage,
            in_channels: input.0,
            out_channels: out_ch,
            kernel: k,
            stride,
            padding,
            out_height: out_h,
            out_width: out_w,
        }));
        (out_ch, out_h, out_w)
    }

    fn affine(&mut self, name: String, stage: usize, channels: usize) {
        self.layers.push(LayerSpec::Affine {
            name,
            stage,
            channels,
        });
    }

    /// conv3x3(stride)-affine-relu-conv3x3-affine, plus skip, then relu.
    fn residual(
        &mut self,
        prefix: &str,
        stage: usize,
        input: Shape,
        out_ch: usize,
        stride: usize,
    ) -> Shape {
        let mid = self.conv(format!("{prefix}.conv1"), stage, input, out_ch, 3, stride);
        self.affine(format!("{prefix}.bn1"), stage, out_ch);
        let out = self.conv(format!("{prefix}.conv2"), stage, mid, out_ch, 3, 1);
        self.affine(format!("{prefix}.bn2"), stage, out_ch);
        if stride != 1 || input.0 != out_ch {
            self.conv(format!("{prefix}.proj"), stage, input, out_ch, 1, stride);
        }
        out
    }

    /// 1x1 reduce, 3x3 (stride), 1x1 expand, each followed by an affine.
    fn bottleneck(
        &mut self,
        prefix: &str,
        stage: usize,
        input: Shape,
        mid_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Shape {
        let s = self.conv(format!("{prefix}.reduce"), stage, input, mid_ch, 1, 1);
        self.affine(format!("{prefix}.bn1"), stage, mid_ch);
        let s = self.conv(format!("{prefix}.conv"), stage, s, mid_ch, 3, stride);
        self.affine(format!("{prefix}.bn2"), stage, mid_ch);
        let out = self.conv(format!("{prefix}.expand"), stage, s, out_ch, 1, 1);
        self.affine(format!("{prefix}.bn3"), stage, out_ch);
        if stride != 1 || input.0 != out_ch {
            self.conv(format!("{prefix}.proj"), stage, input, out_ch, 1, stride);
        }
        out
    }
}

impl Architecture {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c0 = config.base_channels;
        let c5 = config.feature_channels;
        let mut b = Builder { layers: Vec::new() };
        let mut stages = Vec::with_capacity(NUM_STAGES);
        let mut record = |stage, operation, s: Shape| {
            stages.push(StageInfo {
                stage,
                operation,
                out_channels: s.0,
                out_height: s.1,
                out_width: s.2,
            })
        };

        let input = (3, config.input_height, config.input_width);
        let x = b.conv("s0.conv1".into(), 0, input, c0, 3, 2);
        b.affine("s0.bn1".into(), 0, c0);
        let x = b.conv("s0.conv2".into(), 0, x, c0, 3, 2);
        b.affine("s0.bn2".into(), 0, c0);
        record(0, "2 x Conv", x);

        let x = b.residual("s1.rb", 1, x, c0, 1);
        record(1, "RB", x);
        let x = b.residual("s2.rb", 2, x, 2 * c0, 2);
        record(2, "RB", x);

        // Three branches: P keeps 1/8 detail, I downsamples, D stays at 1/8
        // with a narrow width. I is the branch whose resolution the stage
        // table reports.
        let p = b.residual("s3.p", 3, x, 2 * c0, 1);
        let i = b.residual("s3.i", 3, x, 4 * c0, 2);
        let d = b.residual("s3.d", 3, x, c0, 1);
        b.conv("s3.comp".into(), 3, i, 2 * c0, 1, 1);
        record(3, "RB | RB | RB", i);

        let p = b.residual("s4.p", 4, p, 2 * c0, 1);
        let i = b.residual("s4.i", 4, i, 8 * c0, 2);
        let d = b.residual("s4.d", 4, d, c0, 1);
        b.conv("s4.comp".into(), 4, i, 2 * c0, 1, 1);
        record(4, "RB | RB | RB", i);

        let p = b.bottleneck("s5.p", 5, p, c0, 2 * c0, 1);
        let i = b.bottleneck("s5.i", 5, i, 4 * c0, 8 * c0, 2);
        let d = b.bottleneck("s5.d", 5, d, (c0 / 2).max(1), c0, 1);
        debug_assert_eq!((i.1, i.2), config.split_dims());
        let fused_in = (p.0 + i.0 + d.0, i.1, i.2);
        let feat = b.conv("s5.fuse".into(), 5, fused_in, c5, 1, 1);
        record(5, "RBB | RBB | RBB", feat);

        let branch = config.ppm_branch_channels();
        for &bins in &config.ppm_bins {
            b.conv(format!("s6.ppm.b{bins}"), 6, (c5, bins, bins), branch, 1, 1);
        }
        let cat = (c5 + branch * config.ppm_bins.len(), feat.1, feat.2);
        b.conv("s6.ppm.out".into(), 6, cat, c5, 1, 1);
        let (hh, hw) = config.head_dims();
        let h = b.conv(
            "s6.head.conv".into(),
            6,
            (c5, hh, hw),
            config.head_channels(),
            3,
            1,
        );
        b.affine("s6.head.bn".into(), 6, config.head_channels());
        let logits = b.conv("s6.head.cls".into(), 6, h, config.num_classes, 1, 1);
        record(6, "PPM + 2 x Conv", logits);

        let index = b
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name().to_string(), i))
            .collect();
        Ok(Architecture {
            config: config.clone(),
            layers: b.layers,
            index,
            stages,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.index.get(name).map(|&i| &self.layers[i])
    }

    pub fn conv(&self, name: &str) -> Option<&ConvSpec> {
        match self.layer(name)? {
            LayerSpec::Conv(c) => Some(c),
            LayerSpec::Affine { .. } => None,
        }
    }

    pub fn stages(&self) -> &[StageInfo] {
        &self.stages
    }

    /// Every parameter tensor in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(LayerSpec::params).collect()
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.layers.iter().filter_map(|l| match l {
            LayerSpec::Conv(c) => Some(c),
            LayerSpec::Affine { .. } => None,
        })
    }
}

/// Per-stage operation kind, output channels and output resolution.
pub fn describe(config: &ModelConfig) -> Result<Vec<StageInfo>> {
    Ok(Architecture::new(config)?.stages)
}

/// Convolution MACs for each of the seven stages.
pub fn stage_macs(config: &ModelConfig) -> Result<[u64; NUM_STAGES]> {
    let arch = Architecture::new(config)?;
    let mut out = [0u64; NUM_STAGES];
    for c in arch.convs() {
        out[c.stage] += c.macs();
    }
    Ok(out)
}

/// `(transmitter MACs, receiver MACs)` when stages `0..=boundary` run on
/// the transmitter. Only convolutions are counted.
pub fn mac_count(config: &ModelConfig, boundary: usize) -> Result<(u64, u64)> {
    if boundary >= NUM_STAGES {
        return Err(super::ModelError::InvalidConfig(format!(
            "split boundary {boundary} must be in 0..{NUM_STAGES}"
        )));
    }
    let per_stage = stage_macs(config)?;
    let tx = per_stage[..=boundary].iter().sum();
    let rx = per_stage[boundary + 1..].iter().sum();
    Ok((tx, rx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SPLIT_DOWNSAMPLE;

    const STAGE_DOWNSAMPLE: [usize; NUM_STAGES] = [4, 4, 8, 16, 32, SPLIT_DOWNSAMPLE, 8];

    fn resolutions(config: &ModelConfig) -> Vec<usize> {
        describe(config)
            .unwrap()
            .iter()
            .map(|s| s.out_height)
            .collect()
    }

    #[test]
    fn full_scale_matches_stage_table() {
        let cfg = ModelConfig::full_scale();
        assert_eq!(resolutions(&cfg), vec![256, 256, 128, 64, 32, 16, 128]);
    }

    #[test]
    fn desk_scale_follows_same_ratios() {
        assert_eq!(
            resolutions(&ModelConfig::desk_scale()),
            vec![64, 64, 32, 16, 8, 4, 32]
        );
    }

    #[test]
    fn head_and_stage_two_share_resolution() {
        for h in [64usize, 128, 256, 512] {
            let cfg = ModelConfig {
                input_height: h,
                input_width: 2 * h,
                ppm_bins: vec![1],
                ..ModelConfig::desk_scale()
            };
            let st = describe(&cfg).unwrap();
            assert_eq!(
                (st[6].out_height, st[6].out_width),
                (st[2].out_height, st[2].out_width)
            );
            for (s, f) in st.iter().zip(STAGE_DOWNSAMPLE) {
                assert_eq!(s.out_height, h / f);
                assert_eq!(s.out_width, 2 * h / f);
            }
        }
    }

    #[test]
    fn single_conv_mac_formula() {
        let c = ConvSpec {
            name: "x".into(),
            stage: 0,
            in_channels: 2,
            out_channels: 3,
            kernel: 1,
            stride: 1,
            padding: 0,
            out_height: 4,
            out_width: 4,
        };
        assert_eq!(c.macs(), 96);
    }

    #[test]
    fn mac_boundaries_are_additive() {
        for cfg in [ModelConfig::desk_scale(), ModelConfig::full_scale()] {
            let per_stage = stage_macs(&cfg).unwrap();
            let total: u64 = per_stage.iter().sum();
            for b in 0..NUM_STAGES {
                let (tx, rx) = mac_count(&cfg, b).unwrap();
                assert_eq!(tx + rx, total);
                assert_eq!(tx, per_stage[..=b].iter().sum::<u64>());
            }
            let (tx6, rx6) = mac_count(&cfg, 6).unwrap();
            let (tx5, rx5) = mac_count(&cfg, 5).unwrap();
            assert_eq!(rx6, 0);
            assert_eq!(tx6, tx5 + per_stage[6]);
            assert!(tx5 < tx6 && rx5 > rx6);
        }
        assert!(mac_count(&ModelConfig::desk_scale(), 7).is_err());
    }

    #[test]
    fn layer_names_are_unique() {
        let arch = Architecture::new(&ModelConfig::full_scale()).unwrap();
        assert_eq!(arch.index.len(), arch.layers.len());
    }
}
