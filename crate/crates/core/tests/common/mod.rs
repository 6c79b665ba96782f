//! Hand-derived per-layer MAC counts, written out layer by layer from the
//! network description rather than from the builder in `model::arch`.

use semsplit::ModelConfig;

/// Convolution MACs per stage.
pub fn audit_stage_macs(cfg: &ModelConfig) -> [u64; 7] {
    let u = |v: usize| v as u64;
    let (h, w) = (u(cfg.input_height), u(cfg.input_width));
    let c0 = u(cfg.base_channels);
    let c5 = u(cfg.feature_channels);
    let k = u(cfg.num_classes);
    let area = |f: u64| (h / f) * (w / f);
    let (a2, a4, a8, a16, a32, a64) = (area(2), area(4), area(8), area(16), area(32), area(64));
    let conv =
        |kernel: u64, cin: u64, cout: u64, pixels: u64| kernel * kernel * cin * cout * pixels;

    let s0 = conv(3, 3, c0, a2) + conv(3, c0, c0, a4);
    let s1 = 2 * conv(3, c0, c0, a4);
    let s2 = conv(3, c0, 2 * c0, a8) + conv(3, 2 * c0, 2 * c0, a8) + conv(1, c0, 2 * c0, a8);

    let p3 = 2 * conv(3, 2 * c0, 2 * c0, a8);
    let i3 =
        conv(3, 2 * c0, 4 * c0, a16) + conv(3, 4 * c0, 4 * c0, a16) + conv(1, 2 * c0, 4 * c0, a16);
    let d3 = conv(3, 2 * c0, c0, a8) + conv(3, c0, c0, a8) + conv(1, 2 * c0, c0, a8);
    let comp3 = conv(1, 4 * c0, 2 * c0, a16);
    let s3 = p3 + i3 + d3 + comp3;

    let p4 = 2 * conv(3, 2 * c0, 2 * c0, a8);
    let i4 =
        conv(3, 4 * c0, 8 * c0, a32) + conv(3, 8 * c0, 8 * c0, a32) + conv(1, 4 * c0, 8 * c0, a32);
    let d4 = 2 * conv(3, c0, c0, a8);
    let comp4 = conv(1, 8 * c0, 2 * c0, a32);
    let s4 = p4 + i4 + d4 + comp4;

    let half = (c0 / 2).max(1);
    let p5 = conv(1, 2 * c0, c0, a8) + conv(3, c0, c0, a8) + conv(1, c0, 2 * c0, a8);
    let i5 = conv(1, 8 * c0, 4 * c0, a32)
        + conv(3, 4 * c0, 4 * c0, a64)
        + conv(1, 4 * c0, 8 * c0, a64)
        + conv(1, 8 * c0, 8 * c0, a64);
    let d5 = conv(1, c0, half, a8) + conv(3, half, half, a8) + conv(1, half, c0, a8);
    let fuse = conv(1, 11 * c0, c5, a64);
    let s5 = p5 + i5 + d5 + fuse;

    let branch = (c5 / u(cfg.ppm_bins.len())).max(1);
    let bins = u(cfg.ppm_bins.len());
    let ppm: u64 = cfg
        .ppm_bins
        .iter()
        .map(|&b| conv(1, c5, branch, u(b * b)))
        .sum();
    let ppm_out = conv(1, c5 + branch * bins, c5, a64);
    let head = conv(3, c5, 4 * c0, a8);
    let cls = conv(1, 4 * c0, k, a8);
    let s6 = ppm + ppm_out + head + cls;

    [s0, s1, s2, s3, s4, s5, s6]
}
