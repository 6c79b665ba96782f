//! SNR sweeps over every (modulation, SNR, image, pipeline) trial.
//!
//! Trials are independent: each draws its channel noise from a seed derived
//! from `(master seed, modulation, SNR index, image index, pipeline)`, and
//! results are gathered in index order before any aggregation, so the
//! output does not depend on the worker count. Work that does not depend
//! on the channel (the noiseless network passes, the encoded payloads) is
//! done once per image. When a noisy transmission happens to arrive intact
//! the noiseless result is reused, which is exactly what recomputing it
//! would give.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::dataset::{load_dataset, Sample};
use super::pipelines::split_receiver;
use super::results::{PerPipeline, RowExtra, SweepMeta, SweepResult, SweepRow};
use super::stats::median;
use super::{
    io_err, write_csv, write_plot, ExperimentError, ExperimentSpec, ReferenceMode, Result,
};
use crate::codec::{self, BitStream};
use crate::metrics::{bits_per_image, confusion, miou, AbsentPolicy, ConfusionMatrix, Pipeline};
use crate::model::{self, SegmentationMap, WeightSet};
use crate::phy::{self, ChannelConfig, Modulation};
use crate::seed;

/// Per-image state shared by every trial on that image.
struct Prepared {
    reference: SegmentationMap,
    /// Noiseless full-network map.
    clean_full: SegmentationMap,
    /// Noiseless split map (quantization only).
    clean_split: Option<SegmentationMap>,
    image_bits: Option<BitStream>,
    label_bits: Option<BitStream>,
    split_payload: Option<(BitStream, BitStream)>,
    height: usize,
    width: usize,
}

struct Scored {
    cm: ConfusionMatrix,
    miou: Option<f64>,
}

fn score(
    reference: &SegmentationMap,
    map: &SegmentationMap,
    classes: usize,
    policy: AbsentPolicy,
) -> Result<Scored> {
    let cm = confusion(reference, map, classes)?;
    let miou = miou(&cm, policy).mean;
    Ok(Scored { cm, miou })
}

struct Trial {
    pipeline: Pipeline,
    scored: Scored,
    bit_errors: u64,
    link_bits: u64,
}

fn prepare(sample: &Sample, spec: &ExperimentSpec, weights: &WeightSet) -> Result<Prepared> {
    let classes = weights.config().num_classes;
    // The full network is the receiver half applied to the transmitter
    // half, bit for bit, so the transmitter output is computed once.
    let features = model::forward_transmitter(&sample.image.to_tensor(), weights)?;
    let clean_full = model::forward_receiver(&features, weights)?.map;
    let wants = |p| spec.pipelines.contains(&p);
    let image_bits = wants(Pipeline::Traditional).then(|| codec::encode_image(&sample.image));
    let label_bits = if wants(Pipeline::FullTx) {
        Some(codec::encode_labelmap(&clean_full, classes)?)
    } else {
        None
    };
    let (split_payload, clean_split) = if wants(Pipeline::Split) {
        let payload = codec::quantize_features(&features, spec.bits()?)?;
        let (header, body) = codec::serialize_payload(&payload)?;
        let map = split_receiver(&header, &body, weights)?;
        (Some((header, body)), Some(map))
    } else {
        (None, None)
    };
    let reference = match spec.reference_mode {
        ReferenceMode::GroundTruth => sample.ground_truth.clone(),
        ReferenceMode::NoiselessOutput => clean_full.clone(),
    };
    Ok(Prepared {
        reference,
        clean_full,
        clean_split,
        image_bits,
        label_bits,
        split_payload,
        height: sample.image.height(),
        width: sample.image.width(),
    })
}

impl Prepared {
    fn clean_map(&self, p: Pipeline) -> &SegmentationMap {
        match p {
            Pipeline::Split => self.clean_split.as_ref().expect("split prepared"),
            _ => &self.clean_full,
        }
    }

    /// Bits put on the air per image, header included.
    fn bits_sent(&self, p: Pipeline) -> u64 {
        let n = match p {
            Pipeline::Traditional => self.image_bits.as_ref().map_or(0, |b| b.len()),
            Pipeline::FullTx => self.label_bits.as_ref().map_or(0, |b| b.len()),
            Pipeline::Split => self
                .split_payload
                .as_ref()
                .map_or(0, |(h, b)| h.len() + b.len()),
        };
        n as u64
    }
}

fn run_trial(
    prep: &Prepared,
    pipeline: Pipeline,
    channel: &ChannelConfig,
    weights: &WeightSet,
    policy: AbsentPolicy,
) -> Result<Trial> {
    let classes = weights.config().num_classes;
    let (sent, received) = match pipeline {
        Pipeline::Traditional => {
            let sent = prep.image_bits.as_ref().expect("traditional prepared");
            (sent, phy::transmit(sent, channel))
        }
        Pipeline::FullTx => {
            let sent = prep.label_bits.as_ref().expect("full_tx prepared");
            (sent, phy::transmit(sent, channel))
        }
        Pipeline::Split => {
            let (_, body) = prep.split_payload.as_ref().expect("split prepared");
            (body, phy::transmit(body, channel))
        }
    };
    let bit_errors = sent.hamming_distance(&received) as u64;
    let fresh;
    let map = if bit_errors == 0 {
        prep.clean_map(pipeline)
    } else {
        fresh = match pipeline {
            Pipeline::Traditional => {
                let img = codec::decode_image(&received, prep.width, prep.height)?;
                model::forward_full(&img.to_tensor(), weights)?.map
            }
            Pipeline::FullTx => {
                codec::decode_labelmap(&received, prep.height, prep.width, classes)?
            }
            Pipeline::Split => {
                let (header, _) = prep.split_payload.as_ref().expect("split prepared");
                split_receiver(header, &received, weights)?
            }
        };
        &fresh
    };
    Ok(Trial {
        pipeline,
        scored: score(&prep.reference, map, classes, policy)?,
        bit_errors,
        link_bits: sent.len() as u64,
    })
}

/// Noise seed of one trial.
pub(crate) fn trial_seed(
    master: u64,
    modulation: Modulation,
    snr_index: usize,
    image_index: usize,
    pipeline: Pipeline,
) -> u64 {
    seed::derive(
        master,
        &[
            modulation.index(),
            snr_index as u64,
            image_index as u64,
            pipeline.index(),
        ],
    )
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::InvalidSpec(format!("cannot start {workers} workers: {e}")))
}

/// Summary over images of one pipeline's scores.
fn summarize(
    scores: &[&Scored],
    classes: usize,
    policy: AbsentPolicy,
) -> (Option<f64>, Option<f64>) {
    let mut total = ConfusionMatrix::new(classes);
    for s in scores {
        total += &s.cm;
    }
    let per_image: Vec<f64> = scores.iter().filter_map(|s| s.miou).collect();
    (miou(&total, policy).mean, median(&per_image))
}

/// Runs the whole grid and returns one result per modulation, in the
/// order the config lists them. `workers == 0` uses one worker per core.
pub fn sweep(spec: &ExperimentSpec, workers: usize) -> Result<Vec<SweepResult>> {
    spec.validate()?;
    let samples = load_dataset(spec)?;
    let weights = model::build(&spec.model_config())?;
    sweep_samples(spec, &samples, &weights, workers)
}

pub(crate) fn sweep_samples(
    spec: &ExperimentSpec,
    samples: &[Sample],
    weights: &WeightSet,
    workers: usize,
) -> Result<Vec<SweepResult>> {
    let cfg = weights.config().clone();
    let classes = cfg.num_classes;
    let policy = spec.absent_classes;
    let bits = spec.bits()?;
    let pool = pool(workers)?;

    let prepared: Vec<Prepared> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| prepare(s, spec, weights))
            .collect::<Result<_>>()
    })?;
    for prep in &prepared {
        for &p in &spec.pipelines {
            debug_assert_eq!(prep.bits_sent(p), bits_per_image(p, &cfg, bits));
        }
    }

    let mut ceiling = PerPipeline::splat(None);
    let mut ceiling_median = PerPipeline::splat(None);
    for &p in &spec.pipelines {
        let scores = prepared
            .iter()
            .map(|prep| score(&prep.reference, prep.clean_map(p), classes, policy))
            .collect::<Result<Vec<_>>>()?;
        let (pooled, med) = summarize(&scores.iter().collect::<Vec<_>>(), classes, policy);
        ceiling.set(p, pooled);
        ceiling_median.set(p, med);
    }

    let snrs = &spec.channel.snr_db;
    let grid: Vec<(usize, usize, usize)> = (0..spec.channel.modulations.len())
        .flat_map(|m| (0..snrs.len()).flat_map(move |s| (0..samples.len()).map(move |i| (m, s, i))))
        .collect();
    let trials: Vec<Vec<Trial>> = pool.install(|| {
        grid.par_iter()
            .map(|&(mi, si, ii)| {
                let modulation = spec.channel.modulations[mi];
                spec.pipelines
                    .iter()
                    .map(|&p| {
                        let channel = ChannelConfig {
                            modulation,
                            snr_db: snrs[si],
                            seed: trial_seed(spec.seed, modulation, si, ii, p),
                        };
                        run_trial(&prepared[ii], p, &channel, weights, policy)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()
    })?;

    let per_cell = samples.len();
    let mut results = Vec::with_capacity(spec.channel.modulations.len());
    for (mi, &modulation) in spec.channel.modulations.iter().enumerate() {
        let mut rows = Vec::with_capacity(snrs.len());
        for (si, &snr_db) in snrs.iter().enumerate() {
            let start = (mi * snrs.len() + si) * per_cell;
            let cell = &trials[start..start + per_cell];
            let mut row_miou = PerPipeline::splat(None);
            let mut row_median = PerPipeline::splat(None);
            let mut row_bits = PerPipeline::splat(None);
            let (mut errors, mut link_bits) = (0u64, 0u64);
            for &p in &spec.pipelines {
                let scores: Vec<&Scored> = cell
                    .iter()
                    .flat_map(|t| t.iter().filter(|t| t.pipeline == p))
                    .map(|t| &t.scored)
                    .collect();
                let (pooled, med) = summarize(&scores, classes, policy);
                row_miou.set(p, pooled);
                row_median.set(p, med);
                row_bits.set(p, Some(prepared[0].bits_sent(p)));
            }
            for t in cell.iter().flatten() {
                errors += t.bit_errors;
                link_bits += t.link_bits;
            }
            rows.push(SweepRow {
                snr_db,
                miou: row_miou,
                extra: Some(RowExtra {
                    median_miou: row_median,
                    ber_measured: Some(errors as f64 / link_bits as f64),
                    ber_theoretical: Some(phy::ber_theoretical(modulation, snr_db)),
                    bits: row_bits,
                }),
            });
        }
        results.push(SweepResult {
            rows,
            meta: Some(SweepMeta {
                version: super::ARTIFACT_VERSION.into(),
                modulation,
                snr_definition: "Es/N0 in dB".into(),
                num_images: samples.len(),
                ceiling_miou: ceiling,
                ceiling_median_miou: ceiling_median,
                spec: spec.clone(),
            }),
        });
    }
    Ok(results)
}

/// File stem used for a modulation's outputs.
pub fn output_stem(modulation: Modulation) -> String {
    modulation.name().to_ascii_lowercase()
}

/// Runs [`sweep`] and writes `<modulation>.csv` (plus siblings) and
/// `<modulation>.svg` per modulation into `dir`. Nothing is written unless
/// the whole sweep succeeds. Returns the CSV paths.
pub fn sweep_to_dir(spec: &ExperimentSpec, dir: &Path, workers: usize) -> Result<Vec<PathBuf>> {
    let results = sweep(spec, workers)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for r in &results {
        let stem = output_stem(r.modulation().expect("sweep results carry metadata"));
        let csv = dir.join(format!("{stem}.csv"));
        write_csv(r, &csv)?;
        write_plot(std::slice::from_ref(r), &dir.join(format!("{stem}.svg")))?;
        written.push(csv);
    }
    Ok(written)
}
