//! Synthetic scenes and PPM/PGM ingestion.
//!
//! Images are binary PPM (`P6`, maxval 255). Label maps are binary PGM
//! (`P5`) whose pixel values are class indices, one byte per pixel for
//! maxval up to 255 and two big-endian bytes above that.

use std::path::{Path, PathBuf};

use rand::Rng;

use super::{io_err, ExperimentError, Result};
use crate::codec::RgbImage;
use crate::model::SegmentationMap;
use crate::seed;

/// One image and its ground-truth label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image: RgbImage,
    pub ground_truth: SegmentationMap,
}

/// Fixed per-class base color, spread over the RGB cube.
fn class_color(class: usize) -> [u8; 3] {
    let h = seed::derive(0x00C0_10B5, &[class as u64]);
    [(h >> 8) as u8, (h >> 24) as u8, (h >> 40) as u8]
}

/// `n` scenes of `height x width` pixels over `classes` labels.
///
/// Each scene is a background class plus 3 to 8 rectangles or ellipses
/// painted in order, each filled with its class color plus uniform noise
/// of up to 12 levels per channel. The last region always covers its own
/// center pixel and never uses the class of some pixel it leaves
/// uncovered, so every map holds at least two classes. Scene `i` depends
/// only on `(seed, i)`.
pub fn generate_synthetic(
    n: usize,
    classes: usize,
    (height, width): (usize, usize),
    seed: u64,
) -> Vec<Sample> {
    assert!(classes >= 2, "need at least two classes");
    assert!(height * width >= 2, "need at least two pixels");
    (0..n)
        .map(|i| synthetic_scene(classes, height, width, seed, i as u64))
        .collect()
}

fn synthetic_scene(classes: usize, height: usize, width: usize, seed: u64, index: u64) -> Sample {
    let mut rng = seed::substream(seed, &[0x5CE4E, index]);
    let background = rng.random_range(0..classes) as u16;
    let mut labels = vec![background; height * width];
    let regions = rng.random_range(3..=8);
    for r in 0..regions {
        let class = rng.random_range(0..classes);
        let cy = rng.random_range(0..height) as f64 + 0.5;
        let cx = rng.random_range(0..width) as f64 + 0.5;
        let ry = (rng.random_range(0.05..0.3) * height as f64).max(1.0);
        let rx = (rng.random_range(0.05..0.3) * width as f64).max(1.0);
        let ellipse = rng.random_bool(0.5);
        let mut inside: Vec<usize> = Vec::new();
        for y in (cy - ry).floor().max(0.0) as usize..((cy + ry).ceil() as usize).min(height) {
            for x in (cx - rx).floor().max(0.0) as usize..((cx + rx).ceil() as usize).min(width) {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                let hit = if ellipse {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if hit {
                    inside.push(y * width + x);
                }
            }
        }
        let class = if r + 1 < regions {
            class
        } else {
            // The last region must leave something else visible: shrink it
            // to its center pixel if it would cover the whole frame, then
            // pick a class that differs from what remains outside it.
            if inside.len() == labels.len() {
                inside = vec![cy as usize * width + cx as usize];
            }
            let outside = (0..labels.len())
                .find(|i| inside.binary_search(i).is_err())
                .map(|i| labels[i] as usize)
                .expect("region leaves a pixel uncovered");
            let c = rng.random_range(0..classes - 1);
            if c >= outside {
                c + 1
            } else {
                c
            }
        };
        for i in inside {
            labels[i] = class as u16;
        }
    }
    let mut data = Vec::with_capacity(3 * height * width);
    for &l in &labels {
        for base in class_color(l as usize) {
            let noisy = base as i32 + rng.random_range(-12..=12);
            data.push(noisy.clamp(0, 255) as u8);
        }
    }
    Sample {
        image: RgbImage::new(width, height, data).expect("sized above"),
        ground_truth: SegmentationMap::new(height, width, labels).expect("non-empty"),
    }
}

/// Header fields of a binary PNM file and the offset of its raster.
fn parse_pnm_header(
    bytes: &[u8],
    magic: &[u8; 2],
) -> std::result::Result<([usize; 3], usize), String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!(
            "not a binary {} file",
            std::str::from_utf8(magic).unwrap_or("PNM")
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("truncated or malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header number out of range")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    Ok((fields, pos + 1))
}

/// Parses an 8-bit binary PPM.
pub fn read_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let ([width, height, maxval], start) = parse_pnm_header(bytes, b"P6")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    if width == 0 || height == 0 {
        return Err("zero-sized image".into());
    }
    let need = 3 * width * height;
    let raster = &bytes[start..];
    if raster.len() < need {
        return Err(format!(
            "raster has {} bytes, expected {need}",
            raster.len()
        ));
    }
    RgbImage::new(width, height, raster[..need].to_vec()).map_err(|e| e.to_string())
}

/// Parses a binary PGM whose values are class labels.
pub fn read_pgm(bytes: &[u8]) -> std::result::Result<SegmentationMap, String> {
    let ([width, height, maxval], start) = parse_pnm_header(bytes, b"P5")?;
    if !(1..=65535).contains(&maxval) {
        return Err(format!("maxval {maxval} out of range"));
    }
    let wide = maxval > 255;
    let n = width * height;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[start..];
    if raster.len() < need {
        return Err(format!(
            "raster has {} bytes, expected {need}",
            raster.len()
        ));
    }
    let labels = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        raster[..n].iter().map(|&b| b as u16).collect()
    };
    SegmentationMap::new(height, width, labels).map_err(|e| e.to_string())
}

pub fn write_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn write_pgm(map: &SegmentationMap) -> Vec<u8> {
    let wide = map.max_label() > 255;
    let maxval = if wide { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{maxval}\n", map.width(), map.height()).into_bytes();
    for &l in map.labels() {
        if wide {
            out.extend_from_slice(&l.to_be_bytes());
        } else {
            out.push(l as u8);
        }
    }
    out
}

/// Writes `img_NNNN.ppm` / `img_NNNN.pgm` pairs into `dir`.
pub fn save_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, s) in samples.iter().enumerate() {
        let ppm = dir.join(format!("img_{i:04}.ppm"));
        std::fs::write(&ppm, write_ppm(&s.image)).map_err(io_err(&ppm))?;
        let pgm = dir.join(format!("img_{i:04}.pgm"));
        std::fs::write(&pgm, write_pgm(&s.ground_truth)).map_err(io_err(&pgm))?;
    }
    Ok(())
}

/// Loads the first `limit` image/label pairs from `dir`, in file-name
/// order. Every `.ppm` needs a `.pgm` with the same stem, matching
/// `(height, width)` and labels below `classes`. All problems are collected
/// and reported together, one per file.
pub fn load_directory(
    dir: &Path,
    limit: usize,
    (height, width): (usize, usize),
    classes: usize,
) -> Result<Vec<Sample>> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut images: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    images.sort();
    let mut errors = Vec::new();
    if images.len() < limit {
        errors.push((
            dir.to_path_buf(),
            format!("found {} .ppm images, need {limit}", images.len()),
        ));
    }
    let mut samples = Vec::with_capacity(limit);
    for ppm in images.into_iter().take(limit) {
        let pgm = ppm.with_extension("pgm");
        let image = std::fs::read(&ppm)
            .map_err(|e| e.to_string())
            .and_then(|b| read_ppm(&b))
            .and_then(|img| {
                if (img.height(), img.width()) == (height, width) {
                    Ok(img)
                } else {
                    Err(format!(
                        "image is {}x{}, model expects {height}x{width}",
                        img.height(),
                        img.width()
                    ))
                }
            });
        let truth = std::fs::read(&pgm)
            .map_err(|e| e.to_string())
            .and_then(|b| read_pgm(&b))
            .and_then(|m| {
                if (m.height(), m.width()) != (height, width) {
                    Err(format!(
                        "label map is {}x{}, model expects {height}x{width}",
                        m.height(),
                        m.width()
                    ))
                } else if m.max_label() as usize >= classes {
                    Err(format!("label {} not below {classes}", m.max_label()))
                } else {
                    Ok(m)
                }
            });
        match (image, truth) {
            (Ok(image), Ok(ground_truth)) => samples.push(Sample {
                image,
                ground_truth,
            }),
            (image, truth) => {
                if let Err(e) = image {
                    errors.push((ppm.clone(), e));
                }
                if let Err(e) = truth {
                    errors.push((pgm, e));
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(samples)
    } else {
        Err(ExperimentError::Dataset(errors))
    }
}

/// Samples for an experiment, synthetic or loaded from disk.
pub fn load_dataset(spec: &super::ExperimentSpec) -> Result<Vec<Sample>> {
    let cfg = spec.model_config();
    let dims = (cfg.input_height, cfg.input_width);
    match &spec.dataset {
        super::DatasetSource::Synthetic => Ok(generate_synthetic(
            spec.num_images,
            cfg.num_classes,
            dims,
            spec.seed,
        )),
        super::DatasetSource::Directory(dir) => {
            load_directory(dir, spec.num_images, dims, cfg.num_classes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn synthetic_postconditions() {
        let a = generate_synthetic(30, 5, (48, 64), 9);
        assert_eq!(a, generate_synthetic(30, 5, (48, 64), 9));
        assert_ne!(a, generate_synthetic(30, 5, (48, 64), 10));
        for s in &a {
            assert_eq!((s.image.height(), s.image.width()), (48, 64));
            let classes: BTreeSet<u16> = s.ground_truth.labels().iter().copied().collect();
            assert!(classes.len() >= 2);
            assert!(classes.iter().all(|&c| c < 5));
        }
        // A prefix of a longer run is the shorter run.
        assert_eq!(&generate_synthetic(40, 5, (48, 64), 9)[..30], &a[..]);
    }

    #[test]
    fn tiny_scenes_still_have_two_classes() {
        for s in generate_synthetic(200, 2, (2, 3), 1) {
            let classes: BTreeSet<u16> = s.ground_truth.labels().iter().copied().collect();
            assert_eq!(classes.len(), 2);
        }
    }

    #[test]
    fn pnm_round_trip() {
        let s = &generate_synthetic(1, 4, (5, 7), 3)[0];
        assert_eq!(read_ppm(&write_ppm(&s.image)).unwrap(), s.image);
        assert_eq!(
            read_pgm(&write_pgm(&s.ground_truth)).unwrap(),
            s.ground_truth
        );
        let wide = SegmentationMap::new(1, 2, vec![3, 300]).unwrap();
        assert_eq!(read_pgm(&write_pgm(&wide)).unwrap(), wide);
    }

    #[test]
    fn pnm_header_comments_and_errors() {
        let img = read_ppm(b"P6 # comment\n1 1\n# another\n255\n\x01\x02\x03").unwrap();
        assert_eq!(img.pixel(0, 0), [1, 2, 3]);
        assert!(read_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(read_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
        assert!(read_ppm(b"P6\n2 2\n255\n\x00").is_err());
        assert!(read_ppm(b"P6\n2").is_err());
        assert!(read_pgm(b"P5\n0 1\n255\n").is_err());
    }

    #[test]
    fn directory_loading_reports_every_bad_file() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(3, 4, (8, 8), 0);
        save_dataset(&samples, dir.path()).unwrap();
        assert_eq!(load_directory(dir.path(), 3, (8, 8), 4).unwrap(), samples);
        assert_eq!(
            load_directory(dir.path(), 2, (8, 8), 4).unwrap(),
            samples[..2]
        );

        std::fs::write(dir.path().join("img_0001.ppm"), b"garbage").unwrap();
        std::fs::remove_file(dir.path().join("img_0002.pgm")).unwrap();
        match load_directory(dir.path(), 3, (8, 8), 4) {
            Err(ExperimentError::Dataset(errs)) => {
                let names: Vec<String> = errs
                    .iter()
                    .map(|(p, _)| p.file_name().unwrap().to_string_lossy().into_owned())
                    .collect();
                assert_eq!(names, ["img_0001.ppm", "img_0002.pgm"]);
            }
            other => panic!("expected dataset error, got {other:?}"),
        }
        assert!(matches!(
            load_directory(dir.path(), 3, (16, 16), 4),
            Err(ExperimentError::Dataset(_))
        ));
        assert!(matches!(
            load_directory(dir.path(), 9, (8, 8), 4),
            Err(ExperimentError::Dataset(_))
        ));
    }
}
