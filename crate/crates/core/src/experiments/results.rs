//! Sweep results and their on-disk form.
//!
//! The main CSV holds exactly `snr,miou_f,miou_n,miou_s` (full-at-transmitter,
//! traditional, split). Per-row extras go to a sibling `*.ext.csv`, and the
//! run metadata to a sibling `*.meta.json`. Undefined values are written as
//! `nan`. Reals use the shortest decimal form that parses back to the same
//! `f64`, so write then read is the identity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, ExperimentError, ExperimentSpec, Result};
use crate::metrics::Pipeline;
use crate::phy::Modulation;

pub const CSV_HEADER: &str = "snr,miou_f,miou_n,miou_s";
pub const EXT_HEADER: &str =
    "snr,median_f,median_n,median_s,ber_measured,ber_theoretical,bits_f,bits_n,bits_s";

/// One value per pipeline, in CSV column order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerPipeline<T> {
    pub full_tx: T,
    pub traditional: T,
    pub split: T,
}

impl<T: Copy> PerPipeline<T> {
    pub fn splat(v: T) -> Self {
        PerPipeline {
            full_tx: v,
            traditional: v,
            split: v,
        }
    }

    pub fn get(&self, p: Pipeline) -> T {
        match p {
            Pipeline::FullTx => self.full_tx,
            Pipeline::Traditional => self.traditional,
            Pipeline::Split => self.split,
        }
    }

    pub fn set(&mut self, p: Pipeline, v: T) {
        match p {
            Pipeline::FullTx => self.full_tx = v,
            Pipeline::Traditional => self.traditional = v,
            Pipeline::Split => self.split = v,
        }
    }

    /// Values in CSV column order: full, traditional, split.
    pub fn columns(&self) -> [T; 3] {
        [self.full_tx, self.traditional, self.split]
    }

    fn from_columns([f, n, s]: [T; 3]) -> Self {
        PerPipeline {
            full_tx: f,
            traditional: n,
            split: s,
        }
    }
}

/// Pipelines in CSV column order.
pub(crate) const COLUMN_ORDER: [Pipeline; 3] =
    [Pipeline::FullTx, Pipeline::Traditional, Pipeline::Split];

/// Column name of a pipeline in the main CSV.
pub(crate) fn column_name(p: Pipeline) -> &'static str {
    match p {
        Pipeline::FullTx => "miou_f",
        Pipeline::Traditional => "miou_n",
        Pipeline::Split => "miou_s",
    }
}

/// Extended per-row figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowExtra {
    /// Median of per-image mIoU.
    pub median_miou: PerPipeline<Option<f64>>,
    /// Bit errors over bits sent through the noisy link, all pipelines.
    pub ber_measured: Option<f64>,
    pub ber_theoretical: Option<f64>,
    pub bits: PerPipeline<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    /// mIoU from the confusion matrix pooled over all images.
    pub miou: PerPipeline<Option<f64>>,
    pub extra: Option<RowExtra>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub version: String,
    pub modulation: Modulation,
    pub snr_definition: String,
    pub num_images: usize,
    /// Noiseless scores: only quantization (split) separates these from 1
    /// when scoring against the noiseless output.
    pub ceiling_miou: PerPipeline<Option<f64>>,
    pub ceiling_median_miou: PerPipeline<Option<f64>>,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub meta: Option<SweepMeta>,
}

impl SweepResult {
    pub fn modulation(&self) -> Option<Modulation> {
        self.meta.as_ref().map(|m| m.modulation)
    }

    pub fn snr(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.snr_db).collect()
    }

    /// Pooled mIoU of one pipeline per row.
    pub fn series(&self, p: Pipeline) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.miou.get(p)).collect()
    }

    /// Median per-image mIoU of one pipeline per row, if recorded.
    pub fn median_series(&self, p: Pipeline) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.extra.as_ref().and_then(|e| e.median_miou.get(p)))
            .collect()
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn ext_path(csv: &Path) -> PathBuf {
    sibling(csv, ".ext.csv")
}

pub fn meta_path(csv: &Path) -> PathBuf {
    sibling(csv, ".meta.json")
}

fn fmt_real(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "nan".into(),
    }
}

fn fmt_int(v: Option<u64>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

fn write_table(path: &Path, header: &str, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    w.write_record(header.split(','))
        .map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_io(path: &Path, e: csv::Error) -> ExperimentError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => ExperimentError::Io {
            path: path.display().to_string(),
            source,
        },
        kind => ExperimentError::Csv {
            path: path.display().to_string(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes the main CSV plus whichever siblings the result carries.
pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    write_table(
        path,
        CSV_HEADER,
        result.rows.iter().map(|r| {
            std::iter::once(fmt_real(Some(r.snr_db)))
                .chain(r.miou.columns().into_iter().map(fmt_real))
                .collect()
        }),
    )?;
    let ext = ext_path(path);
    if result.rows.iter().all(|r| r.extra.is_some()) && !result.rows.is_empty() {
        write_table(
            &ext,
            EXT_HEADER,
            result.rows.iter().map(|r| {
                let e = r.extra.as_ref().expect("checked above");
                let mut cells = vec![fmt_real(Some(r.snr_db))];
                cells.extend(e.median_miou.columns().into_iter().map(fmt_real));
                cells.push(fmt_real(e.ber_measured));
                cells.push(fmt_real(e.ber_theoretical));
                cells.extend(e.bits.columns().into_iter().map(fmt_int));
                cells
            }),
        )?;
    }
    if let Some(meta) = &result.meta {
        let mp = meta_path(path);
        let text = serde_json::to_string_pretty(meta).expect("meta serializes") + "\n";
        std::fs::write(&mp, text).map_err(io_err(&mp))?;
    }
    Ok(())
}

/// Rows of a CSV file as `(line number, cells)`, header checked exactly.
fn read_table(path: &Path, header: &str) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let err = |line: u64, message: String| ExperimentError::Csv {
        path: path.display().to_string(),
        line,
        message,
    };
    let width = header.split(',').count();
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let cells: Vec<String> = rec.iter().map(str::to_owned).collect();
        if i == 0 {
            if cells.join(",") != header {
                return Err(err(line, format!("expected header `{header}`")));
            }
            saw_header = true;
            continue;
        }
        if cells.len() != width {
            return Err(err(
                line,
                format!("{} fields, expected {width}", cells.len()),
            ));
        }
        rows.push((line, cells));
    }
    if !saw_header {
        return Err(err(1, "empty file".into()));
    }
    Ok(rows)
}

fn parse_real(path: &Path, line: u64, cell: &str) -> Result<Option<f64>> {
    if cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(ExperimentError::Csv {
            path: path.display().to_string(),
            line,
            message: format!("`{cell}` is not a number"),
        }),
    }
}

fn parse_int(path: &Path, line: u64, cell: &str) -> Result<Option<u64>> {
    if cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| ExperimentError::Csv {
        path: path.display().to_string(),
        line,
        message: format!("`{cell}` is not a non-negative integer"),
    })
}

fn parse_snr(path: &Path, line: u64, cell: &str) -> Result<f64> {
    parse_real(path, line, cell)?.ok_or_else(|| ExperimentError::Csv {
        path: path.display().to_string(),
        line,
        message: "snr must be a number".into(),
    })
}

/// Reads a main CSV and, when present next to it, its extras and metadata.
pub fn read_csv(path: &Path) -> Result<SweepResult> {
    let mut rows = Vec::new();
    for (line, cells) in read_table(path, CSV_HEADER)? {
        let snr_db = parse_snr(path, line, &cells[0])?;
        let mut vals = [None; 3];
        for (v, c) in vals.iter_mut().zip(&cells[1..]) {
            *v = parse_real(path, line, c)?;
        }
        rows.push(SweepRow {
            snr_db,
            miou: PerPipeline::from_columns(vals),
            extra: None,
        });
    }
    let ext = ext_path(path);
    if ext.exists() {
        let table = read_table(&ext, EXT_HEADER)?;
        if table.len() != rows.len() {
            return Err(ExperimentError::Csv {
                path: ext.display().to_string(),
                line: table.last().map_or(1, |t| t.0),
                message: format!("{} rows, main file has {}", table.len(), rows.len()),
            });
        }
        for ((line, cells), row) in table.into_iter().zip(&mut rows) {
            if parse_snr(&ext, line, &cells[0])? != row.snr_db {
                return Err(ExperimentError::Csv {
                    path: ext.display().to_string(),
                    line,
                    message: "snr does not match the main file".into(),
                });
            }
            let mut med = [None; 3];
            for (v, c) in med.iter_mut().zip(&cells[1..4]) {
                *v = parse_real(&ext, line, c)?;
            }
            let mut bits = [None; 3];
            for (v, c) in bits.iter_mut().zip(&cells[6..9]) {
                *v = parse_int(&ext, line, c)?;
            }
            row.extra = Some(RowExtra {
                median_miou: PerPipeline::from_columns(med),
                ber_measured: parse_real(&ext, line, &cells[4])?,
                ber_theoretical: parse_real(&ext, line, &cells[5])?,
                bits: PerPipeline::from_columns(bits),
            });
        }
    }
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let text = std::fs::read_to_string(&mp).map_err(io_err(&mp))?;
        Some(
            serde_json::from_str(&text).map_err(|e| ExperimentError::Csv {
                path: mp.display().to_string(),
                line: e.line() as u64,
                message: e.to_string(),
            })?,
        )
    } else {
        None
    };
    Ok(SweepResult { rows, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SweepResult {
        let rows = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
            .iter()
            .enumerate()
            .map(|(i, &snr)| SweepRow {
                snr_db: snr,
                miou: PerPipeline {
                    full_tx: Some(0.1 * i as f64),
                    traditional: if i == 0 { None } else { Some(1.0 / 3.0) },
                    split: Some(7.0 / 12.0),
                },
                extra: Some(RowExtra {
                    median_miou: PerPipeline::splat(Some(0.25 + i as f64 / 7.0)),
                    ber_measured: Some(1.234e-7),
                    ber_theoretical: None,
                    bits: PerPipeline {
                        full_tx: Some(3),
                        traditional: None,
                        split: Some(u64::MAX),
                    },
                }),
            })
            .collect();
        SweepResult {
            rows,
            meta: Some(SweepMeta {
                version: "t".into(),
                modulation: Modulation::Qam16,
                snr_definition: "Es/N0".into(),
                num_images: 2,
                ceiling_miou: PerPipeline::splat(Some(0.999)),
                ceiling_median_miou: PerPipeline::splat(None),
                spec: ExperimentSpec::desk_default(),
            }),
        }
    }

    #[test]
    fn round_trip_with_siblings() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qam.csv");
        let r = sample();
        write_csv(&r, &p).unwrap();
        assert_eq!(read_csv(&p).unwrap(), r);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("snr,miou_f,miou_n,miou_s\n"));
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().nth(1).unwrap(), "5,0,nan,0.5833333333333334");
        assert!(ext_path(&p).ends_with("qam.ext.csv"));
    }

    #[test]
    fn bare_csv_reads_without_extras() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bare.csv");
        std::fs::write(&p, "snr,miou_f,miou_n,miou_s\n5,0.5,0.25,nan\n10,1,1,1\n").unwrap();
        let r = read_csv(&p).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.meta, None);
        assert_eq!(r.series(Pipeline::Split), vec![None, Some(1.0)]);
        assert_eq!(r.series(Pipeline::Traditional), vec![Some(0.25), Some(1.0)]);
    }

    #[test]
    fn malformed_files_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        let cases = [
            ("snr,miou_n,miou_f,miou_s\n5,1,1,1\n", 1),
            ("snr,miou_f,miou_n,miou_s\n5,1,1,1\n10,1,x,1\n", 3),
            ("snr,miou_f,miou_n,miou_s\n5,1,1\n", 2),
            ("snr,miou_f,miou_n,miou_s\nnan,1,1,1\n", 2),
        ];
        for (text, line) in cases {
            std::fs::write(&p, text).unwrap();
            match read_csv(&p) {
                Err(ExperimentError::Csv { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            read_csv(&dir.path().join("missing.csv")),
            Err(ExperimentError::Io { .. })
        ));
    }
}
