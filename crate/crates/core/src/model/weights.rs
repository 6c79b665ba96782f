use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, LayerSpec, ModelConfig, ModelError, Result};

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Every layer parameter of a network, in architecture order.
///
/// Immutable once built or loaded; forward passes only borrow it.
#[derive(Debug, Clone)]
pub struct WeightSet {
    arch: Arc<Architecture>,
    params: IndexMap<String, Param>,
}

impl PartialEq for WeightSet {
    fn eq(&self, other: &Self) -> bool {
        self.arch.config() == other.arch.config() && self.params == other.params
    }
}

impl WeightSet {
    /// Checks names, shapes and finiteness against the architecture.
    pub fn from_params(config: &ModelConfig, params: IndexMap<String, Param>) -> Result<Self> {
        let arch = Architecture::new(config)?;
        for (name, shape) in arch.param_shapes() {
            let p = params
                .get(&name)
                .ok_or_else(|| ModelError::MissingEntry(name.clone()))?;
            if p.shape != shape {
                return Err(ModelError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: p.shape.clone(),
                });
            }
            if p.data.len() != shape.iter().product::<usize>() {
                return Err(ModelError::Corrupt(format!(
                    "`{name}` has wrong element count"
                )));
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Corrupt(format!(
                    "`{name}` has non-finite values"
                )));
            }
        }
        if params.len() != arch.param_shapes().len() {
            let extra = params
                .keys()
                .find(|k| !arch.param_shapes().iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(ModelError::UnexpectedEntry(extra));
        }
        // Re-key in architecture order so serialization is canonical.
        let mut params = params;
        let ordered = arch
            .param_shapes()
            .into_iter()
            .map(|(n, _)| {
                let p = params.swap_remove(&n).expect("checked above");
                (n, p)
            })
            .collect();
        Ok(WeightSet {
            arch: Arc::new(arch),
            params: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.arch.config()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &IndexMap<String, Param> {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub(crate) fn data(&self, name: &str) -> &[f32] {
        &self.params[name].data
    }
}

/// Deterministic initialization: kernels uniform in `[-a, a]` with
/// `a = sqrt(6 / (fan_in + fan_out))`, zero biases, unit scales, zero shifts.
pub fn build(config: &ModelConfig) -> Result<WeightSet> {
    let arch = Architecture::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = IndexMap::new();
    for layer in arch.layers() {
        match layer {
            LayerSpec::Conv(c) => {
                let kk = c.kernel * c.kernel;
                let fan_in = (c.in_channels * kk) as f64;
                let fan_out = (c.out_channels * kk) as f64;
                let bound = (6.0 / (fan_in + fan_out)).sqrt() as f32;
                let n = c.out_channels * c.in_channels * kk;
                let data = (0..n)
                    .map(|_| (2.0 * rng.random::<f32>() - 1.0) * bound)
                    .collect();
                params.insert(
                    format!("{}.weight", c.name),
                    Param {
                        shape: vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                        data,
                    },
                );
                params.insert(
                    format!("{}.bias", c.name),
                    Param {
                        shape: vec![c.out_channels],
                        data: vec![0.0; c.out_channels],
                    },
                );
            }
            LayerSpec::Affine { name, channels, .. } => {
                params.insert(
                    format!("{name}.scale"),
                    Param {
                        shape: vec![*channels],
                        data: vec![1.0; *channels],
                    },
                );
                params.insert(
                    format!("{name}.shift"),
                    Param {
                        shape: vec![*channels],
                        data: vec![0.0; *channels],
                    },
                );
            }
        }
    }
    Ok(WeightSet {
        arch: Arc::new(arch),
        params,
    })
}

const FORMAT_TAG: &str = "semsplit-weights";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    /// Blob file name, relative to the manifest.
    blob: String,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `manifest_path` (JSON) and a sibling `.bin` blob of little-endian
/// f32 values concatenated in manifest order.
pub fn save_weights(weights: &WeightSet, manifest_path: &Path) -> Result<()> {
    let blob = blob_path(manifest_path);
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(weights.params.len());
    for (name, p) in &weights.params {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: p.shape.clone(),
            offset: bytes.len() as u64,
        });
        for v in &p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        config: weights.config().clone(),
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        entries,
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    fs::write(manifest_path, json).map_err(io_err(manifest_path))?;
    fs::write(&blob, bytes).map_err(io_err(&blob))?;
    Ok(())
}

pub fn load_weights(manifest_path: &Path) -> Result<WeightSet> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| ModelError::Corrupt(format!("manifest: {e}")))?;
    if manifest.format != FORMAT_TAG {
        return Err(ModelError::Corrupt(format!(
            "unknown format tag `{}`",
            manifest.format
        )));
    }
    let blob = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let bytes = fs::read(&blob).map_err(io_err(&blob))?;

    let arch = Architecture::new(&manifest.config)?;
    let by_name: IndexMap<&str, &ManifestEntry> = manifest
        .entries
        .iter()
        .map(|e| (e.name.as_str(), e))
        .collect();
    let mut params = IndexMap::new();
    let mut expected_len = 0u64;
    for (name, shape) in arch.param_shapes() {
        let entry = by_name
            .get(name.as_str())
            .ok_or_else(|| ModelError::MissingEntry(name.clone()))?;
        if entry.shape != shape {
            return Err(ModelError::ShapeMismatch {
                name,
                expected: shape,
                found: entry.shape.clone(),
            });
        }
        let count = shape.iter().product::<usize>();
        let start = entry.offset as usize;
        let end = start + 4 * count;
        if end > bytes.len() {
            return Err(ModelError::Corrupt(format!(
                "blob truncated: `{name}` needs bytes {start}..{end}, blob has {}",
                bytes.len()
            )));
        }
        let data = bytes[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        expected_len += 4 * count as u64;
        params.insert(name, Param { shape, data });
    }
    if let Some(extra) = manifest
        .entries
        .iter()
        .find(|e| !params.contains_key(&e.name))
    {
        return Err(ModelError::UnexpectedEntry(extra.name.clone()));
    }
    if bytes.len() as u64 != expected_len {
        return Err(ModelError::Corrupt(format!(
            "blob is {} bytes, manifest describes {expected_len}",
            bytes.len()
        )));
    }
    WeightSet::from_params(&manifest.config, params)
}
