//! Dataset and checkpoint container: a JSON manifest next to one little-endian f64 blob.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use opex_core::dataset::{DatasetMeta, OperatorDataset};
use opex_core::deeponet::{DeepONet, DeepONetConfig};
use opex_core::problem::HardConstraint;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, HarnessResult};

pub const FORMAT: &str = "opex-container";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    pub crc32: u32,
}

impl ArrayEntry {
    pub fn byte_len(&self) -> u64 {
        8 * self.shape.iter().product::<usize>() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// What the container holds, e.g. "dataset" or "deeponet".
    pub kind: String,
    #[serde(default)]
    pub query_dim: Option<usize>,
    pub blob: String,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Array data keyed by name, each with its shape.
pub type Arrays = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(blob)
}

/// `<stem>.json` and `<stem>.bin` for a container at `path` (with or without extension).
pub fn container_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == "json" || e == "bin") { path.with_extension("") } else { path.to_path_buf() };
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn write_container(path: &Path, kind: &str, query_dim: Option<usize>, meta: serde_json::Value, arrays: &[(&str, Vec<usize>, &[f64])]) -> HarnessResult<PathBuf> {
    let (json_path, bin_path) = container_paths(path);
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(arrays.len());
    for (name, shape, data) in arrays {
        if shape.iter().product::<usize>() != data.len() {
            return Err(HarnessError::ManifestMismatch(format!("array {name}: shape {shape:?} does not hold {} values", data.len())));
        }
        let offset = blob.len() as u64;
        let start = blob.len();
        for v in data.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ArrayEntry { name: name.to_string(), dtype: "f64".into(), shape: shape.clone(), offset, crc32: crc32fast::hash(&blob[start..]) });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind: kind.into(),
        query_dim,
        blob: bin_path.file_name().expect("file name").to_string_lossy().into_owned(),
        arrays: entries,
        meta,
    };
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(&bin_path, &blob).map_err(io_err(&bin_path))?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&json_path))?;
    Ok(json_path)
}

pub fn read_container(path: &Path) -> HarnessResult<(Manifest, Arrays)> {
    let (json_path, _) = container_paths(path);
    let text = std::fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::ManifestMismatch(format!("unreadable manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(HarnessError::ManifestMismatch(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    let bin_path = blob_path(&json_path, &manifest.blob);
    let blob = std::fs::read(&bin_path).map_err(io_err(&bin_path))?;
    let mut arrays = Arrays::new();
    for e in &manifest.arrays {
        if e.dtype != "f64" {
            return Err(HarnessError::ManifestMismatch(format!("array {}: unsupported element type {}", e.name, e.dtype)));
        }
        let end = e.offset.checked_add(e.byte_len()).filter(|&end| end <= blob.len() as u64);
        let Some(end) = end else {
            return Err(HarnessError::ChecksumFailure(format!("array {} extends past the end of the blob", e.name)));
        };
        let bytes = &blob[e.offset as usize..end as usize];
        if crc32fast::hash(bytes) != e.crc32 {
            return Err(HarnessError::ChecksumFailure(format!("array {} has a CRC32 mismatch", e.name)));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        arrays.insert(e.name.clone(), (e.shape.clone(), data));
    }
    Ok((manifest, arrays))
}

fn take(arrays: &mut Arrays, name: &str, rank: usize) -> HarnessResult<(Vec<usize>, Vec<f64>)> {
    let (shape, data) = arrays.remove(name).ok_or_else(|| HarnessError::ManifestMismatch(format!("missing array {name}")))?;
    if shape.len() != rank {
        return Err(HarnessError::ManifestMismatch(format!("array {name} has rank {}, expected {rank}", shape.len())));
    }
    Ok((shape, data))
}

fn matrix(arrays: &mut Arrays, name: &str) -> HarnessResult<Array2<f64>> {
    let (shape, data) = take(arrays, name, 2)?;
    Array2::from_shape_vec((shape[0], shape[1]), data).map_err(|e| HarnessError::ManifestMismatch(format!("{name}: {e}")))
}

pub fn export_dataset(data: &OperatorDataset, path: &Path) -> HarnessResult<PathBuf> {
    let b = data.branch.as_standard_layout();
    let q = data.queries.as_standard_layout();
    let t = data.targets.as_standard_layout();
    write_container(
        path,
        "dataset",
        Some(data.query_dim()),
        serde_json::to_value(&data.meta)?,
        &[
            ("branch", data.branch.shape().to_vec(), b.as_slice().expect("standard layout")),
            ("sensors", vec![data.sensors.len()], &data.sensors),
            ("queries", data.queries.shape().to_vec(), q.as_slice().expect("standard layout")),
            ("targets", data.targets.shape().to_vec(), t.as_slice().expect("standard layout")),
        ],
    )
}

/// Reads and validates a dataset container, including externally produced ones.
pub fn import_dataset(path: &Path) -> HarnessResult<OperatorDataset> {
    let (manifest, mut arrays) = read_container(path)?;
    if manifest.kind != "dataset" {
        return Err(HarnessError::ManifestMismatch(format!("expected a dataset container, found {}", manifest.kind)));
    }
    let branch = matrix(&mut arrays, "branch")?;
    let (_, sensors) = take(&mut arrays, "sensors", 1)?;
    let queries = matrix(&mut arrays, "queries")?;
    let targets = matrix(&mut arrays, "targets")?;
    let declared = manifest.query_dim.ok_or_else(|| HarnessError::ManifestMismatch("manifest does not declare query_dim".into()))?;
    if declared != queries.ncols() {
        return Err(HarnessError::ManifestMismatch(format!("manifest declares query dimension {declared}, queries have {}", queries.ncols())));
    }
    let meta: DatasetMeta = if manifest.meta.is_null() {
        DatasetMeta { problem: None, field: None, seed: None, source: "imported".into() }
    } else {
        serde_json::from_value(manifest.meta).map_err(|e| HarnessError::ManifestMismatch(format!("dataset metadata: {e}")))?
    };
    let ds = OperatorDataset::new(branch, sensors, queries, targets, meta).map_err(|e| HarnessError::ManifestMismatch(e.to_string()))?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: DeepONetConfig,
    constraint: Option<HardConstraint>,
}

pub fn save_model(model: &DeepONet, path: &Path) -> HarnessResult<PathBuf> {
    let flat = model.to_flat();
    let meta = serde_json::to_value(ModelMeta { config: model.config, constraint: model.constraint })?;
    write_container(path, "deeponet", Some(model.config.query_dim), meta, &[("params", vec![flat.len()], &flat)])
}

pub fn load_model(path: &Path) -> HarnessResult<DeepONet> {
    let (manifest, mut arrays) = read_container(path)?;
    if manifest.kind != "deeponet" {
        return Err(HarnessError::ManifestMismatch(format!("expected a deeponet container, found {}", manifest.kind)));
    }
    let meta: ModelMeta = serde_json::from_value(manifest.meta).map_err(|e| HarnessError::ManifestMismatch(format!("model metadata: {e}")))?;
    let mut model = DeepONet::new(meta.config);
    model.constraint = meta.constraint;
    let (_, params) = take(&mut arrays, "params", 1)?;
    if params.len() != model.num_params() {
        return Err(HarnessError::ManifestMismatch(format!("{} parameters stored, architecture has {}", params.len(), model.num_params())));
    }
    model.load_flat(&params)?;
    Ok(model)
}

/// Any serializable model as a manifest-only container (no blob arrays).
pub fn save_json_model<T: Serialize>(value: &T, kind: &str, path: &Path) -> HarnessResult<PathBuf> {
    write_container(path, kind, None, serde_json::to_value(value)?, &[])
}

pub fn load_json_model<T: serde::de::DeserializeOwned>(kind: &str, path: &Path) -> HarnessResult<T> {
    let (manifest, _) = read_container(path)?;
    if manifest.kind != kind {
        return Err(HarnessError::ManifestMismatch(format!("expected {kind}, found {}", manifest.kind)));
    }
    Ok(serde_json::from_value(manifest.meta)?)
}
