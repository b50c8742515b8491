//! Directory-backed activation caches with a JSON manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::format::{encode_tensor, read_tensor, write_tensor, Dtype, TensorRecord};
use crate::error::{MscError, Result};
use crate::geometry::Subspace;
use crate::linalg::Mat;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Conventional tensor names.
pub mod names {
    pub const ACTIVATIONS: &str = "activations";
    pub const DOY: &str = "doy";
    pub const LABELS: &str = "labels";
    pub const DOY_MEANS: &str = "doy_means";
    pub const MEDIATOR: &str = "mediator.basis";
    pub const PROBE_SIGNAL: &str = "probe_signal.basis";
    pub const NUISANCE: &str = "nuisance.basis";
    pub const READOUT: &str = "readout";
    pub const GRADIENTS: &str = "gradients";
    pub const HEADS_WQ: &str = "heads.wq";
    pub const HEADS_WK: &str = "heads.wk";
    pub const HEADS_INDEX: &str = "heads.index";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub meta: Map<String, Value>,
    pub tensors: Vec<ManifestEntry>,
}

#[derive(Debug)]
struct Slot {
    entry: ManifestEntry,
    cell: OnceLock<TensorRecord>,
}

/// Named tensors plus free-form metadata; records load on first access.
#[derive(Debug, Default)]
pub struct ActivationCache {
    root: Option<PathBuf>,
    slots: BTreeMap<String, Slot>,
    meta: Map<String, Value>,
}

impl ActivationCache {
    pub fn new(meta: Map<String, Value>) -> Self {
        ActivationCache {
            root: None,
            slots: BTreeMap::new(),
            meta,
        }
    }

    /// Adds a record; names must be unique.
    pub fn insert(&mut self, record: TensorRecord) -> Result<()> {
        record.validate()?;
        if self.slots.contains_key(&record.name) {
            return Err(MscError::Manifest(format!(
                "duplicate tensor name {}",
                record.name
            )));
        }
        let entry = ManifestEntry {
            name: record.name.clone(),
            dtype: record.dtype(),
            dims: record.dims.clone(),
            file: format!("{}.msct", record.name),
        };
        let cell = OnceLock::new();
        let _ = cell.set(record);
        self.slots.insert(entry.name.clone(), Slot { entry, cell });
        Ok(())
    }

    /// Stores a subspace as `<role>.basis`.
    pub fn insert_subspace(&mut self, role: &str, u: &Subspace) -> Result<()> {
        self.insert(TensorRecord::from_matrix(format!("{role}.basis"), u.basis()))
    }

    pub fn meta(&self) -> &Map<String, Value> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut Map<String, Value> {
        &mut self.meta
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| MscError::Manifest(format!("meta key {key:?} missing or not an integer")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| MscError::Manifest(format!("meta key {key:?} missing or not a number")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn entry(&self, name: &str) -> Result<&ManifestEntry> {
        self.slots
            .get(name)
            .map(|s| &s.entry)
            .ok_or_else(|| MscError::MissingTensor(name.to_string()))
    }

    /// The record, reading it from disk on first use.
    pub fn get(&self, name: &str) -> Result<&TensorRecord> {
        let slot = self
            .slots
            .get(name)
            .ok_or_else(|| MscError::MissingTensor(name.to_string()))?;
        if let Some(r) = slot.cell.get() {
            return Ok(r);
        }
        let root = self
            .root
            .as_ref()
            .ok_or_else(|| MscError::MissingTensor(name.to_string()))?;
        let mut record = read_tensor(&root.join(&slot.entry.file))?;
        record.name = slot.entry.name.clone();
        if record.dtype() != slot.entry.dtype || record.dims != slot.entry.dims {
            return Err(MscError::Manifest(format!(
                "tensor {name} does not match its manifest entry"
            )));
        }
        Ok(slot.cell.get_or_init(|| record))
    }

    pub fn matrix(&self, name: &str) -> Result<Mat> {
        self.get(name)?.to_matrix()
    }

    pub fn subspace(&self, role: &str) -> Result<Subspace> {
        Subspace::from_orthonormal(self.matrix(&format!("{role}.basis"))?)
    }

    pub fn i64s(&self, name: &str) -> Result<Vec<i64>> {
        self.get(name)?.to_i64_vec()
    }

    /// Integer labels as class indices (must be nonnegative).
    pub fn usizes(&self, name: &str) -> Result<Vec<usize>> {
        self.i64s(name)?
            .into_iter()
            .map(|v| {
                usize::try_from(v)
                    .map_err(|_| MscError::InvalidArgument(format!("negative label {v} in {name}")))
            })
            .collect()
    }

    /// Per-prompt activations, checked against meta `d`.
    pub fn activations(&self) -> Result<Mat> {
        let x = self.matrix(names::ACTIVATIONS)?;
        let d = self.meta_usize("d")?;
        if x.ncols() != d {
            return Err(MscError::DimensionMismatch(format!(
                "activations have width {}, meta d = {d}",
                x.ncols()
            )));
        }
        Ok(x)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            meta: self.meta.clone(),
            tensors: self.slots.values().map(|s| s.entry.clone()).collect(),
        }
    }

    /// Writes the manifest and every tensor into `dir` (created if absent).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| MscError::io(dir, e))?;
        for (name, slot) in &self.slots {
            write_tensor(self.get(name)?, &dir.join(&slot.entry.file))?;
        }
        let text = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| MscError::io(&path, e))
    }

    /// Opens a cache directory; tensors are loaded lazily.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| MscError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| MscError::Manifest(format!("{}: {e}", path.display())))?;
        if !manifest.meta.contains_key("d") {
            return Err(MscError::Manifest("meta block lacks \"d\"".into()));
        }
        let mut slots = BTreeMap::new();
        for entry in manifest.tensors {
            if entry.file.contains(['/', '\\']) || !dir.join(&entry.file).is_file() {
                return Err(MscError::Manifest(format!(
                    "entry {} points at unreadable file {:?}",
                    entry.name, entry.file
                )));
            }
            let name = entry.name.clone();
            let slot = Slot {
                entry,
                cell: OnceLock::new(),
            };
            if slots.insert(name.clone(), slot).is_some() {
                return Err(MscError::Manifest(format!("duplicate tensor name {name}")));
            }
        }
        let cache = ActivationCache {
            root: Some(dir.to_path_buf()),
            slots,
            meta: manifest.meta,
        };
        if let Ok(entry) = cache.entry(names::ACTIVATIONS) {
            let d = cache.meta_usize("d")?;
            if entry.dims.last() != Some(&d) {
                return Err(MscError::Manifest(format!(
                    "activation width {:?} does not match meta d = {d}",
                    entry.dims
                )));
            }
        }
        Ok(cache)
    }

    /// SHA-256 over the manifest and every tensor's encoded bytes.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.manifest())?);
        for name in self.slots.keys() {
            h.update(encode_tensor(self.get(name)?)?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn small_cache() -> ActivationCache {
        let mut meta = Map::new();
        meta.insert("d".into(), json!(3));
        meta.insert("model".into(), json!("toy"));
        let mut c = ActivationCache::new(meta);
        c.insert(TensorRecord::f64(names::ACTIVATIONS, vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        c.insert(TensorRecord::i64(names::LABELS, vec![2], vec![0, 1]).unwrap())
            .unwrap();
        c
    }

    #[test]
    fn save_open_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = small_cache();
        c.save(dir.path()).unwrap();
        let back = ActivationCache::open(dir.path()).unwrap();
        assert_eq!(back.manifest(), c.manifest());
        assert_eq!(back.get(names::ACTIVATIONS).unwrap(), c.get(names::ACTIVATIONS).unwrap());
        assert_eq!(back.usizes(names::LABELS).unwrap(), vec![0, 1]);
        assert_eq!(back.content_hash().unwrap(), c.content_hash().unwrap());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut c = small_cache();
        let dup = TensorRecord::i64(names::LABELS, vec![1], vec![0]).unwrap();
        assert!(c.insert(dup).is_err());
    }

    #[test]
    fn width_must_match_meta() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_cache();
        c.meta_mut().insert("d".into(), json!(4));
        c.save(dir.path()).unwrap();
        assert!(ActivationCache::open(dir.path()).is_err());
    }

    #[test]
    fn missing_tensor_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        small_cache().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("labels.msct")).unwrap();
        assert!(matches!(
            ActivationCache::open(dir.path()),
            Err(MscError::Manifest(_))
        ));
    }
}
