//! Curated operator templates, their embedding index, and threshold + top-k
//! retrieval over operator descriptions.

mod persist;
mod retrieval;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingVector, Scalar};
use crate::gateway::{Gateway, GatewayError};

pub use persist::{index_paths, IndexFiles};
pub use retrieval::{rank, retrieve_multi, retrieve_single, RetrievedOperator};

/// Minimum number of operators expected per sub-category at full scale.
pub const MIN_PER_SUB_CATEGORY: usize = 4;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("invalid manifest {path}: {reason}")]
    ManifestInvalid { path: PathBuf, reason: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("operator `{0}` has no embedding; build the index first")]
    NotEmbedded(String),
    #[error("corrupt index file {path}: {reason}")]
    IndexFormat { path: PathBuf, reason: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One manifest entry as written on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub major_category: String,
    pub sub_category: String,
    pub description: String,
    /// Relative to the manifest's directory.
    pub script_path: String,
    /// Interpreter task-type label, when the corpus carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTemplate<F> {
    pub id: String,
    pub major_category: String,
    pub sub_category: String,
    pub task_type: Option<String>,
    pub description: String,
    pub script_path: PathBuf,
    pub embedding: Option<EmbeddingVector<F>>,
}

impl<F: Scalar> OperatorTemplate<F> {
    pub fn script(&self) -> Result<String, LibraryError> {
        fs::read_to_string(&self.script_path).map_err(|source| LibraryError::Io {
            path: self.script_path.clone(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorIndex<F> {
    entries: Vec<OperatorTemplate<F>>,
    manifest_path: PathBuf,
    dimension: usize,
    backend_id: String,
    warnings: Vec<String>,
}

impl<F: Scalar> OperatorIndex<F> {
    pub fn entries(&self) -> &[OperatorTemplate<F>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }

    /// Embedding dimension; 0 until the index is built.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_embedded(&self) -> bool {
        self.entries.iter().all(|e| e.embedding.is_some())
    }

    pub fn get(&self, id: &str) -> Option<&OperatorTemplate<F>> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Operator count per sub-category.
    pub fn sub_category_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for entry in &self.entries {
            *counts.entry(entry.sub_category.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Embeds every description with the gateway's embedding backend.
    pub fn build(mut self, gateway: &Gateway) -> Result<Self, LibraryError> {
        for entry in &mut self.entries {
            entry.embedding = Some(gateway.embed(&entry.description)?.cast());
        }
        self.dimension = gateway.embedding_dimension();
        self.backend_id = gateway.embedding_backend_id().to_string();
        Ok(self)
    }
}

/// Parses and validates a manifest. Embeddings are left unset.
///
/// A sub-category with fewer than [`MIN_PER_SUB_CATEGORY`] operators is a
/// warning, not an error, so small fixture corpora load.
pub fn load_library<F: Scalar>(manifest_path: &Path) -> Result<OperatorIndex<F>, LibraryError> {
    let invalid = |reason: String| LibraryError::ManifestInvalid {
        path: manifest_path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(manifest_path).map_err(|source| LibraryError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let raw: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(raw.len());
    for entry in raw {
        if entry.id.trim().is_empty() {
            return Err(invalid("operator with empty id".into()));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(invalid(format!("duplicate operator id `{}`", entry.id)));
        }
        if entry.description.trim().is_empty() {
            return Err(invalid(format!(
                "operator `{}` has an empty description",
                entry.id
            )));
        }
        let script_path = base.join(&entry.script_path);
        match fs::metadata(&script_path) {
            Ok(meta) if meta.is_file() && meta.len() > 0 => {}
            Ok(_) => {
                return Err(invalid(format!(
                    "operator `{}` script {} is empty or not a file",
                    entry.id,
                    script_path.display()
                )))
            }
            Err(_) => {
                return Err(invalid(format!(
                    "operator `{}` script {} is missing",
                    entry.id,
                    script_path.display()
                )))
            }
        }
        entries.push(OperatorTemplate {
            id: entry.id,
            major_category: entry.major_category,
            sub_category: entry.sub_category,
            task_type: entry.task_type,
            description: entry.description,
            script_path,
            embedding: None,
        });
    }

    let mut index = OperatorIndex {
        entries,
        manifest_path: manifest_path.to_path_buf(),
        dimension: 0,
        backend_id: String::new(),
        warnings: Vec::new(),
    };
    let sparse: Vec<String> = index
        .sub_category_counts()
        .into_iter()
        .filter(|(_, n)| *n < MIN_PER_SUB_CATEGORY)
        .map(|(sub, n)| {
            format!("sub-category `{sub}` has {n} operator(s), fewer than {MIN_PER_SUB_CATEGORY}")
        })
        .collect();
    for warning in &sparse {
        log::warn!("{warning}");
    }
    index.warnings = sparse;
    Ok(index)
}

/// Loads the manifest and reuses persisted vectors whose description digest
/// still matches; stale or missing entries are re-embedded and the index
/// files rewritten.
pub fn load_or_build<F: Scalar>(
    manifest_path: &Path,
    gateway: &Gateway,
) -> Result<OperatorIndex<F>, LibraryError> {
    let index = load_library::<F>(manifest_path)?;
    persist::refresh(index, gateway)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_manifest(dir: &Path, entries: &[(&str, &str, &str)]) -> PathBuf {
        fs::create_dir_all(dir.join("ops")).unwrap();
        let manifest: Vec<ManifestEntry> = entries
            .iter()
            .map(|(id, sub, desc)| {
                fs::write(dir.join("ops").join(format!("{id}.py")), "print('op')\n").unwrap();
                ManifestEntry {
                    id: id.to_string(),
                    major_category: "TableCleaning".into(),
                    sub_category: sub.to_string(),
                    description: desc.to_string(),
                    script_path: format!("ops/{id}.py"),
                    task_type: None,
                }
            })
            .collect();
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
        path
    }

    #[test]
    fn small_manifest_loads_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            &[
                ("a", "Deduplication", "drop duplicate rows"),
                ("b", "Deduplication", "drop duplicates by key"),
                ("c", "Sorting", "sort rows by column"),
            ],
        );
        let index = load_library::<f64>(&path).unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.warnings().len(), 2);
        assert!(!index.is_embedded());
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            &[("a", "Sorting", "sort"), ("a", "Sorting", "sort again")],
        );
        assert!(matches!(
            load_library::<f64>(&path),
            Err(LibraryError::ManifestInvalid { .. })
        ));
    }

    #[test]
    fn empty_description_is_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[("a", "Sorting", "  ")]);
        let err = load_library::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("empty description"));
    }

    #[test]
    fn missing_or_empty_script_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[("a", "Sorting", "sort rows")]);
        fs::write(dir.path().join("ops/a.py"), "").unwrap();
        assert!(load_library::<f64>(&path).is_err());
        fs::remove_file(dir.path().join("ops/a.py")).unwrap();
        assert!(load_library::<f64>(&path)
            .unwrap_err()
            .to_string()
            .contains("missing"));
    }
}
