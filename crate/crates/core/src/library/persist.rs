//! Index files beside the manifest: `<stem>.index.json` records backend,
//! dimension and a SHA-256 digest per description; `<stem>.vectors.bin`
//! holds the vectors.
//!
//! Vector file layout, little-endian: magic `TSVECIDX`, u32 version (1),
//! u32 dimension, u32 count, u32 backend-id length, backend-id bytes, then
//! `count * dimension` f64 values in manifest order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LibraryError, OperatorIndex};
use crate::embedding::{EmbeddingVector, Scalar};
use crate::gateway::Gateway;

const MAGIC: &[u8; 8] = b"TSVECIDX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexFiles {
    pub metadata: PathBuf,
    pub vectors: PathBuf,
}

pub fn index_paths(manifest_path: &Path) -> IndexFiles {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    IndexFiles {
        metadata: dir.join(format!("{stem}.index.json")),
        vectors: dir.join(format!("{stem}.vectors.bin")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexMetadata {
    backend_id: String,
    dimension: usize,
    count: usize,
    entries: Vec<EntryDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryDigest {
    id: String,
    description_sha256: String,
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LibraryError + '_ {
    move |source| LibraryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(super) fn refresh<F: Scalar>(
    mut index: OperatorIndex<F>,
    gateway: &Gateway,
) -> Result<OperatorIndex<F>, LibraryError> {
    let files = index_paths(&index.manifest_path);
    let cached = read_cached(&files, gateway).unwrap_or_else(|e| {
        log::info!("rebuilding operator index: {e}");
        HashMap::new()
    });

    let mut reused = 0;
    for entry in &mut index.entries {
        match cached.get(&(entry.id.clone(), digest(&entry.description))) {
            Some(values) => {
                entry.embedding = Some(EmbeddingVector::new(values.clone())?.cast());
                reused += 1;
            }
            None => entry.embedding = Some(gateway.embed(&entry.description)?.cast()),
        }
    }
    index.dimension = gateway.embedding_dimension();
    index.backend_id = gateway.embedding_backend_id().to_string();

    let unchanged = reused == index.entries.len() && cached.len() == index.entries.len();
    if !unchanged {
        write(&index, &files)?;
    }
    Ok(index)
}

type Cache = HashMap<(String, String), Vec<f64>>;

fn read_cached(files: &IndexFiles, gateway: &Gateway) -> Result<Cache, LibraryError> {
    let corrupt = |path: &Path, reason: &str| LibraryError::IndexFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let meta_text = fs::read_to_string(&files.metadata).map_err(io(&files.metadata))?;
    let meta: IndexMetadata =
        serde_json::from_str(&meta_text).map_err(|e| corrupt(&files.metadata, &e.to_string()))?;
    if meta.backend_id != gateway.embedding_backend_id()
        || meta.dimension != gateway.embedding_dimension()
    {
        return Err(corrupt(
            &files.metadata,
            "built with a different embedding backend",
        ));
    }
    let bytes = fs::read(&files.vectors).map_err(io(&files.vectors))?;
    let (dimension, count, backend_id, values) =
        decode_vectors(&bytes).ok_or_else(|| corrupt(&files.vectors, "bad header or length"))?;
    if dimension != meta.dimension
        || count != meta.count
        || count != meta.entries.len()
        || backend_id != meta.backend_id
    {
        return Err(corrupt(
            &files.vectors,
            "vector file disagrees with metadata",
        ));
    }
    Ok(meta
        .entries
        .into_iter()
        .zip(values.chunks(dimension.max(1)))
        .map(|(e, v)| ((e.id, e.description_sha256), v.to_vec()))
        .collect())
}

fn write<F: Scalar>(index: &OperatorIndex<F>, files: &IndexFiles) -> Result<(), LibraryError> {
    let meta = IndexMetadata {
        backend_id: index.backend_id.clone(),
        dimension: index.dimension,
        count: index.entries.len(),
        entries: index
            .entries
            .iter()
            .map(|e| EntryDigest {
                id: e.id.clone(),
                description_sha256: digest(&e.description),
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("index metadata serializes");
    json.push('\n');
    fs::write(&files.metadata, json).map_err(io(&files.metadata))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(index.dimension as u32).to_le_bytes());
    bytes.extend_from_slice(&(index.entries.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(index.backend_id.len() as u32).to_le_bytes());
    bytes.extend_from_slice(index.backend_id.as_bytes());
    for entry in &index.entries {
        let vector = entry
            .embedding
            .as_ref()
            .ok_or_else(|| LibraryError::NotEmbedded(entry.id.clone()))?;
        for v in vector.values() {
            bytes.extend_from_slice(&v.to_f64().unwrap_or(0.0).to_le_bytes());
        }
    }
    fs::write(&files.vectors, bytes).map_err(io(&files.vectors))
}

fn decode_vectors(bytes: &[u8]) -> Option<(usize, usize, String, Vec<f64>)> {
    let rest = bytes.strip_prefix(MAGIC.as_slice())?;
    let word = |b: &[u8], at: usize| -> Option<u32> {
        Some(u32::from_le_bytes(b.get(at..at + 4)?.try_into().ok()?))
    };
    if word(rest, 0)? != VERSION {
        return None;
    }
    let dimension = word(rest, 4)? as usize;
    let count = word(rest, 8)? as usize;
    let id_len = word(rest, 12)? as usize;
    let backend_id = String::from_utf8(rest.get(16..16 + id_len)?.to_vec()).ok()?;
    let body = rest.get(16 + id_len..)?;
    if body.len() != dimension * count * 8 {
        return None;
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Some((dimension, count, backend_id, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EmbeddingBackend, HashingEmbedder};
    use crate::library::{load_library, load_or_build, ManifestEntry};

    fn manifest(dir: &Path, descriptions: &[&str]) -> PathBuf {
        fs::create_dir_all(dir.join("ops")).unwrap();
        let entries: Vec<ManifestEntry> = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| {
                fs::write(dir.join(format!("ops/op{i}.py")), "pass\n").unwrap();
                ManifestEntry {
                    id: format!("op{i}"),
                    major_category: "TableTransformation".into(),
                    sub_category: "Sorting".into(),
                    description: d.to_string(),
                    script_path: format!("ops/op{i}.py"),
                    task_type: None,
                }
            })
            .collect();
        let path = dir.join("ops.json");
        fs::write(&path, serde_json::to_string(&entries).unwrap()).unwrap();
        path
    }

    #[test]
    fn rebuilding_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest(
            dir.path(),
            &["sort ascending", "sort descending", "filter rows"],
        );
        let gw = Gateway::mock(vec![]);
        load_or_build::<f64>(&path, &gw).unwrap();
        let files = index_paths(&path);
        let first = (
            fs::read(&files.metadata).unwrap(),
            fs::read(&files.vectors).unwrap(),
        );

        // Fresh build into a sibling directory gives identical bytes too.
        let other = tempfile::tempdir().unwrap();
        let path2 = manifest(
            other.path(),
            &["sort ascending", "sort descending", "filter rows"],
        );
        load_or_build::<f64>(&path2, &gw).unwrap();
        let files2 = index_paths(&path2);
        assert_eq!(first.0, fs::read(&files2.metadata).unwrap());
        assert_eq!(first.1, fs::read(&files2.vectors).unwrap());

        load_or_build::<f64>(&path, &gw).unwrap();
        assert_eq!(first.1, fs::read(&files.vectors).unwrap());
    }

    #[test]
    fn description_edit_changes_only_that_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest(
            dir.path(),
            &["sort ascending", "sort descending", "filter rows"],
        );
        let gw = Gateway::mock(vec![]);
        let before = load_or_build::<f64>(&path, &gw).unwrap();
        let path = manifest(
            dir.path(),
            &["sort ascending", "reverse the row order", "filter rows"],
        );
        let after = load_or_build::<f64>(&path, &gw).unwrap();
        assert_eq!(before.entries()[0].embedding, after.entries()[0].embedding);
        assert_eq!(before.entries()[2].embedding, after.entries()[2].embedding);
        assert_ne!(before.entries()[1].embedding, after.entries()[1].embedding);
        let direct = HashingEmbedder::default()
            .embed("reverse the row order")
            .unwrap();
        assert_eq!(after.entries()[1].embedding.as_ref().unwrap(), &direct);
    }

    #[test]
    fn single_precision_index_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest(dir.path(), &["sort ascending"]);
        let gw = Gateway::mock(vec![]);
        let wide = load_library::<f64>(&path).unwrap().build(&gw).unwrap();
        let narrow = load_or_build::<f32>(&path, &gw).unwrap();
        let a = wide.entries()[0].embedding.as_ref().unwrap();
        let b = narrow.entries()[0].embedding.as_ref().unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - f64::from(*y)).abs() < 1e-7);
        }
    }

    #[test]
    fn corrupt_vector_file_triggers_rebuild() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest(dir.path(), &["sort ascending"]);
        let gw = Gateway::mock(vec![]);
        load_or_build::<f64>(&path, &gw).unwrap();
        let files = index_paths(&path);
        let good = fs::read(&files.vectors).unwrap();
        fs::write(&files.vectors, b"garbage").unwrap();
        load_or_build::<f64>(&path, &gw).unwrap();
        assert_eq!(fs::read(&files.vectors).unwrap(), good);
    }
}
