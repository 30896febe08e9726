use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Component, Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

/// Which component launched the run that produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Workflow,
    Evaluator,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuditRecord {
    pub path: PathBuf,
    pub access: AccessKind,
    pub origin: Origin,
}

impl AuditRecord {
    pub fn new(path: &Path, access: AccessKind, origin: Origin) -> Self {
        Self {
            path: path.to_path_buf(),
            access,
            origin,
        }
    }
}

/// String literals in `code` that name an existing file or directory,
/// resolved against `cwd` when relative.
pub fn literal_paths(code: &str, cwd: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for literal in string_literals(code) {
        if literal.is_empty() || literal.contains('\n') || literal.len() > 4096 {
            continue;
        }
        let candidate = Path::new(&literal);
        let resolved = if candidate.is_absolute() {
            candidate.to_path_buf()
        } else {
            cwd.join(candidate)
        };
        if resolved.exists() {
            let resolved = lexical_normalize(&resolved);
            if !found.contains(&resolved) {
                found.push(resolved);
            }
        }
    }
    found
}

/// Contents of single- and double-quoted literals, with backslash escapes
/// kept verbatim. Not a full tokenizer for any particular language.
fn string_literals(code: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = code.chars();
    while let Some(c) = chars.next() {
        if c != '"' && c != '\'' {
            continue;
        }
        let quote = c;
        let mut literal = String::new();
        let mut closed = false;
        while let Some(inner) = chars.next() {
            match inner {
                '\\' => {
                    if let Some(escaped) = chars.next() {
                        literal.push(escaped);
                    }
                }
                '\n' => break,
                q if q == quote => {
                    closed = true;
                    break;
                }
                other => literal.push(other),
            }
        }
        if closed {
            out.push(literal);
        }
    }
    out
}

fn lexical_normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for component in path.components() {
        match component {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FileStamp {
    len: u64,
    modified: Option<SystemTime>,
}

/// Regular files under a set of roots with their size and mtime.
#[derive(Debug, Default)]
pub(crate) struct Snapshot {
    files: BTreeMap<PathBuf, FileStamp>,
}

impl Snapshot {
    pub(crate) fn take(roots: &[PathBuf]) -> Self {
        let mut files = BTreeMap::new();
        for root in roots {
            for entry in walkdir::WalkDir::new(root)
                .into_iter()
                .filter_map(Result::ok)
            {
                if !entry.file_type().is_file() {
                    continue;
                }
                if let Ok(meta) = entry.metadata() {
                    files.insert(
                        entry.into_path(),
                        FileStamp {
                            len: meta.len(),
                            modified: meta.modified().ok(),
                        },
                    );
                }
            }
        }
        Self { files }
    }

    /// Files created or modified between `self` and `later`.
    pub(crate) fn changed(&self, later: &Snapshot) -> Vec<PathBuf> {
        later
            .files
            .iter()
            .filter(|(path, stamp)| self.files.get(*path) != Some(*stamp))
            .map(|(path, _)| path.clone())
            .collect()
    }
}

pub(crate) fn make_read_only(dir: &Path) -> Option<u32> {
    let mode = fs::metadata(dir).ok()?.permissions().mode();
    let _ = fs::set_permissions(dir, fs::Permissions::from_mode(0o555));
    Some(mode)
}

pub(crate) fn restore_mode(dir: &Path, mode: Option<u32>) {
    if let Some(mode) = mode {
        let _ = fs::set_permissions(dir, fs::Permissions::from_mode(mode));
    }
}
