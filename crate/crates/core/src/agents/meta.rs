use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Files above this size get no row count.
const ROW_COUNT_LIMIT: u64 = 16 * 1024 * 1024;

/// Cheap per-file summary handed to prompts. Never contains data rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMeta {
    pub file_name: String,
    pub format: String,
    pub size_bytes: u64,
    /// First line of a text-delimited file, without a byte-order mark.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub header: Option<String>,
    pub columns: Vec<String>,
    /// Data rows, when the file is small enough to count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub files: Vec<FileMeta>,
}

impl TaskMeta {
    /// Summarizes `paths`; unreadable files get a bare entry.
    pub fn from_paths(paths: &[PathBuf]) -> Self {
        Self {
            files: paths.iter().map(|p| FileMeta::inspect(p)).collect(),
        }
    }

    /// Compact JSON for `{task_meta}`.
    pub fn to_prompt(&self) -> String {
        serde_json::to_string(self).expect("task meta serializes")
    }
}

impl FileMeta {
    pub fn inspect(path: &Path) -> Self {
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let format = path
            .extension()
            .map(|e| e.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        let size_bytes = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
        let mut meta = Self {
            file_name,
            format,
            size_bytes,
            header: None,
            columns: Vec::new(),
            rows: None,
        };
        let Ok(file) = fs::File::open(path) else {
            return meta;
        };
        let mut lines = BufReader::new(file).lines();
        let Some(Ok(first)) = lines.next() else {
            if size_bytes == 0 {
                meta.rows = Some(0);
            }
            return meta;
        };
        let first = first
            .trim_start_matches('\u{feff}')
            .trim_end_matches('\r')
            .to_string();
        match meta.format.as_str() {
            "jsonl" | "json" | "ndjson" => {
                if let Ok(serde_json::Value::Object(obj)) = serde_json::from_str(&first) {
                    meta.columns = obj.keys().cloned().collect();
                }
            }
            _ => {
                meta.columns = split_csv_header(&first);
                meta.header = Some(first.clone());
            }
        }
        if size_bytes <= ROW_COUNT_LIMIT {
            let rest = lines
                .map_while(Result::ok)
                .filter(|l| !l.trim().is_empty())
                .count() as u64;
            let header_rows = u64::from(meta.header.is_some());
            meta.rows = Some(rest + 1 - header_rows);
        }
        meta
    }
}

fn split_csv_header(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                current.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut current)),
            other => current.push(other),
        }
    }
    fields.push(current);
    fields.into_iter().map(|f| f.trim().to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_meta_has_header_columns_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sales.csv");
        fs::write(&path, "\u{feff}id,\"amount, usd\",date\n1,2,x\n3,4,y\n").unwrap();
        let meta = FileMeta::inspect(&path);
        assert_eq!(meta.file_name, "sales.csv");
        assert_eq!(meta.format, "csv");
        assert_eq!(meta.header.as_deref(), Some("id,\"amount, usd\",date"));
        assert_eq!(meta.columns, vec!["id", "amount, usd", "date"]);
        assert_eq!(meta.rows, Some(2));
    }

    #[test]
    fn jsonl_meta_uses_first_object_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        fs::write(&path, "{\"b\": 1, \"a\": 2}\n{\"b\": 3, \"a\": 4}\n").unwrap();
        let meta = FileMeta::inspect(&path);
        assert_eq!(meta.columns, vec!["b", "a"]);
        assert_eq!(meta.rows, Some(2));
        assert!(meta.header.is_none());
    }

    #[test]
    fn prompt_rendering_omits_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "a\n1\n").unwrap();
        let rendered = TaskMeta::from_paths(&[path]).to_prompt();
        assert!(!rendered.contains(&dir.path().display().to_string()));
        assert!(rendered.contains("\"file_name\":\"t.csv\""));
    }
}
