//! Flat key-value text files: one `key = value` pair per line, `#` comments.
//!
//! Used for run configs (with dotted section keys like `enhancer.kind`) and
//! for backend manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 'key = value', got '{content}'")]
    Malformed {
        path: PathBuf,
        line: usize,
        content: String,
    },
    #[error("{path}:{line}: duplicate key '{key}'")]
    Duplicate {
        path: PathBuf,
        line: usize,
        key: String,
    },
}

/// Parses `key = value` lines into an ordered map. Later duplicate keys are
/// an error so config typos fail loudly.
pub fn parse_kv_str(text: &str, path: &Path) -> Result<BTreeMap<String, String>, KvError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(KvError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                content: line.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(KvError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                content: line.to_string(),
            });
        }
        if map.contains_key(&key) {
            return Err(KvError::Duplicate {
                path: path.to_path_buf(),
                line: i + 1,
                key,
            });
        }
        map.insert(key, value);
    }
    Ok(map)
}

pub fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>, KvError> {
    let text = std::fs::read_to_string(path).map_err(|source| KvError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_kv_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_blanks() {
        let text = "# comment\nenhancer.kind = gamma\n\nenhancer.gamma = 0.5\nname = a = b\n";
        let map = parse_kv_str(text, Path::new("test.cfg")).unwrap();
        assert_eq!(map["enhancer.kind"], "gamma");
        assert_eq!(map["enhancer.gamma"], "0.5");
        // value may itself contain '='
        assert_eq!(map["name"], "a = b");
    }

    #[test]
    fn reports_line_numbers() {
        let text = "good = 1\nnonsense line\n";
        match parse_kv_str(text, Path::new("test.cfg")) {
            Err(KvError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {:?}", other),
        }
    }

    #[test]
    fn rejects_duplicates() {
        let text = "k = 1\nk = 2\n";
        assert!(matches!(
            parse_kv_str(text, Path::new("t")),
            Err(KvError::Duplicate { line: 2, .. })
        ));
    }
}
