//! File formats, dataset layout, synthetic scenes and the baseline proposer.
//!
//! Annotations and proposals are JSON Lines, one image per line:
//!
//! ```text
//! {"image_id": "000017", "boxes": [[x_min, y_min, x_max, y_max], ...],
//!  "scores": [...], "categories": [...]}
//! ```
//!
//! Reranked proposal files add an `objectness` array (one score per reranked
//! box, in output order) and a `ranker` string.

mod baseline;
mod dataset;
mod synth;

pub use baseline::{baseline_propose, BaselineConfig, EdgeMaps};
pub use dataset::{Dataset, ImageEntry, SplitPaths};
pub use synth::{gen_synthetic, render_scene, Scene, ShapeKind, SynthConfig, SynthObject};

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One JSONL line: an image's boxes plus per-box metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub boxes: Vec<BBox>,
    #[serde(default)]
    pub scores: Vec<f64>,
    #[serde(default)]
    pub categories: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectness: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranker: Option<String>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BBox>) -> Self {
        Self {
            image_id: image_id.into(),
            boxes,
            scores: Vec::new(),
            categories: Vec::new(),
            objectness: None,
            ranker: None,
        }
    }

    /// Per-field length checks; `scores` and `categories` are either empty or
    /// parallel to `boxes`.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        let n = self.boxes.len();
        if !self.scores.is_empty() && self.scores.len() != n {
            return Err(format!("{} scores for {n} boxes", self.scores.len()));
        }
        if !self.categories.is_empty() && self.categories.len() != n {
            return Err(format!("{} categories for {n} boxes", self.categories.len()));
        }
        if let Some(o) = &self.objectness {
            if o.len() > n {
                return Err(format!("{} objectness scores for {n} boxes", o.len()));
            }
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err("non-finite score".into());
        }
        Ok(())
    }

    /// Category of box `i`, or 0 when the record carries none.
    pub fn category(&self, i: usize) -> u32 {
        self.categories.get(i).copied().unwrap_or(0)
    }
}

/// Parse JSONL text. `path` only labels error messages.
///
/// Syntax errors (including truncation) report the byte offset; well-formed
/// records that violate an invariant report the line number.
pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<ImageRecord>> {
    parse_lines(text, path, ImageRecord::validate)
}

pub(crate) fn parse_lines<T: serde::de::DeserializeOwned>(
    text: &str,
    path: &Path,
    validate: impl Fn(&T) -> std::result::Result<(), String>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let line_no = i + 1;
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            offset += line.len();
            continue;
        }
        match serde_json::from_str::<T>(body) {
            Ok(rec) => {
                if let Err(message) = validate(&rec) {
                    return Err(Error::Record {
                        path: path.to_path_buf(),
                        line: line_no,
                        message,
                    });
                }
                out.push(rec);
            }
            Err(e) if e.is_data() => {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
            Err(e) => {
                let col = e.column().saturating_sub(1);
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    offset: offset + byte_of_column(body, col),
                    message: e.to_string(),
                });
            }
        }
        offset += line.len();
    }
    Ok(out)
}

/// serde_json columns count bytes from 1; clamp into the line.
fn byte_of_column(line: &str, col: usize) -> usize {
    col.min(line.len())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ImageRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_jsonl(&text, path)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Data(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[ImageRecord]) -> Result<()> {
    write_atomic(path, &to_jsonl(records)?)
}

/// Write `bytes` to a temporary sibling of `path`, then rename it into place.
/// Parent directories are created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(format!("writing {}", path.display()), e)
    })
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
