//! JSON and JSONL file helpers shared by the CLI and the pipeline.
//!
//! Single values (joint sets, cameras, patch specs, encodings) are stored as
//! a [`Document`]: `{"format_version": 1, "data": …}`. Sequences are JSONL
//! with one record per line, each carrying its own `format_version`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Joints2D;
use crate::hand_model::Joints3D;
use crate::tempfilter::FrameResult;

pub const DOCUMENT_FORMAT_VERSION: u32 = 1;

fn document_version() -> u32 {
    DOCUMENT_FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    #[serde(default = "document_version")]
    pub format_version: u32,
    pub data: T,
}

impl<T> Document<T> {
    pub fn new(data: T) -> Self {
        Self {
            format_version: DOCUMENT_FORMAT_VERSION,
            data,
        }
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    text
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json_string(value)).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn read_document<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let doc: Document<T> = read_json(path.as_ref())?;
    if doc.format_version != DOCUMENT_FORMAT_VERSION {
        return Err(Error::malformed(
            "format_version",
            format!(
                "{}: unsupported version {}",
                path.as_ref().display(),
                doc.format_version
            ),
        ));
    }
    Ok(doc.data)
}

pub fn write_document<T: Serialize>(path: impl AsRef<Path>, data: &T) -> Result<()> {
    write_json(path, &Document::new(data))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::json(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one record per non-blank line; errors name the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

/// The fields needed to score a frame. Parses from full frame records too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(default = "document_version")]
    pub format_version: u32,
    pub frame_index: u64,
    /// Camera coordinates, meters.
    pub joints3d: Joints3D,
    /// Top-left frame pixels.
    pub joints2d_proj: Joints2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Vector3<f64>>>,
}

impl TryFrom<&FrameResult> for EvalRecord {
    type Error = Error;

    fn try_from(f: &FrameResult) -> Result<Self> {
        let missing = |field: &str| {
            Error::malformed(
                field,
                format!("frame {} has no reprojected joints", f.frame_index),
            )
        };
        Ok(Self {
            format_version: DOCUMENT_FORMAT_VERSION,
            frame_index: f.frame_index,
            joints3d: f.joints3d.ok_or_else(|| missing("joints3d"))?,
            joints2d_proj: f.joints2d_proj.ok_or_else(|| missing("joints2d_proj"))?,
            vertices: f.vertices.clone(),
        })
    }
}
