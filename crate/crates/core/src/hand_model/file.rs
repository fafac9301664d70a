//! Model file format: a UTF-8 JSON document.
//!
//! ```text
//! {
//!   "version": 1,
//!   "rest_joints": [[x, y, z], ...],          // 21 points, meters
//!   "parent": [-1, 0, 1, ...],                 // 21 indices, -1 for the root
//!   "articulated": [true, true, ...],          // 21 flags, exactly 16 set
//!   "shape_basis": [[[dx, dy, dz], ...], ...], // 10 × 21 × 3, meters per unit beta
//!   "skinning": {                              // optional
//!     "vertices": [[x, y, z], ...],            // N × 3
//!     "weights": [[w0, ..., w15], ...],        // N × 16, rows sum to 1
//!     "vertex_shape_basis": [[[..]]],          // 10 × N × 3
//!     "faces": [[a, b, c], ...]                // M × 3 vertex indices
//!   }
//! }
//! ```

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{HandModelParams, Skinning, NUM_KEYPOINTS, NUM_ROTATIONS};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub rest_joints: Vec<[f64; 3]>,
    pub parent: Vec<i64>,
    pub articulated: Vec<bool>,
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skinning: Option<SkinningFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinningFile {
    pub vertices: Vec<[f64; 3]>,
    pub weights: Vec<Vec<f64>>,
    pub vertex_shape_basis: Vec<Vec<[f64; 3]>>,
    #[serde(default)]
    pub faces: Vec<[usize; 3]>,
}

fn points(field: &str, raw: &[[f64; 3]]) -> Result<Vec<Vector3<f64>>> {
    raw.iter()
        .map(|p| {
            if p.iter().all(|c| c.is_finite()) {
                Ok(Vector3::from(*p))
            } else {
                Err(Error::NonFinite(field.to_string()))
            }
        })
        .collect()
}

fn keypoint_array(field: &str, raw: &[[f64; 3]]) -> Result<[Vector3<f64>; NUM_KEYPOINTS]> {
    let pts = points(field, raw)?;
    pts.try_into().map_err(|v: Vec<_>| {
        Error::malformed(
            field,
            format!("expected {NUM_KEYPOINTS} points, got {}", v.len()),
        )
    })
}

impl TryFrom<ModelFile> for HandModelParams {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::malformed(
                "version",
                format!("unsupported model version {}", file.version),
            ));
        }
        let rest_joints = keypoint_array("rest_joints", &file.rest_joints)?;
        if file.parent.len() != NUM_KEYPOINTS {
            return Err(Error::malformed(
                "parent",
                format!(
                    "expected {NUM_KEYPOINTS} entries, got {}",
                    file.parent.len()
                ),
            ));
        }
        let mut parent = [None; NUM_KEYPOINTS];
        for (slot, &p) in parent.iter_mut().zip(&file.parent) {
            *slot = match p {
                -1 => None,
                p if p >= 0 && (p as usize) < NUM_KEYPOINTS => Some(p as usize),
                p => {
                    return Err(Error::malformed(
                        "parent",
                        format!("index {p} out of range"),
                    ))
                }
            };
        }
        let articulated: [bool; NUM_KEYPOINTS] =
            file.articulated.as_slice().try_into().map_err(|_| {
                Error::malformed(
                    "articulated",
                    format!(
                        "expected {NUM_KEYPOINTS} flags, got {}",
                        file.articulated.len()
                    ),
                )
            })?;
        let shape_basis = file
            .shape_basis
            .iter()
            .map(|b| keypoint_array("shape_basis", b))
            .collect::<Result<Vec<_>>>()?;

        let skinning = match file.skinning {
            None => None,
            Some(s) => {
                let weights = s
                    .weights
                    .iter()
                    .map(|row| {
                        <[f64; NUM_ROTATIONS]>::try_from(row.as_slice()).map_err(|_| {
                            Error::malformed(
                                "skinning.weights",
                                format!(
                                    "rows must hold {NUM_ROTATIONS} weights, got {}",
                                    row.len()
                                ),
                            )
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Skinning {
                    vertices: points("skinning.vertices", &s.vertices)?,
                    weights,
                    vertex_shape_basis: s
                        .vertex_shape_basis
                        .iter()
                        .map(|b| points("skinning.vertex_shape_basis", b))
                        .collect::<Result<Vec<_>>>()?,
                    faces: s.faces,
                })
            }
        };

        HandModelParams::new(rest_joints, parent, articulated, shape_basis, skinning)
    }
}

impl From<&HandModelParams> for ModelFile {
    fn from(model: &HandModelParams) -> Self {
        let arr = |p: &Vector3<f64>| [p.x, p.y, p.z];
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            rest_joints: model.rest_joints.iter().map(arr).collect(),
            parent: model
                .parent
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            articulated: model.articulated.to_vec(),
            shape_basis: model
                .shape_basis
                .iter()
                .map(|b| b.iter().map(arr).collect())
                .collect(),
            skinning: model.skinning.as_ref().map(|s| SkinningFile {
                vertices: s.vertices.iter().map(arr).collect(),
                weights: s.weights.iter().map(|w| w.to_vec()).collect(),
                vertex_shape_basis: s
                    .vertex_shape_basis
                    .iter()
                    .map(|b| b.iter().map(arr).collect())
                    .collect(),
                faces: s.faces.clone(),
            }),
        }
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<HandModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    HandModelParams::try_from(file)
}

pub fn save_model(model: &HandModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text =
        serde_json::to_string_pretty(&ModelFile::from(model)).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
