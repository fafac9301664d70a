//! MANO-compatible parametric hand: shape blend of a rest skeleton, axis-angle
//! forward kinematics over a 21-keypoint tree and optional linear blend
//! skinning.
//!
//! Keypoints follow one canonical order: wrist, then thumb, index, middle,
//! ring and pinky, each finger listed MCP, PIP, DIP, TIP:
//!
//! ```text
//!  0 wrist
//!  1- 4 thumb    5- 8 index    9-12 middle    13-16 ring    17-20 pinky
//! ```
//!
//! The 16 pose rotations are assigned to the articulated keypoints in
//! ascending keypoint order, so rotation 0 is always the global wrist
//! rotation.

mod file;
mod rotation;
mod toy;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use file::{load_model, save_model, ModelFile, SkinningFile, MODEL_FORMAT_VERSION};
pub use rotation::{axis_angle_to_matrix, canonicalize_axis_angle};

pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_ROTATIONS: usize = 16;
pub const NUM_BETAS: usize = 10;
pub const NUM_BONES: usize = NUM_KEYPOINTS - 1;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "wrist",
    "thumb_mcp",
    "thumb_pip",
    "thumb_dip",
    "thumb_tip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "pinky_mcp",
    "pinky_pip",
    "pinky_dip",
    "pinky_tip",
];

/// Parent of each keypoint in the canonical hand tree (`None` for the wrist).
pub const CANONICAL_PARENTS: [Option<usize>; NUM_KEYPOINTS] = {
    let mut parents = [None; NUM_KEYPOINTS];
    let mut finger = 0;
    while finger < 5 {
        let base = 1 + finger * 4;
        parents[base] = Some(0);
        parents[base + 1] = Some(base);
        parents[base + 2] = Some(base + 1);
        parents[base + 3] = Some(base + 2);
        finger += 1;
    }
    parents
};

/// 16 axis-angle rotations in radians; index 0 rotates the whole hand about
/// the wrist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HandPose {
    pub rotations: [Vector3<f64>; NUM_ROTATIONS],
}

impl Default for HandPose {
    fn default() -> Self {
        Self {
            rotations: [Vector3::zeros(); NUM_ROTATIONS],
        }
    }
}

impl HandPose {
    pub fn is_finite(&self) -> bool {
        self.rotations
            .iter()
            .all(|r| r.iter().all(|c| c.is_finite()))
    }

    /// Every rotation mapped to its equivalent with angle in `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        let mut out = *self;
        for r in out.rotations.iter_mut() {
            *r = canonicalize_axis_angle(r);
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.rotations
            .iter()
            .flat_map(|r| [r.x, r.y, r.z])
            .collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_ROTATIONS * 3 {
            return Err(Error::ShapeMismatch {
                expected: NUM_ROTATIONS * 3,
                got: values.len(),
            });
        }
        let mut pose = Self::default();
        for (r, chunk) in pose.rotations.iter_mut().zip(values.chunks_exact(3)) {
            *r = Vector3::new(chunk[0], chunk[1], chunk[2]);
        }
        Ok(pose)
    }
}

/// 10 PCA shape coefficients; all zeros is the mean hand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HandShape {
    pub betas: [f64; NUM_BETAS],
}

impl HandShape {
    pub fn is_finite(&self) -> bool {
        self.betas.iter().all(|b| b.is_finite())
    }
}

/// 21 keypoints in meters, canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Joints3D(pub [Vector3<f64>; NUM_KEYPOINTS]);

impl Default for Joints3D {
    fn default() -> Self {
        Self([Vector3::zeros(); NUM_KEYPOINTS])
    }
}

impl Joints3D {
    pub fn from_slice(points: &[Vector3<f64>]) -> Result<Self> {
        let arr: [Vector3<f64>; NUM_KEYPOINTS] =
            points.try_into().map_err(|_| Error::ShapeMismatch {
                expected: NUM_KEYPOINTS,
                got: points.len(),
            })?;
        Ok(Self(arr))
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn map(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self(self.0.map(|p| f(&p)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skinning {
    vertices: Vec<Vector3<f64>>,
    weights: Vec<[f64; NUM_ROTATIONS]>,
    vertex_shape_basis: Vec<Vec<Vector3<f64>>>,
    faces: Vec<[usize; 3]>,
}

impl Skinning {
    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn weights(&self) -> &[[f64; NUM_ROTATIONS]] {
        &self.weights
    }

    pub fn vertex_shape_basis(&self) -> &[Vec<Vector3<f64>>] {
        &self.vertex_shape_basis
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
}

/// Validated hand model. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModelParams {
    rest_joints: [Vector3<f64>; NUM_KEYPOINTS],
    parent: [Option<usize>; NUM_KEYPOINTS],
    articulated: [bool; NUM_KEYPOINTS],
    shape_basis: Vec<[Vector3<f64>; NUM_KEYPOINTS]>,
    skinning: Option<Skinning>,
    // derived
    order: Vec<usize>,
    rotation_slot: [Option<usize>; NUM_KEYPOINTS],
    articulated_joints: [usize; NUM_ROTATIONS],
}

/// Per-keypoint world rotation and position after posing.
#[derive(Debug, Clone)]
pub struct PosedSkeleton {
    pub rest: [Vector3<f64>; NUM_KEYPOINTS],
    pub rotations: [Matrix3<f64>; NUM_KEYPOINTS],
    pub positions: [Vector3<f64>; NUM_KEYPOINTS],
}

impl HandModelParams {
    /// Checks every model invariant and builds the traversal tables.
    pub fn new(
        rest_joints: [Vector3<f64>; NUM_KEYPOINTS],
        parent: [Option<usize>; NUM_KEYPOINTS],
        articulated: [bool; NUM_KEYPOINTS],
        shape_basis: Vec<[Vector3<f64>; NUM_KEYPOINTS]>,
        skinning: Option<Skinning>,
    ) -> Result<Self> {
        if !rest_joints.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("rest_joints".into()));
        }
        let order = topological_order(&parent)?;
        if parent[0].is_some() {
            return Err(Error::InvalidTree(
                "keypoint 0 (wrist) must be the root".into(),
            ));
        }
        let n_articulated = articulated.iter().filter(|&&a| a).count();
        if n_articulated != NUM_ROTATIONS {
            return Err(Error::malformed(
                "articulated",
                format!("expected {NUM_ROTATIONS} articulated keypoints, got {n_articulated}"),
            ));
        }
        if !articulated[0] {
            return Err(Error::malformed("articulated", "wrist must be articulated"));
        }
        if shape_basis.len() != NUM_BETAS {
            return Err(Error::ShapeBasisRank(shape_basis.len()));
        }
        if !shape_basis
            .iter()
            .all(|b| b.iter().all(|p| p.iter().all(|c| c.is_finite())))
        {
            return Err(Error::NonFinite("shape_basis".into()));
        }

        let mut rotation_slot = [None; NUM_KEYPOINTS];
        let mut articulated_joints = [0; NUM_ROTATIONS];
        let mut slot = 0;
        for (j, &a) in articulated.iter().enumerate() {
            if a {
                rotation_slot[j] = Some(slot);
                articulated_joints[slot] = j;
                slot += 1;
            }
        }

        if let Some(skin) = &skinning {
            validate_skinning(skin)?;
        }

        Ok(Self {
            rest_joints,
            parent,
            articulated,
            shape_basis,
            skinning,
            order,
            rotation_slot,
            articulated_joints,
        })
    }

    /// Deterministic built-in model with hand-measured bone lengths.
    pub fn toy() -> Self {
        toy::toy_model()
    }

    pub fn rest_joints(&self) -> Joints3D {
        Joints3D(self.rest_joints)
    }

    pub fn parents(&self) -> &[Option<usize>; NUM_KEYPOINTS] {
        &self.parent
    }

    pub fn articulated(&self) -> &[bool; NUM_KEYPOINTS] {
        &self.articulated
    }

    /// Keypoint driven by each of the 16 pose rotations.
    pub fn articulated_joints(&self) -> &[usize; NUM_ROTATIONS] {
        &self.articulated_joints
    }

    pub fn shape_basis(&self) -> &[[Vector3<f64>; NUM_KEYPOINTS]] {
        &self.shape_basis
    }

    pub fn skinning(&self) -> Option<&Skinning> {
        self.skinning.as_ref()
    }

    /// Rest joints plus the shape blend `Σ_k β_k · basis_k`.
    pub fn shaped_rest_joints(&self, shape: &HandShape) -> Joints3D {
        let mut out = self.rest_joints;
        for (beta, basis) in shape.betas.iter().zip(&self.shape_basis) {
            for (p, d) in out.iter_mut().zip(basis) {
                *p += d * *beta;
            }
        }
        Joints3D(out)
    }

    pub fn pose_skeleton(&self, shape: &HandShape, pose: &HandPose) -> PosedSkeleton {
        let rest = self.shaped_rest_joints(shape).0;
        let mut rotations = [Matrix3::identity(); NUM_KEYPOINTS];
        let mut positions = [Vector3::zeros(); NUM_KEYPOINTS];
        for &j in &self.order {
            let local = match self.rotation_slot[j] {
                Some(slot) => axis_angle_to_matrix(&pose.rotations[slot]),
                None => Matrix3::identity(),
            };
            match self.parent[j] {
                None => {
                    rotations[j] = local;
                    positions[j] = rest[j];
                }
                Some(p) => {
                    rotations[j] = rotations[p] * local;
                    positions[j] = positions[p] + rotations[p] * (rest[j] - rest[p]);
                }
            }
        }
        PosedSkeleton {
            rest,
            rotations,
            positions,
        }
    }

    /// Posed keypoints in the wrist-rooted model frame.
    pub fn forward_kinematics(&self, shape: &HandShape, pose: &HandPose) -> Joints3D {
        Joints3D(self.pose_skeleton(shape, pose).positions)
    }

    /// Shaped rest vertices of the skinning block.
    pub fn shaped_rest_vertices(&self, shape: &HandShape) -> Result<Vec<Vector3<f64>>> {
        let skin = self.skinning.as_ref().ok_or(Error::NoSkinning)?;
        let mut out = skin.vertices.clone();
        for (beta, basis) in shape.betas.iter().zip(&skin.vertex_shape_basis) {
            for (v, d) in out.iter_mut().zip(basis) {
                *v += d * *beta;
            }
        }
        Ok(out)
    }

    /// Linear blend skinning of the model's vertices.
    pub fn skin_vertices(&self, shape: &HandShape, pose: &HandPose) -> Result<Vec<Vector3<f64>>> {
        let skin = self.skinning.as_ref().ok_or(Error::NoSkinning)?;
        let rest_vertices = self.shaped_rest_vertices(shape)?;
        let posed = self.pose_skeleton(shape, pose);
        Ok(rest_vertices
            .iter()
            .zip(&skin.weights)
            .map(|(v, w)| {
                let mut acc = Vector3::zeros();
                for (slot, &weight) in w.iter().enumerate() {
                    if weight == 0.0 {
                        continue;
                    }
                    let j = self.articulated_joints[slot];
                    acc += (posed.positions[j] + posed.rotations[j] * (v - posed.rest[j])) * weight;
                }
                acc
            })
            .collect())
    }

    pub fn bone_vectors(&self, joints: &Joints3D) -> Vec<Vector3<f64>> {
        bone_vectors(&joints.0, &self.parent).expect("model tree matches 21 joints")
    }
}

/// `child − parent` for every non-root keypoint, in keypoint index order.
pub fn bone_vectors(
    joints: &[Vector3<f64>],
    parents: &[Option<usize>],
) -> Result<Vec<Vector3<f64>>> {
    if joints.len() != parents.len() {
        return Err(Error::ShapeMismatch {
            expected: parents.len(),
            got: joints.len(),
        });
    }
    let mut bones = Vec::with_capacity(joints.len().saturating_sub(1));
    for (child, parent) in parents.iter().enumerate() {
        if let Some(p) = *parent {
            if p >= joints.len() {
                return Err(Error::InvalidTree(format!("parent index {p} out of range")));
            }
            bones.push(joints[child] - joints[p]);
        }
    }
    Ok(bones)
}

/// Breadth-first order from the unique root. Fails on cycles, multiple roots
/// or dangling parent indices.
pub fn topological_order(parent: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parent.len();
    for (j, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= n {
                return Err(Error::InvalidTree(format!(
                    "keypoint {j} has parent {p} out of range"
                )));
            }
        }
    }
    // walk to the root from every node; a walk longer than n revisits a node
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parent[cur] {
            cur = p;
            steps += 1;
            if steps > n {
                return Err(Error::TreeCycle);
            }
        }
    }
    let roots: Vec<usize> = (0..n).filter(|&j| parent[j].is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::InvalidTree(format!(
            "expected a single root, found {}",
            roots.len()
        )));
    }
    let mut children = vec![Vec::new(); n];
    for (j, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            children[p].push(j);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::from([roots[0]]);
    while let Some(j) = queue.pop_front() {
        order.push(j);
        queue.extend(children[j].iter().copied());
    }
    Ok(order)
}

fn validate_skinning(skin: &Skinning) -> Result<()> {
    let n = skin.vertices.len();
    if skin.weights.len() != n {
        return Err(Error::malformed(
            "skinning.weights",
            format!("expected {n} rows, got {}", skin.weights.len()),
        ));
    }
    for (row, w) in skin.weights.iter().enumerate() {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::malformed(
                "skinning.weights",
                format!("row {row} has a negative or non-finite weight"),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::SkinningWeights { row, sum });
        }
    }
    if skin.vertex_shape_basis.len() != NUM_BETAS {
        return Err(Error::ShapeBasisRank(skin.vertex_shape_basis.len()));
    }
    if skin.vertex_shape_basis.iter().any(|b| b.len() != n) {
        return Err(Error::malformed(
            "skinning.vertex_shape_basis",
            format!("every basis set must hold {n} vertices"),
        ));
    }
    if let Some(f) = skin.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
        return Err(Error::malformed(
            "skinning.faces",
            format!("face {f:?} references a vertex out of range"),
        ));
    }
    Ok(())
}
