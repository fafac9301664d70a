//! Weak-perspective camera head, its conversion to a full-perspective
//! camera in the frame and pinhole projection.
//!
//! The conversion follows the crop-aware construction used by CLIFF-style
//! regressors: with patch center `c`, frame center `O`, focal `f`, patch
//! size `s_i` and weak camera `(s, tx, ty)`,
//!
//! ```text
//! T_z = 2f / (s · s_i)
//! T_x = tx + 2 (c_x − O_x) / (s · s_i)
//! T_y = ty + 2 (c_y − O_y) / (s · s_i)
//! ```

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Joints2D, PatchSpec};
use crate::hand_model::Joints3D;

const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakCamera {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl WeakCamera {
    pub fn new(s: f64, tx: f64, ty: f64) -> Self {
        Self { s, tx, ty }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.s, self.tx, self.ty]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullCamera {
    pub focal: f64,
    pub principal: Vector2<f64>,
    pub translation: Vector3<f64>,
}

pub fn weak_to_full(weak: &WeakCamera, spec: &PatchSpec) -> Result<FullCamera> {
    if !(weak.s > 0.0) {
        return Err(Error::invalid(format!(
            "weak camera scale must be positive, got {}",
            weak.s
        )));
    }
    if !(spec.patch_size > 0.0) {
        return Err(Error::invalid("patch_size must be positive"));
    }
    let focal = spec.focal_or_default()?;
    let denom = weak.s * spec.patch_size;
    let c = spec.patch_center();
    let o = spec.frame_center();
    Ok(FullCamera {
        focal,
        principal: o,
        translation: Vector3::new(
            weak.tx + 2.0 * (c.x - o.x) / denom,
            weak.ty + 2.0 * (c.y - o.y) / denom,
            2.0 * focal / denom,
        ),
    })
}

/// Inverse of [`weak_to_full`] for a given crop.
pub fn full_to_weak(translation: &Vector3<f64>, spec: &PatchSpec) -> Result<WeakCamera> {
    let focal = spec.focal_or_default()?;
    if !(translation.z > 0.0) {
        return Err(Error::invalid("camera depth must be positive"));
    }
    let s = 2.0 * focal / (translation.z * spec.patch_size);
    let denom = s * spec.patch_size;
    let c = spec.patch_center();
    let o = spec.frame_center();
    Ok(WeakCamera::new(
        s,
        translation.x - 2.0 * (c.x - o.x) / denom,
        translation.y - 2.0 * (c.y - o.y) / denom,
    ))
}

pub fn project_point(p: &Vector3<f64>, cam: &FullCamera) -> Option<Vector2<f64>> {
    let q = p + cam.translation;
    if q.z <= MIN_DEPTH {
        return None;
    }
    Some(Vector2::new(
        cam.focal * q.x / q.z + cam.principal.x,
        cam.focal * q.y / q.z + cam.principal.y,
    ))
}

/// Pinhole projection into top-left frame pixels.
pub fn project_points(joints: &Joints3D, cam: &FullCamera) -> Result<Joints2D> {
    let mut out = Joints2D::default();
    for (j, (p, o)) in joints.0.iter().zip(out.0.iter_mut()).enumerate() {
        *o = project_point(p, cam).ok_or(Error::BehindCamera {
            joint: j,
            depth: p.z + cam.translation.z,
        })?;
    }
    Ok(out)
}

/// Scaled-orthographic image of the joints: `s · (x + t) · s_i / 2 + c`.
pub fn weak_project(joints: &Joints3D, weak: &WeakCamera, spec: &PatchSpec) -> Joints2D {
    let c = spec.patch_center();
    let t = Vector2::new(weak.tx, weak.ty);
    let k = weak.s * spec.patch_size / 2.0;
    joints.map_2d(|p| (p.xy() + t) * k + c)
}

impl Joints3D {
    fn map_2d(&self, f: impl Fn(&Vector3<f64>) -> Vector2<f64>) -> Joints2D {
        Joints2D(self.0.map(|p| f(&p)))
    }
}
