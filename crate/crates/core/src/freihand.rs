//! Loader for FreiHAND-layout annotation arrays.
//!
//! A split `name` is stored as `{name}_K.json` (list of 3×3 intrinsics),
//! `{name}_xyz.json` (list of 21×3 joints, meters, camera frame) and an
//! optional `{name}_verts.json` (list of N×3 vertices).

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Joints2D;
use crate::hand_model::{Joints3D, NUM_KEYPOINTS};
use crate::records::read_json;

/// FreiHAND keypoint index for each canonical keypoint. The dataset already
/// uses wrist-then-fingers ordering, so this is the identity.
pub const FREIHAND_TO_CANONICAL: [usize; NUM_KEYPOINTS] = {
    let mut map = [0; NUM_KEYPOINTS];
    let mut i = 0;
    while i < NUM_KEYPOINTS {
        map[i] = i;
        i += 1;
    }
    map
};

#[derive(Debug, Clone, PartialEq)]
pub struct FreiHandSample {
    pub intrinsics: Matrix3<f64>,
    pub joints: Joints3D,
    pub vertices: Option<Vec<Vector3<f64>>>,
}

impl FreiHandSample {
    /// Pixel coordinates of the joints under the sample intrinsics.
    pub fn project(&self) -> Result<Joints2D> {
        let mut out = Joints2D::default();
        for (j, (p, o)) in self.joints.0.iter().zip(out.0.iter_mut()).enumerate() {
            let q = self.intrinsics * p;
            if q.z <= 1e-6 {
                return Err(Error::BehindCamera {
                    joint: j,
                    depth: q.z,
                });
            }
            *o = Vector2::new(q.x / q.z, q.y / q.z);
        }
        Ok(out)
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::AnnotationLength(format!(
            "{what} has {got} entries, intrinsics list has {expected}"
        )));
    }
    Ok(())
}

fn intrinsics(k: &[[f64; 3]; 3], index: usize) -> Result<Matrix3<f64>> {
    let m = Matrix3::from_fn(|r, c| k[r][c]);
    let (fx, fy) = (m[(0, 0)], m[(1, 1)]);
    let last_row_ok = m[(2, 0)] == 0.0 && m[(2, 1)] == 0.0 && m[(2, 2)] != 0.0;
    if !(fx > 0.0 && fy > 0.0 && last_row_ok && m.iter().all(|v| v.is_finite()))
        || m.try_inverse().is_none()
    {
        return Err(Error::DegenerateIntrinsics(index));
    }
    Ok(m)
}

pub fn load_freihand_annotations(
    root: impl AsRef<Path>,
    split: &str,
) -> Result<Vec<FreiHandSample>> {
    let root = root.as_ref();
    let ks: Vec<[[f64; 3]; 3]> = read_json(root.join(format!("{split}_K.json")))?;
    let xyz: Vec<Vec<[f64; 3]>> = read_json(root.join(format!("{split}_xyz.json")))?;
    let verts_path = root.join(format!("{split}_verts.json"));
    let verts: Option<Vec<Vec<[f64; 3]>>> = if verts_path.exists() {
        Some(read_json(&verts_path)?)
    } else {
        None
    };

    check_len("xyz list", xyz.len(), ks.len())?;
    if let Some(v) = &verts {
        check_len("verts list", v.len(), ks.len())?;
    }

    let mut samples = Vec::with_capacity(ks.len());
    for (i, (k, joints)) in ks.iter().zip(&xyz).enumerate() {
        if joints.len() != NUM_KEYPOINTS {
            return Err(Error::AnnotationLength(format!(
                "sample {i} has {} joints, expected {NUM_KEYPOINTS}",
                joints.len()
            )));
        }
        let mut canonical = Joints3D::default();
        for (dst, &src) in canonical.0.iter_mut().zip(&FREIHAND_TO_CANONICAL) {
            *dst = Vector3::from(joints[src]);
        }
        if !canonical.is_finite() {
            return Err(Error::NonFinite(format!("joints of sample {i}")));
        }
        samples.push(FreiHandSample {
            intrinsics: intrinsics(k, i)?,
            joints: canonical,
            vertices: verts
                .as_ref()
                .map(|v| v[i].iter().map(|&p| Vector3::from(p)).collect()),
        });
    }
    Ok(samples)
}
