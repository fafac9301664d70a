//! Coordinate bookkeeping between the feature map, the resized hand patch and
//! the full frame, plus the local and global direction maps.
//!
//! Frame pixel coordinates have their origin at the top-left corner. The
//! "centered" frame coordinates produced by [`patch_to_frame`] have their
//! origin at the frame center `O = (W/2, H/2)`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NET_SIZE: f64 = 224.0;
pub const DEFAULT_FEAT_SIZE: usize = 56;

/// 21 keypoints in pixels, canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Joints2D(pub [Vector2<f64>; crate::hand_model::NUM_KEYPOINTS]);

impl Default for Joints2D {
    fn default() -> Self {
        Self([Vector2::zeros(); crate::hand_model::NUM_KEYPOINTS])
    }
}

impl Joints2D {
    pub fn from_slice(points: &[Vector2<f64>]) -> Result<Self> {
        let arr = points.try_into().map_err(|_| Error::ShapeMismatch {
            expected: crate::hand_model::NUM_KEYPOINTS,
            got: points.len(),
        })?;
        Ok(Self(arr))
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|p| p.x.is_finite() && p.y.is_finite())
    }

    pub fn map(&self, f: impl Fn(&Vector2<f64>) -> Vector2<f64>) -> Self {
        Self(self.0.map(|p| f(&p)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    #[default]
    Right,
}

fn default_net_size() -> f64 {
    DEFAULT_NET_SIZE
}

fn default_feat_size() -> usize {
    DEFAULT_FEAT_SIZE
}

/// Square hand crop within a frame.
///
/// When `flipped` is set the patch was mirrored from a left hand. All
/// coordinates of a flipped spec (including `upper_left`) then live in the
/// horizontally mirrored frame, where the hand is a right hand; see
/// [`PatchSpec::mirrored`] and [`unflip_frame_point`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub frame_w: f64,
    pub frame_h: f64,
    pub upper_left: Vector2<f64>,
    pub patch_size: f64,
    #[serde(default = "default_net_size")]
    pub net_size: f64,
    #[serde(default = "default_feat_size")]
    pub feat_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal: Option<f64>,
    #[serde(default)]
    pub handedness: Handedness,
    #[serde(default)]
    pub flipped: bool,
}

impl PatchSpec {
    pub fn new(frame_w: f64, frame_h: f64, upper_left: Vector2<f64>, patch_size: f64) -> Self {
        Self {
            frame_w,
            frame_h,
            upper_left,
            patch_size,
            net_size: DEFAULT_NET_SIZE,
            feat_size: DEFAULT_FEAT_SIZE,
            focal: None,
            handedness: Handedness::Right,
            flipped: false,
        }
    }

    pub fn with_focal(mut self, focal: f64) -> Self {
        self.focal = Some(focal);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.frame_w, self.frame_h, self.patch_size, self.net_size]
            .iter()
            .chain(self.upper_left.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("patch spec".into()));
        }
        if self.frame_w <= 0.0 || self.frame_h <= 0.0 {
            return Err(Error::invalid("frame dimensions must be positive"));
        }
        if self.patch_size <= 0.0 {
            return Err(Error::invalid("patch_size must be positive"));
        }
        if self.net_size <= 0.0 || self.feat_size == 0 {
            return Err(Error::invalid("net_size and feat_size must be positive"));
        }
        if let Some(f) = self.focal {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::invalid("focal must be positive"));
            }
        }
        Ok(())
    }

    /// Focal length in pixels; falls back to the frame diagonal.
    pub fn focal_or_default(&self) -> Result<f64> {
        match self.focal {
            Some(f) => Ok(f),
            None => default_focal(self.frame_w, self.frame_h),
        }
    }

    /// Feature-to-patch scale `s_p / s_f`.
    pub fn feat_scale(&self) -> f64 {
        self.net_size / self.feat_size as f64
    }

    /// Patch-to-frame scale `s_i / s_p`.
    pub fn patch_scale(&self) -> f64 {
        self.patch_size / self.net_size
    }

    pub fn frame_center(&self) -> Vector2<f64> {
        Vector2::new(self.frame_w / 2.0, self.frame_h / 2.0)
    }

    /// Patch center `C` in top-left frame pixels.
    pub fn patch_center(&self) -> Vector2<f64> {
        self.upper_left + Vector2::repeat(self.patch_size / 2.0)
    }

    /// The same crop expressed in the horizontally mirrored frame. Involution.
    pub fn mirrored(&self) -> Self {
        let mut out = *self;
        out.upper_left.x = self.frame_w - self.upper_left.x - self.patch_size;
        out.flipped = !self.flipped;
        out
    }
}

/// `√(W² + H²)`, the fallback focal length.
pub fn default_focal(frame_w: f64, frame_h: f64) -> Result<f64> {
    if !(frame_w > 0.0 && frame_h > 0.0) {
        return Err(Error::invalid(format!(
            "frame dimensions must be positive, got {frame_w}×{frame_h}"
        )));
    }
    Ok(frame_w.hypot(frame_h))
}

/// Feature-map pixel to resized-patch pixel: `P_f · sc_p + sc_p / 2`.
pub fn feat_to_patch(p_f: Vector2<f64>, spec: &PatchSpec) -> Vector2<f64> {
    let sc = spec.feat_scale();
    p_f * sc + Vector2::repeat(sc / 2.0)
}

/// Patch pixel to centered frame coordinates: `P_l · sc_o + P_ulc − O`.
pub fn patch_to_frame(p_l: Vector2<f64>, spec: &PatchSpec) -> Vector2<f64> {
    p_l * spec.patch_scale() + spec.upper_left - spec.frame_center()
}

/// Inverse of [`patch_to_frame`].
pub fn frame_to_patch(p_g: Vector2<f64>, spec: &PatchSpec) -> Vector2<f64> {
    (p_g + spec.frame_center() - spec.upper_left) / spec.patch_scale()
}

/// Patch pixel to top-left frame pixels (no centering).
pub fn patch_to_pixel(p_l: Vector2<f64>, spec: &PatchSpec) -> Vector2<f64> {
    p_l * spec.patch_scale() + spec.upper_left
}

/// Inverse of [`patch_to_pixel`].
pub fn pixel_to_patch(p: Vector2<f64>, spec: &PatchSpec) -> Vector2<f64> {
    (p - spec.upper_left) / spec.patch_scale()
}

pub fn frame_to_direction(p_g: Vector2<f64>, focal: f64) -> Result<Vector2<f64>> {
    if !(focal > 0.0) {
        return Err(Error::invalid(format!(
            "focal must be positive, got {focal}"
        )));
    }
    Ok(p_g / focal)
}

/// Maps a top-left frame pixel of a flipped spec back to the original frame.
pub fn unflip_frame_point(p: Vector2<f64>, spec: &PatchSpec) -> Vector2<f64> {
    if spec.flipped {
        Vector2::new(spec.frame_w - p.x, p.y)
    } else {
        p
    }
}

/// Pixel-indexed horizontal mirror `x' = s_p − 1 − x`. Involution.
pub fn mirror_joints(joints: &[Vector2<f64>], net_size: f64) -> Vec<Vector2<f64>> {
    joints
        .iter()
        .map(|p| Vector2::new(net_size - 1.0 - p.x, p.y))
        .collect()
}

/// Flips a left-hand patch to the right. The returned spec is expressed in
/// the mirrored frame and marked `flipped`.
pub fn flip_left_patch(
    spec: &PatchSpec,
    joints_2d: &[Vector2<f64>],
) -> Result<(PatchSpec, Vec<Vector2<f64>>)> {
    if spec.handedness != Handedness::Left {
        return Err(Error::invalid(
            "flip_left_patch called on a right-hand patch",
        ));
    }
    let mut out = spec.mirrored();
    out.handedness = Handedness::Right;
    Ok((out, mirror_joints(joints_2d, spec.net_size)))
}

/// Dense `channels × size × size` map. Even channels hold x-directions and
/// odd channels y-directions; all planes of one parity are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl DirectionMap {
    fn from_planes(
        width: usize,
        height: usize,
        channels: usize,
        x_plane: &[f64],
        y_plane: &[f64],
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "direction map channel count must be even and positive, got {channels}"
            )));
        }
        let mut data = Vec::with_capacity(channels * width * height);
        for c in 0..channels {
            data.extend_from_slice(if c % 2 == 0 { x_plane } else { y_plane });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Row-major `[channel][row][col]` values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// `(x, y)` direction at a feature pixel.
    pub fn at(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(self.get(0, row, col), self.get(1, row, col))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    pub fn to_array(&self) -> crate::binio::DenseArray {
        crate::binio::DenseArray::new(
            vec![self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("consistent dims")
    }
}

/// Viewing-ray directions of every feature pixel of the patch.
pub fn global_direction_map(spec: &PatchSpec, channels: usize) -> Result<DirectionMap> {
    spec.validate()?;
    let focal = spec.focal_or_default()?;
    let n = spec.feat_size;
    let mut xs = Vec::with_capacity(n * n);
    let mut ys = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let p_l = feat_to_patch(Vector2::new(col as f64, row as f64), spec);
            let d = frame_to_direction(patch_to_frame(p_l, spec), focal)?;
            xs.push(d.x);
            ys.push(d.y);
        }
    }
    DirectionMap::from_planes(n, n, channels, &xs, &ys)
}

/// Raw column / row index ramps with the origin at the upper-left corner.
pub fn local_direction_map(feat_size: usize, channels: usize) -> Result<DirectionMap> {
    let n = feat_size;
    let mut xs = Vec::with_capacity(n * n);
    let mut ys = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            xs.push(col as f64);
            ys.push(row as f64);
        }
    }
    DirectionMap::from_planes(n, n, channels, &xs, &ys)
}
