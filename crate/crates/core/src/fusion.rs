//! Positional encoding of decoded 2D joints and assembly of the hybrid
//! feature vector.
//!
//! `V_PE` is flattened joint-major, then axis (x before y), then octave
//! `l = 1..=L`, then `(sin, cos)`:
//!
//! ```text
//! [j0.x: sin 2¹πμ, cos 2¹πμ, …, sin 2ᴸπμ, cos 2ᴸπμ][j0.y: …][j1.x: …] …
//! ```

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Joints2D;
use crate::hand_model::NUM_KEYPOINTS;

pub const DEFAULT_OCTAVES: usize = 4;
pub const DEFAULT_POOLED_DIM: usize = 2048;

/// `(sin πx, cos πx)` with exact range reduction, so multiples of 1/2 give
/// exact zeros and ones.
pub fn sin_cos_pi(x: f64) -> (f64, f64) {
    // x = n/2 + f with |f| ≤ 1/4; both steps are exact in binary
    let r = x % 2.0;
    let n = (2.0 * r).round();
    let f = r - n / 2.0;
    let (s, c) = (std::f64::consts::PI * f).sin_cos();
    match (n as i64).rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// `μ = (J − (s_p/2, s_p/2)) / f`.
pub fn pe_normalize(joints: &Joints2D, net_size: f64, focal: f64) -> Result<Vec<Vector2<f64>>> {
    if !(focal > 0.0) {
        return Err(Error::invalid(format!(
            "focal must be positive, got {focal}"
        )));
    }
    let half = Vector2::repeat(net_size / 2.0);
    Ok(joints.points().iter().map(|p| (p - half) / focal).collect())
}

/// Encoding of one scalar: `(sin 2¹πp, cos 2¹πp, …, sin 2ᴸπp, cos 2ᴸπp)`.
pub fn gamma(p: f64, octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * octaves);
    let mut freq = 2.0;
    for _ in 0..octaves {
        let (s, c) = sin_cos_pi(freq * p);
        out.push(s);
        out.push(c);
        freq *= 2.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedJoints {
    pub octaves: usize,
    pub values: Vec<f64>,
}

impl EncodedJoints {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn positional_encode(mu: &[Vector2<f64>], octaves: usize) -> Result<EncodedJoints> {
    if octaves < 1 {
        return Err(Error::invalid("octave count must be at least 1"));
    }
    let mut values = Vec::with_capacity(mu.len() * 4 * octaves);
    for p in mu {
        values.extend(gamma(p.x, octaves));
        values.extend(gamma(p.y, octaves));
    }
    Ok(EncodedJoints { octaves, values })
}

/// Expected `V_PE` length for 21 joints.
pub fn encoded_len(octaves: usize) -> usize {
    2 * NUM_KEYPOINTS * 2 * octaves
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

/// Global spatial pooling of a `channels × height × width` feature map.
pub fn pool_feature_map(
    values: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    pooling: Pooling,
) -> Result<Vec<f64>> {
    let plane = height * width;
    if values.len() != channels * plane {
        return Err(Error::ShapeMismatch {
            expected: channels * plane,
            got: values.len(),
        });
    }
    if plane == 0 {
        return Err(Error::Empty("feature map plane"));
    }
    Ok(values
        .chunks_exact(plane)
        .map(|c| match pooling {
            Pooling::Mean => c.iter().sum::<f64>() / plane as f64,
            Pooling::Max => c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}

/// `[V_Fm ‖ V_PE]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DahyfVector {
    pub feature_dim: usize,
    pub values: Vec<f64>,
}

impl DahyfVector {
    pub fn feature_part(&self) -> &[f64] {
        &self.values[..self.feature_dim]
    }

    pub fn encoding_part(&self) -> &[f64] {
        &self.values[self.feature_dim..]
    }
}

pub fn assemble_dahyf(v_fm: &[f64], v_pe: &EncodedJoints) -> Result<DahyfVector> {
    if v_fm.iter().chain(&v_pe.values).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hybrid feature input".into()));
    }
    let mut values = Vec::with_capacity(v_fm.len() + v_pe.len());
    values.extend_from_slice(v_fm);
    values.extend_from_slice(&v_pe.values);
    Ok(DahyfVector {
        feature_dim: v_fm.len(),
        values,
    })
}
