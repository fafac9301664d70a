//! Per-sequence post-processing: confidence gating followed by causal
//! smoothing of pose, shape and camera parameters.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::WeakCamera;
use crate::error::{Error, Result};
use crate::geometry::{Joints2D, PatchSpec};
use crate::hand_model::{
    canonicalize_axis_angle, HandPose, HandShape, Joints3D, NUM_BETAS, NUM_ROTATIONS,
};

pub const FRAME_FORMAT_VERSION: u32 = 1;

fn format_version() -> u32 {
    FRAME_FORMAT_VERSION
}

/// One frame of a motion-capture sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub frame_index: u64,
    pub pose: HandPose,
    pub shape: HandShape,
    pub weak: WeakCamera,
    /// Detected joints in patch pixels.
    pub joints2d: Joints2D,
    pub spec: PatchSpec,
    pub confidence: f64,
    /// Gated frame with no reliable predecessor in reach.
    #[serde(default)]
    pub unreliable: bool,
    /// Frame index whose parameters were copied into this frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced_from: Option<u64>,
    /// Posed joints in camera coordinates (meters), original frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints3d: Option<Joints3D>,
    /// Reprojected joints in top-left frame pixels, original frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints2d_proj: Option<Joints2D>,
    /// Posed mesh vertices in camera coordinates (meters), original frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Vector3<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    Off,
    Exponential {
        alpha: f64,
    },
    OneEuro {
        min_cutoff: f64,
        beta: f64,
        d_cutoff: f64,
    },
}

impl Smoothing {
    pub fn one_euro_default() -> Self {
        Smoothing::OneEuro {
            min_cutoff: 1.0,
            beta: 0.05,
            d_cutoff: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub threshold: f64,
    pub smoothing: Smoothing,
    pub max_hold_frames: u64,
    /// Frame rate used to turn frame indices into seconds for one-euro.
    pub rate_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: crate::confidence::DEFAULT_THRESHOLD,
            smoothing: Smoothing::Off,
            max_hold_frames: 30,
            rate_hz: 30.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= -1.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must lie in [-1, 1)"));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::invalid("rate_hz must be positive"));
        }
        match self.smoothing {
            Smoothing::Off => {}
            Smoothing::Exponential { alpha } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::invalid("exponential alpha must lie in (0, 1]"));
                }
            }
            Smoothing::OneEuro {
                min_cutoff,
                beta,
                d_cutoff,
            } => {
                if !(min_cutoff > 0.0 && d_cutoff > 0.0 && beta >= 0.0) {
                    return Err(Error::invalid(
                        "one-euro cutoffs must be positive, beta ≥ 0",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_sequence(frames: &[FrameResult]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    if let Some(w) = frames
        .windows(2)
        .find(|w| w[1].frame_index <= w[0].frame_index)
    {
        return Err(Error::invalid(format!(
            "frame indices must increase strictly ({} then {})",
            w[0].frame_index, w[1].frame_index
        )));
    }
    Ok(())
}

/// Replaces the parameters of low-confidence frames with those of the most
/// recent reliable frame within `max_hold_frames`.
pub fn gate_sequence(frames: &[FrameResult], cfg: &FilterConfig) -> Result<Vec<FrameResult>> {
    check_sequence(frames)?;
    cfg.validate()?;
    let mut last_good: Option<usize> = None;
    let mut out = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        if frame.confidence >= cfg.threshold {
            last_good = Some(i);
            out.push(frame.clone());
            continue;
        }
        let mut gated = frame.clone();
        match last_good {
            Some(k) if frame.frame_index - frames[k].frame_index <= cfg.max_hold_frames => {
                let src = &frames[k];
                gated.pose = src.pose;
                gated.shape = src.shape;
                gated.weak = src.weak;
                gated.replaced_from = Some(src.frame_index);
                gated.unreliable = false;
            }
            _ => {
                gated.replaced_from = None;
                gated.unreliable = true;
            }
        }
        out.push(gated);
    }
    Ok(out)
}

/// Frames whose confidence falls below the threshold.
pub fn gated_indices(frames: &[FrameResult], threshold: f64) -> Vec<u64> {
    frames
        .iter()
        .filter(|f| f.confidence < threshold)
        .map(|f| f.frame_index)
        .collect()
}

/// Single-channel causal filter state.
#[derive(Debug, Clone)]
enum ChannelFilter {
    Exponential {
        alpha: f64,
        y: f64,
    },
    OneEuro {
        min_cutoff: f64,
        beta: f64,
        d_cutoff: f64,
        x_hat: f64,
        dx_hat: f64,
    },
}

fn lowpass_alpha(cutoff: f64, dt: f64) -> f64 {
    let tau = 1.0 / (TAU * cutoff);
    1.0 / (1.0 + tau / dt)
}

impl ChannelFilter {
    fn new(smoothing: Smoothing, x0: f64) -> Option<Self> {
        match smoothing {
            Smoothing::Off => None,
            Smoothing::Exponential { alpha } => Some(ChannelFilter::Exponential { alpha, y: x0 }),
            Smoothing::OneEuro {
                min_cutoff,
                beta,
                d_cutoff,
            } => Some(ChannelFilter::OneEuro {
                min_cutoff,
                beta,
                d_cutoff,
                x_hat: x0,
                dx_hat: 0.0,
            }),
        }
    }

    fn step(&mut self, x: f64, dt: f64) -> f64 {
        match self {
            ChannelFilter::Exponential { alpha, y } => {
                // y + α(x − y) is exact when x == y
                *y += *alpha * (x - *y);
                *y
            }
            ChannelFilter::OneEuro {
                min_cutoff,
                beta,
                d_cutoff,
                x_hat,
                dx_hat,
            } => {
                let dx = (x - *x_hat) / dt;
                *dx_hat += lowpass_alpha(*d_cutoff, dt) * (dx - *dx_hat);
                let cutoff = *min_cutoff + *beta * dx_hat.abs();
                *x_hat += lowpass_alpha(cutoff, dt) * (x - *x_hat);
                *x_hat
            }
        }
    }
}

/// Among the axis-angle vectors equivalent to `r` (angle shifted by
/// multiples of 2π), the one closest to `prev`; `r` itself wins ties.
fn continuous_axis_angle(r: &Vector3<f64>, prev: &Vector3<f64>) -> Vector3<f64> {
    let c0 = canonicalize_axis_angle(r);
    let theta = c0.norm();
    let mut best = *r;
    let mut best_d = (r - prev).norm();
    if theta > 0.0 && theta <= PI + 1e-12 {
        let axis = c0 / theta;
        for k in -2i32..=2 {
            let cand = c0 + axis * (TAU * k as f64);
            let d = (cand - prev).norm();
            if d < best_d {
                best = cand;
                best_d = d;
            }
        }
    }
    best
}

const CHANNELS: usize = NUM_ROTATIONS * 3 + NUM_BETAS + 3;

fn to_channels(pose: &HandPose, shape: &HandShape, weak: &WeakCamera) -> [f64; CHANNELS] {
    let mut ch = [0.0; CHANNELS];
    for (k, r) in pose.rotations.iter().enumerate() {
        ch[k * 3..k * 3 + 3].copy_from_slice(r.as_slice());
    }
    let off = NUM_ROTATIONS * 3;
    ch[off..off + NUM_BETAS].copy_from_slice(&shape.betas);
    ch[off + NUM_BETAS..].copy_from_slice(&weak.to_array());
    ch
}

fn from_channels(ch: &[f64; CHANNELS]) -> (HandPose, HandShape, WeakCamera) {
    let off = NUM_ROTATIONS * 3;
    let pose = HandPose::from_flat(&ch[..off]).expect("fixed length");
    let mut shape = HandShape::default();
    shape.betas.copy_from_slice(&ch[off..off + NUM_BETAS]);
    let weak = WeakCamera::from_array([
        ch[off + NUM_BETAS],
        ch[off + NUM_BETAS + 1],
        ch[off + NUM_BETAS + 2],
    ]);
    (pose, shape, weak)
}

/// Causal per-channel smoothing of pose, shape and weak camera. The first
/// frame passes through unchanged.
pub fn smooth_sequence(frames: &[FrameResult], cfg: &FilterConfig) -> Result<Vec<FrameResult>> {
    check_sequence(frames)?;
    cfg.validate()?;
    if cfg.smoothing == Smoothing::Off {
        return Ok(frames.to_vec());
    }
    let first = &frames[0];
    let mut reps = first.pose.rotations;
    let init = to_channels(&first.pose, &first.shape, &first.weak);
    let mut filters: Vec<ChannelFilter> = init
        .iter()
        .map(|&x| ChannelFilter::new(cfg.smoothing, x).expect("smoothing enabled"))
        .collect();

    let mut out = Vec::with_capacity(frames.len());
    out.push(first.clone());
    for w in frames.windows(2) {
        let (prev, frame) = (&w[0], &w[1]);
        let dt = (frame.frame_index - prev.frame_index) as f64 / cfg.rate_hz;
        let mut pose = frame.pose;
        for (r, rep) in pose.rotations.iter_mut().zip(reps.iter_mut()) {
            *r = continuous_axis_angle(r, rep);
            *rep = *r;
        }
        let input = to_channels(&pose, &frame.shape, &frame.weak);
        let mut smoothed = [0.0; CHANNELS];
        for ((y, x), f) in smoothed.iter_mut().zip(input).zip(filters.iter_mut()) {
            *y = f.step(x, dt);
        }
        let (pose, shape, weak) = from_channels(&smoothed);
        let mut next = frame.clone();
        next.pose = pose;
        next.shape = shape;
        next.weak = weak;
        out.push(next);
    }
    Ok(out)
}
