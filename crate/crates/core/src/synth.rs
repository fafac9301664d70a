//! Deterministic synthetic hand sequences.
//!
//! Randomness policy: every purpose draws from its own ChaCha8 stream keyed
//! by the sequence seed, so adding draws for one purpose never shifts
//! another. Streams are listed in [`Stream`].

use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binio::DenseArray;
use crate::camera::{full_to_weak, project_points, FullCamera};
use crate::codec::{encode_labels, CodecConfig};
use crate::confidence::{sample_negative_patches, BoxRegion, NegativeSampling};
use crate::config::FocalPolicy;
use crate::error::{Error, Result};
use crate::geometry::{pixel_to_patch, Joints2D, PatchSpec};
use crate::hand_model::{HandModelParams, HandPose, HandShape, NUM_BETAS, NUM_ROTATIONS};
use crate::pipeline::analyze_frame;
use crate::tempfilter::{FrameResult, FRAME_FORMAT_VERSION};

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Motion = 1,
    Shape = 2,
    JointNoise = 3,
    PoseNoise = 4,
    Outliers = 5,
    Negatives = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionPreset {
    /// Wrist sway with staggered finger flexion.
    Wave,
    /// All fingers close and open together.
    Grasp,
    /// A fixed pose with a slowly drifting camera.
    Static,
}

impl FromStr for MotionPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave" => Ok(MotionPreset::Wave),
            "grasp" => Ok(MotionPreset::Grasp),
            "static" => Ok(MotionPreset::Static),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NoiseLevels {
    /// Standard deviation of detected joint noise, patch pixels.
    pub joints2d_px: f64,
    /// Standard deviation of pose noise per axis-angle component, radians.
    pub pose_rad: f64,
    /// Fraction of frames replaced by scrambled outliers (never frame 0).
    pub outlier_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub motion: MotionPreset,
    pub noise: NoiseLevels,
    pub seed: u64,
    pub frame_w: f64,
    pub frame_h: f64,
    pub focal: f64,
    pub rate_hz: f64,
    /// Outlier frames are redrawn until their confidence is below this.
    pub outlier_threshold: f64,
    pub negatives_per_frame: usize,
    pub with_vertices: bool,
    pub with_logits: bool,
    pub codec: CodecConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_frames: 300,
            motion: MotionPreset::Wave,
            noise: NoiseLevels::default(),
            seed: 0,
            frame_w: 640.0,
            frame_h: 480.0,
            focal: 800.0,
            rate_hz: 30.0,
            outlier_threshold: crate::confidence::DEFAULT_THRESHOLD,
            negatives_per_frame: 0,
            with_vertices: true,
            with_logits: false,
            codec: CodecConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::invalid("n_frames must be positive"));
        }
        if !(self.frame_w > 0.0 && self.frame_h > 0.0 && self.focal > 0.0 && self.rate_hz > 0.0) {
            return Err(Error::invalid(
                "frame size, focal and rate must be positive",
            ));
        }
        let n = &self.noise;
        if !(n.joints2d_px >= 0.0 && n.pose_rad >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if !(0.0..1.0).contains(&n.outlier_fraction) {
            return Err(Error::invalid("outlier_fraction must lie in [0, 1)"));
        }
        self.codec.validate()
    }

    pub fn n_outliers(&self) -> usize {
        let n = (self.noise.outlier_fraction * self.n_frames as f64).round() as usize;
        n.min(self.n_frames - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub format_version: u32,
    pub frame_index: u64,
    pub patches: Vec<PatchSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub ground_truth: Vec<FrameResult>,
    pub observed: Vec<FrameResult>,
    /// Frame indices of injected outliers, ascending.
    pub outliers: Vec<u64>,
    pub negatives: Vec<NegativeRecord>,
    /// `[n_frames, 21, 2, n_bins]` logits of the observed joints.
    pub logits: Option<DenseArray>,
}

/// Per-joint sinusoid parameters for one sequence.
struct Motion {
    preset: MotionPreset,
    omega: f64,
    phases: [f64; NUM_ROTATIONS],
    amplitudes: [f64; NUM_ROTATIONS],
    spread: [f64; NUM_ROTATIONS],
}

impl Motion {
    fn new(preset: MotionPreset, rate_hz: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Motion {
            preset,
            omega: std::f64::consts::TAU * 0.4 / rate_hz,
            phases: [0.0; NUM_ROTATIONS],
            amplitudes: [0.0; NUM_ROTATIONS],
            spread: [0.0; NUM_ROTATIONS],
        };
        for k in 0..NUM_ROTATIONS {
            m.phases[k] = rng.random_range(0.0..std::f64::consts::TAU);
            m.amplitudes[k] = rng.random_range(0.3..0.7);
            m.spread[k] = rng.random_range(-0.1..0.1);
        }
        m
    }

    fn pose(&self, t: f64) -> HandPose {
        let mut pose = HandPose::default();
        let w = self.omega * t;
        let (global, flex) = match self.preset {
            MotionPreset::Wave => (
                Vector3::new(
                    0.25 * (0.7 * w).sin(),
                    0.3 * w.sin(),
                    0.15 * (0.5 * w + 1.0).sin(),
                ),
                (0..NUM_ROTATIONS)
                    .map(|k| 0.5 * (1.0 - (w + self.phases[k]).cos()))
                    .collect::<Vec<_>>(),
            ),
            MotionPreset::Grasp => (
                Vector3::new(0.1 * (0.3 * w).sin(), 0.0, 0.0),
                vec![0.5 * (1.0 - w.cos()); NUM_ROTATIONS],
            ),
            MotionPreset::Static => (Vector3::new(0.1, -0.2, 0.05), vec![0.4; NUM_ROTATIONS]),
        };
        pose.rotations[0] = global;
        for k in 1..NUM_ROTATIONS {
            // flexion about x curls the finger toward -z; thumb bends about a tilted axis
            let thumb = k <= 3;
            let axis = if thumb {
                Vector3::new(0.5, -0.3, 0.8).normalize()
            } else {
                Vector3::new(1.0, 0.0, 0.0)
            };
            let angle = self.amplitudes[k] * flex[k] * if thumb { 0.6 } else { 1.4 };
            pose.rotations[k] = axis * angle + Vector3::new(0.0, 0.0, self.spread[k]);
        }
        pose
    }

    fn translation(&self, t: f64) -> Vector3<f64> {
        let w = self.omega * t;
        Vector3::new(
            0.04 * (0.5 * w).sin(),
            -0.09 + 0.03 * (0.3 * w + 0.5).sin(),
            0.6 + 0.05 * (0.4 * w).sin(),
        )
    }
}

/// Square crop around the projected joints with a 30% margin.
fn crop_around(points: &Joints2D, cfg: &SynthConfig) -> PatchSpec {
    let (mut lo, mut hi) = (
        Vector2::repeat(f64::INFINITY),
        Vector2::repeat(f64::NEG_INFINITY),
    );
    for p in points.points() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let size = 1.3 * (hi - lo).max();
    let center = (lo + hi) / 2.0;
    PatchSpec::new(
        cfg.frame_w,
        cfg.frame_h,
        center - Vector2::repeat(size / 2.0),
        size,
    )
    .with_focal(cfg.focal)
}

fn hand_box(spec: &PatchSpec) -> BoxRegion {
    BoxRegion {
        x: spec.upper_left.x,
        y: spec.upper_left.y,
        w: spec.patch_size,
        h: spec.patch_size,
    }
}

fn confidence_of(model: &HandModelParams, frame: &FrameResult) -> Result<f64> {
    Ok(analyze_frame(model, frame, FocalPolicy::Explicit)?.confidence)
}

fn ground_truth_frame(
    model: &HandModelParams,
    cfg: &SynthConfig,
    motion: &Motion,
    shape: &HandShape,
    index: u64,
) -> Result<FrameResult> {
    let t = index as f64;
    let pose = motion.pose(t);
    let translation = motion.translation(t);
    let local = model.forward_kinematics(shape, &pose);
    let joints3d = local.map(|p| p + translation);
    let cam = FullCamera {
        focal: cfg.focal,
        principal: Vector2::new(cfg.frame_w / 2.0, cfg.frame_h / 2.0),
        translation,
    };
    let proj = project_points(&local, &cam)?;
    let spec = crop_around(&proj, cfg);
    let weak = full_to_weak(&translation, &spec)?;
    let vertices = match (cfg.with_vertices, model.skinning()) {
        (true, Some(_)) => Some(
            model
                .skin_vertices(shape, &pose)?
                .into_iter()
                .map(|v| v + translation)
                .collect(),
        ),
        _ => None,
    };
    let mut frame = FrameResult {
        format_version: FRAME_FORMAT_VERSION,
        frame_index: index,
        pose,
        shape: *shape,
        weak,
        joints2d: proj.map(|p| pixel_to_patch(*p, &spec)),
        spec,
        confidence: 1.0,
        unreliable: false,
        replaced_from: None,
        joints3d: Some(joints3d),
        joints2d_proj: Some(proj),
        vertices,
    };
    frame.confidence = confidence_of(model, &frame)?;
    Ok(frame)
}

fn scramble(
    model: &HandModelParams,
    frame: &mut FrameResult,
    threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    const MAX_DRAWS: usize = 1000;
    for _ in 0..MAX_DRAWS {
        let mut order: Vec<usize> = (0..frame.joints2d.0.len()).collect();
        order.shuffle(rng);
        let source = frame.joints2d;
        for (dst, &src) in frame.joints2d.0.iter_mut().zip(&order) {
            *dst = source.0[src];
        }
        for r in frame.pose.rotations.iter_mut() {
            *r = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        }
        frame.confidence = confidence_of(model, frame)?;
        if frame.confidence < threshold {
            return Ok(());
        }
    }
    Err(Error::invalid(format!(
        "could not draw an outlier below confidence {threshold} for frame {}",
        frame.frame_index
    )))
}

pub fn synth_sequence(model: &HandModelParams, cfg: &SynthConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    let motion = Motion::new(
        cfg.motion,
        cfg.rate_hz,
        &mut stream_rng(cfg.seed, Stream::Motion),
    );
    let mut shape_rng = stream_rng(cfg.seed, Stream::Shape);
    let mut shape = HandShape::default();
    for b in shape.betas.iter_mut().take(NUM_BETAS) {
        *b = shape_rng.random_range(-0.5..0.5);
    }

    let ground_truth = (0..cfg.n_frames as u64)
        .map(|i| ground_truth_frame(model, cfg, &motion, &shape, i).map_err(|e| e.at_frame(i)))
        .collect::<Result<Vec<_>>>()?;

    let mut outlier_rng = stream_rng(cfg.seed, Stream::Outliers);
    let mut outliers: Vec<u64> =
        rand::seq::index::sample(&mut outlier_rng, cfg.n_frames - 1, cfg.n_outliers())
            .into_iter()
            .map(|i| i as u64 + 1)
            .collect();
    outliers.sort_unstable();

    let joint_noise =
        Normal::new(0.0, cfg.noise.joints2d_px).map_err(|e| Error::invalid(e.to_string()))?;
    let pose_noise =
        Normal::new(0.0, cfg.noise.pose_rad).map_err(|e| Error::invalid(e.to_string()))?;
    let mut joint_rng = stream_rng(cfg.seed, Stream::JointNoise);
    let mut pose_rng = stream_rng(cfg.seed, Stream::PoseNoise);
    let mut observed = Vec::with_capacity(cfg.n_frames);
    for gt in &ground_truth {
        let mut frame = gt.clone();
        frame.joints3d = None;
        frame.joints2d_proj = None;
        frame.vertices = None;
        if cfg.noise.joints2d_px > 0.0 {
            for p in frame.joints2d.0.iter_mut() {
                *p += Vector2::from_fn(|_, _| joint_noise.sample(&mut joint_rng));
            }
        }
        if cfg.noise.pose_rad > 0.0 {
            for r in frame.pose.rotations.iter_mut() {
                *r += Vector3::from_fn(|_, _| pose_noise.sample(&mut pose_rng));
            }
        }
        if outliers.binary_search(&frame.frame_index).is_ok() {
            scramble(model, &mut frame, cfg.outlier_threshold, &mut outlier_rng)
                .map_err(|e| e.at_frame(frame.frame_index))?;
        } else if cfg.noise != NoiseLevels::default() {
            frame.confidence =
                confidence_of(model, &frame).map_err(|e| e.at_frame(frame.frame_index))?;
        }
        observed.push(frame);
    }

    let mut negatives = Vec::new();
    if cfg.negatives_per_frame > 0 {
        let mut rng = stream_rng(cfg.seed, Stream::Negatives);
        for gt in &ground_truth {
            let patches = sample_negative_patches(
                cfg.frame_w,
                cfg.frame_h,
                &[hand_box(&gt.spec)],
                cfg.negatives_per_frame,
                rng.next_u64(),
                &NegativeSampling::default(),
            )
            .map_err(|e| e.at_frame(gt.frame_index))?;
            negatives.push(NegativeRecord {
                format_version: FRAME_FORMAT_VERSION,
                frame_index: gt.frame_index,
                patches,
            });
        }
    }

    let logits = if cfg.with_logits {
        let n_bins = cfg.codec.n_bins();
        let mut data = Vec::with_capacity(cfg.n_frames * 2 * 21 * n_bins);
        for frame in &observed {
            let targets = encode_labels(&frame.joints2d, &cfg.codec)?;
            data.extend_from_slice(targets.to_logits().0.data());
        }
        Some(DenseArray::new(vec![cfg.n_frames, 21, 2, n_bins], data)?)
    } else {
        None
    };

    Ok(SynthSequence {
        ground_truth,
        observed,
        outliers,
        negatives,
        logits,
    })
}
