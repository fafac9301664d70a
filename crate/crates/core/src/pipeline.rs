//! The non-network stages of the capture pipeline, run over a sequence:
//! decode, forward kinematics, camera conversion, projection, confidence,
//! gating, smoothing and scoring.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::DenseArray;
use crate::camera::{project_points, weak_to_full};
use crate::codec::{decode_soft_argmax, BinGrid, CoordLogits};
use crate::confidence::{cosine_similarity, normalize_pred, normalize_proj};
use crate::config::{FocalPolicy, PipelineConfig};
use crate::error::{Error, Result};
use crate::geometry::unflip_frame_point;
use crate::hand_model::{HandModelParams, Joints3D, NUM_KEYPOINTS};
use crate::metrics::{
    epe_2d, f_score, joint_errors, pck_from_errors, procrustes_align, threshold_grid, Matching,
    PckCurve,
};
use crate::records::EvalRecord;
use crate::tempfilter::{gate_sequence, gated_indices, smooth_sequence, FrameResult};

pub const REPORT_FORMAT_VERSION: u32 = 1;
/// F-score thresholds in millimeters.
pub const F_THRESHOLDS_MM: [f64; 2] = [5.0, 15.0];
pub const PCK_MAX_MM: f64 = 50.0;
pub const PCK_STEPS: usize = 50;

/// Reprojection of one frame's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnalysis {
    /// Camera coordinates, original (unflipped) frame.
    pub joints3d: Joints3D,
    /// Top-left pixels, original (unflipped) frame.
    pub joints2d_proj: crate::geometry::Joints2D,
    pub vertices: Option<Vec<Vector3<f64>>>,
    pub confidence: f64,
}

fn unflip_3d(p: Vector3<f64>, flipped: bool) -> Vector3<f64> {
    if flipped {
        Vector3::new(-p.x, p.y, p.z)
    } else {
        p
    }
}

/// FK, weak-to-full conversion, projection and confidence for one frame.
/// Confidence is measured in the patch's own (possibly mirrored) frame.
pub fn analyze_frame(
    model: &HandModelParams,
    frame: &FrameResult,
    policy: FocalPolicy,
) -> Result<FrameAnalysis> {
    let mut spec = frame.spec;
    spec.validate()?;
    spec.focal = Some(policy.resolve(&spec)?);
    let cam = weak_to_full(&frame.weak, &spec)?;
    let local = model.forward_kinematics(&frame.shape, &frame.pose);
    let proj = project_points(&local, &cam)?;
    let confidence = cosine_similarity(
        normalize_pred(&frame.joints2d, &spec).as_slice(),
        normalize_proj(&proj, &spec).as_slice(),
    )?;
    let flipped = spec.flipped;
    let vertices = match model.skinning() {
        Some(_) => Some(
            model
                .skin_vertices(&frame.shape, &frame.pose)?
                .into_iter()
                .map(|v| unflip_3d(v + cam.translation, flipped))
                .collect(),
        ),
        None => None,
    };
    Ok(FrameAnalysis {
        joints3d: local.map(|p| unflip_3d(p + cam.translation, flipped)),
        joints2d_proj: proj.map(|p| unflip_frame_point(*p, &spec)),
        vertices,
        confidence,
    })
}

fn attach(frame: &mut FrameResult, analysis: FrameAnalysis) {
    frame.joints3d = Some(analysis.joints3d);
    frame.joints2d_proj = Some(analysis.joints2d_proj);
    frame.vertices = analysis.vertices;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Sequence-level scores. Joint errors are in millimeters, EPE in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub frames: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub epe: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pa_mpvpe: Option<f64>,
    /// `(threshold_mm, percent)` after Procrustes alignment of the mesh.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub f_scores: Vec<(f64, f64)>,
    /// Fraction of aligned joints within each threshold (mm).
    pub pck: PckCurve,
    pub pck_auc: f64,
    /// Per-frame EPE in frame order.
    pub per_frame_epe: Vec<f64>,
}

struct FrameScores {
    mpjpe: f64,
    pa_mpjpe: f64,
    epe: f64,
    aligned_errors: Vec<f64>,
    mesh: Option<(f64, Vec<f64>)>,
}

fn score_frame(pred: &EvalRecord, gt: &EvalRecord) -> Result<FrameScores> {
    let (p, g) = (pred.joints3d.points(), gt.joints3d.points());
    let errors = joint_errors(p, g)?;
    let aligned = procrustes_align(p, g)?;
    let aligned_errors = aligned
        .aligned
        .iter()
        .zip(g)
        .map(|(a, b)| (a - b).norm() * 1000.0)
        .collect();
    let mesh = match (&pred.vertices, &gt.vertices) {
        (Some(pv), Some(gv)) if pv.len() == gv.len() => {
            let al = procrustes_align(pv, gv)?;
            let pa_mpvpe = crate::metrics::mean_distance(&al.aligned, gv)? * 1000.0;
            let f = F_THRESHOLDS_MM
                .iter()
                .map(|&t| f_score(&al.aligned, gv, t, Matching::Index))
                .collect::<Result<Vec<_>>>()?;
            Some((pa_mpvpe, f))
        }
        _ => None,
    };
    Ok(FrameScores {
        mpjpe: errors.mpjpe,
        pa_mpjpe: errors.pa_mpjpe,
        epe: epe_2d(pred.joints2d_proj.points(), gt.joints2d_proj.points())?,
        aligned_errors,
        mesh,
    })
}

/// Scores predictions against ground truth matched by frame index.
pub fn evaluate(pred: &[EvalRecord], gt: &[EvalRecord]) -> Result<EvalReport> {
    if pred.is_empty() {
        return Err(Error::Empty("prediction sequence"));
    }
    let by_index: std::collections::HashMap<u64, &EvalRecord> =
        gt.iter().map(|g| (g.frame_index, g)).collect();
    let scores = pred
        .par_iter()
        .map(|p| {
            let g = by_index.get(&p.frame_index).ok_or_else(|| {
                Error::malformed("frame_index", "no ground truth for this frame")
                    .at_frame(p.frame_index)
            })?;
            score_frame(p, g).map_err(|e| e.at_frame(p.frame_index))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = scores.len() as f64;
    let mean = |f: &dyn Fn(&FrameScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let all_errors: Vec<f64> = scores
        .iter()
        .flat_map(|s| s.aligned_errors.iter().copied())
        .collect();
    let pck = pck_from_errors(&all_errors, &threshold_grid(PCK_MAX_MM, PCK_STEPS))?;
    let with_mesh: Vec<&(f64, Vec<f64>)> = scores.iter().filter_map(|s| s.mesh.as_ref()).collect();
    let (pa_mpvpe, f_scores) = if with_mesh.len() == scores.len() {
        let m = with_mesh.len() as f64;
        (
            Some(with_mesh.iter().map(|x| x.0).sum::<f64>() / m),
            F_THRESHOLDS_MM
                .iter()
                .enumerate()
                .map(|(k, &t)| (t, with_mesh.iter().map(|x| x.1[k]).sum::<f64>() / m))
                .collect(),
        )
    } else {
        (None, Vec::new())
    };
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        frames: scores.len(),
        mpjpe: mean(&|s| s.mpjpe),
        pa_mpjpe: mean(&|s| s.pa_mpjpe),
        epe: mean(&|s| s.epe),
        pa_mpvpe,
        f_scores,
        pck_auc: pck.auc(),
        pck,
        per_frame_epe: scores.iter().map(|s| s.epe).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub frames: usize,
    pub threshold: f64,
    /// Frames whose confidence fell below the threshold.
    pub gated: Vec<u64>,
    /// Gated frames left unmodified for lack of a reliable predecessor.
    pub unreliable: Vec<u64>,
    pub confidence: Summary,
    /// Scores of the raw per-frame estimates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub before_filter: Option<EvalReport>,
    /// Scores of the gated and smoothed sequence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub after_filter: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub frames: Vec<FrameResult>,
    pub report: RunReport,
}

fn decode_into(
    frames: &mut [FrameResult],
    logits: &DenseArray,
    cfg: &PipelineConfig,
) -> Result<()> {
    let n_bins = cfg.codec.n_bins();
    let expected = [frames.len(), NUM_KEYPOINTS, 2, n_bins];
    if logits.dims != expected {
        return Err(Error::malformed(
            "logits",
            format!("expected dims {expected:?}, got {:?}", logits.dims),
        ));
    }
    let stride = NUM_KEYPOINTS * 2 * n_bins;
    frames
        .par_iter_mut()
        .zip(logits.data.par_chunks(stride))
        .try_for_each(|(frame, chunk)| {
            let grid = BinGrid::new(NUM_KEYPOINTS, n_bins, chunk.to_vec())?;
            frame.joints2d = decode_soft_argmax(&CoordLogits(grid), &cfg.codec)
                .map_err(|e| e.at_frame(frame.frame_index))?;
            Ok(())
        })
}

/// Runs the sequence stages. Output order and frame indices match the input.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    model: &HandModelParams,
    input: &[FrameResult],
    logits: Option<&DenseArray>,
    ground_truth: Option<&[EvalRecord]>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if input.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    let mut raw = input.to_vec();
    if let Some(l) = logits {
        decode_into(&mut raw, l, cfg)?;
    }
    raw.par_iter_mut().try_for_each(|frame| {
        let a = analyze_frame(model, frame, cfg.focal_policy)
            .map_err(|e| e.at_frame(frame.frame_index))?;
        frame.confidence = a.confidence;
        attach(frame, a);
        Ok::<_, Error>(())
    })?;

    let gated = gate_sequence(&raw, &cfg.filter)?;
    let mut filtered = smooth_sequence(&gated, &cfg.filter)?;
    filtered.par_iter_mut().try_for_each(|frame| {
        let a = analyze_frame(model, frame, cfg.focal_policy)
            .map_err(|e| e.at_frame(frame.frame_index))?;
        attach(frame, a);
        Ok::<_, Error>(())
    })?;

    let (before_filter, after_filter) = match ground_truth {
        Some(gt) => {
            let to_eval = |frames: &[FrameResult]| {
                frames
                    .iter()
                    .map(EvalRecord::try_from)
                    .collect::<Result<Vec<_>>>()
            };
            (
                Some(evaluate(&to_eval(&raw)?, gt)?),
                Some(evaluate(&to_eval(&filtered)?, gt)?),
            )
        }
        None => (None, None),
    };
    let confidences: Vec<f64> = raw.iter().map(|f| f.confidence).collect();
    let report = RunReport {
        format_version: REPORT_FORMAT_VERSION,
        frames: filtered.len(),
        threshold: cfg.filter.threshold,
        gated: gated_indices(&raw, cfg.filter.threshold),
        unreliable: filtered
            .iter()
            .filter(|f| f.unreliable)
            .map(|f| f.frame_index)
            .collect(),
        confidence: Summary::of(&confidences).expect("non-empty"),
        before_filter,
        after_filter,
    };
    Ok(PipelineOutput {
        frames: filtered,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_sequence, NoiseLevels, SynthConfig};
    use nalgebra::Vector2;

    fn gt_records(frames: &[FrameResult]) -> Vec<EvalRecord> {
        frames
            .iter()
            .map(|f| EvalRecord::try_from(f).unwrap())
            .collect()
    }

    #[test]
    fn clean_sequence_is_self_consistent() {
        let model = HandModelParams::toy();
        let seq = synth_sequence(
            &model,
            &SynthConfig {
                n_frames: 30,
                ..Default::default()
            },
        )
        .unwrap();
        let gt = gt_records(&seq.ground_truth);
        let out = run_pipeline(
            &PipelineConfig::default(),
            &model,
            &seq.observed,
            None,
            Some(&gt),
        )
        .unwrap();
        assert!(out.report.gated.is_empty());
        assert!(out.report.confidence.min >= 0.999);
        let after = out.report.after_filter.unwrap();
        assert!(after.mpjpe < 1e-6 && after.epe < 1e-6 && after.pa_mpvpe.unwrap() < 1e-6);
        assert!(after.f_scores.iter().all(|&(_, f)| f == 100.0));
        assert_eq!(out.frames.len(), 30);
        assert!(out
            .frames
            .iter()
            .zip(&seq.observed)
            .all(|(a, b)| a.frame_index == b.frame_index));
    }

    #[test]
    fn outliers_are_gated_and_improve_epe() {
        let model = HandModelParams::toy();
        let cfg = SynthConfig {
            n_frames: 60,
            seed: 4,
            noise: NoiseLevels {
                joints2d_px: 0.5,
                pose_rad: 0.01,
                outlier_fraction: 0.1,
            },
            ..Default::default()
        };
        let seq = synth_sequence(&model, &cfg).unwrap();
        let gt = gt_records(&seq.ground_truth);
        let out = run_pipeline(
            &PipelineConfig::default(),
            &model,
            &seq.observed,
            None,
            Some(&gt),
        )
        .unwrap();
        assert_eq!(out.report.gated, seq.outliers);
        let before = out.report.before_filter.unwrap().epe;
        let after = out.report.after_filter.unwrap().epe;
        assert!(after < before, "{after} vs {before}");
        for f in &out.frames {
            let expected = seq.outliers.contains(&f.frame_index);
            assert_eq!(f.replaced_from.is_some(), expected);
        }
    }

    #[test]
    fn logits_path_matches_joint_path() {
        let model = HandModelParams::toy();
        let cfg = SynthConfig {
            n_frames: 4,
            with_logits: true,
            ..Default::default()
        };
        let seq = synth_sequence(&model, &cfg).unwrap();
        let pc = PipelineConfig::default();
        let a = run_pipeline(&pc, &model, &seq.observed, None, None).unwrap();
        let b = run_pipeline(&pc, &model, &seq.observed, seq.logits.as_ref(), None).unwrap();
        for (x, y) in a.frames.iter().zip(&b.frames) {
            for (p, q) in x.joints2d.0.iter().zip(&y.joints2d.0) {
                assert!((p - q).norm() < 1e-3);
            }
        }
        let mut wrong = seq.logits.clone().unwrap();
        wrong.dims[0] = 5;
        assert!(run_pipeline(&pc, &model, &seq.observed, Some(&wrong), None).is_err());
    }

    #[test]
    fn flipped_frame_outputs_live_in_the_original_frame() {
        let model = HandModelParams::toy();
        let seq = synth_sequence(
            &model,
            &SynthConfig {
                n_frames: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let mut frame = seq.observed[15].clone();
        frame.spec = frame.spec.mirrored();
        let a = analyze_frame(&model, &frame, FocalPolicy::Explicit).unwrap();
        let f = frame.spec.focal.unwrap();
        let o = frame.spec.frame_center();
        for (p, q) in a.joints3d.0.iter().zip(&a.joints2d_proj.0) {
            let u = Vector2::new(f * p.x / p.z, f * p.y / p.z) + o;
            assert!((u - q).norm() < 1e-9, "{u} {q}");
        }
        let plain = analyze_frame(&model, &seq.observed[15], FocalPolicy::Explicit).unwrap();
        // mirrored crop on the other side of the frame: the hand lands on that side
        assert!((a.joints2d_proj.0[0].x - o.x) * (plain.joints2d_proj.0[0].x - o.x) > 0.0);
        assert!(a.joints3d.0[0].x * plain.joints3d.0[0].x > 0.0);
    }

    #[test]
    fn explicit_focal_policy_requires_focal() {
        let model = HandModelParams::toy();
        let seq = synth_sequence(
            &model,
            &SynthConfig {
                n_frames: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let mut frames = seq.observed.clone();
        frames[2].spec.focal = None;
        let cfg = PipelineConfig {
            focal_policy: FocalPolicy::Explicit,
            ..Default::default()
        };
        let err = run_pipeline(&cfg, &model, &frames, None, None).unwrap_err();
        assert!(err.to_string().starts_with("frame 2:"), "{err}");
        let ok = run_pipeline(&PipelineConfig::default(), &model, &frames, None, None).unwrap();
        assert_eq!(ok.frames.len(), 3);
    }

    #[test]
    fn evaluate_reports_missing_ground_truth() {
        let model = HandModelParams::toy();
        let seq = synth_sequence(
            &model,
            &SynthConfig {
                n_frames: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let gt = gt_records(&seq.ground_truth);
        let err = evaluate(&gt, &gt[..2]).unwrap_err();
        assert!(err.to_string().starts_with("frame 2:"));
        let r = evaluate(&gt, &gt).unwrap();
        assert_eq!(r.frames, 3);
        assert!(r.pck.points.iter().skip(1).all(|&(_, v)| v == 1.0));
    }
}
