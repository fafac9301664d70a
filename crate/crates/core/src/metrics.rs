//! Evaluation metrics. 3D inputs are in meters and errors are reported in
//! millimeters; 2D inputs and errors are in pixels.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const M_TO_MM: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
    pub aligned: Vec<Vector3<f64>>,
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Similarity transform `s·R·p + t` minimizing the squared distance to
/// `gt`, with reflections excluded (`det R = +1`).
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<AlignmentResult> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.len() < 3 {
        return Err(Error::DegeneratePointSet("need at least 3 points".into()));
    }
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (dp, dg) = (p - mu_p, g - mu_g);
        cov += dg * dp.transpose();
        var_p += dp.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let sv = svd.singular_values;
    let largest = sv.max();
    if !(largest > 0.0) || var_p <= 0.0 {
        return Err(Error::DegeneratePointSet(
            "point set has zero spread".into(),
        ));
    }
    // rank < 2 leaves the rotation undetermined
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::DegeneratePointSet("points are colinear".into()));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // flip the direction of the smallest singular value
        let smallest = (0..3)
            .min_by(|&a, &b| sv[a].total_cmp(&sv[b]))
            .expect("three values");
        d[(smallest, smallest)] = -1.0;
    }
    let rotation = u * d * v_t;
    let trace: f64 = (0..3).map(|i| sv[i] * d[(i, i)]).sum();
    let scale = trace / var_p;
    let translation = mu_g - rotation * mu_p * scale;
    let aligned = pred
        .iter()
        .map(|p| rotation * p * scale + translation)
        .collect();
    Ok(AlignmentResult {
        rotation,
        scale,
        translation,
        aligned,
    })
}

/// Mean Euclidean distance between corresponding points, in input units.
pub fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("point set"));
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointErrors {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

/// Raw and Procrustes-aligned mean per-point error, meters in, mm out.
pub fn joint_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<JointErrors> {
    let mpjpe = mean_distance(pred, gt)? * M_TO_MM;
    let aligned = procrustes_align(pred, gt)?;
    let pa_mpjpe = mean_distance(&aligned.aligned, gt)? * M_TO_MM;
    Ok(JointErrors { mpjpe, pa_mpjpe })
}

/// Mean 2D endpoint error in pixels.
pub fn epe_2d(pred: &[Vector2<f64>], gt: &[Vector2<f64>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("joint set"));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, q)| (p - q).norm())
        .sum::<f64>()
        / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Points with the same index correspond.
    Index,
    /// Each point is matched to its nearest neighbor in the other set.
    NearestNeighbor,
}

fn within_fraction(
    from: &[Vector3<f64>],
    to: &[Vector3<f64>],
    threshold: f64,
    matching: Matching,
) -> f64 {
    let hits = from
        .iter()
        .enumerate()
        .filter(|(i, p)| match matching {
            Matching::Index => (*p - to[*i]).norm() <= threshold,
            Matching::NearestNeighbor => to.iter().any(|q| (*p - q).norm() <= threshold),
        })
        .count();
    hits as f64 / from.len() as f64
}

/// F-score in percent at a threshold given in millimeters.
pub fn f_score(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    threshold_mm: f64,
    matching: Matching,
) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("vertex set"));
    }
    if matching == Matching::Index && pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let t = threshold_mm / M_TO_MM;
    let precision = within_fraction(pred, gt, t, matching);
    let recall = within_fraction(gt, pred, t, matching);
    Ok(harmonic_percent(precision, recall))
}

pub fn harmonic_percent(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        200.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckCurve {
    /// `(threshold_mm, fraction)` pairs.
    pub points: Vec<(f64, f64)>,
}

impl PckCurve {
    /// Area under the curve normalized by the threshold span (trapezoids).
    pub fn auc(&self) -> f64 {
        let pts = &self.points;
        if pts.len() < 2 {
            return pts.first().map_or(0.0, |p| p.1);
        }
        let span = pts[pts.len() - 1].0 - pts[0].0;
        let area: f64 = pts
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum();
        area / span
    }
}

/// PCK from per-joint errors already in millimeters.
pub fn pck_from_errors(errors_mm: &[f64], thresholds_mm: &[f64]) -> Result<PckCurve> {
    if errors_mm.is_empty() || thresholds_mm.is_empty() {
        return Err(Error::Empty("PCK input"));
    }
    let n = errors_mm.len() as f64;
    Ok(PckCurve {
        points: thresholds_mm
            .iter()
            .map(|&t| (t, errors_mm.iter().filter(|&&e| e <= t).count() as f64 / n))
            .collect(),
    })
}

/// Fraction of joints within each threshold (mm) over matched joint sets.
pub fn pck_curve(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    thresholds_mm: &[f64],
) -> Result<PckCurve> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let mut errors = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch {
                expected: g.len(),
                got: p.len(),
            });
        }
        errors.extend(p.iter().zip(g).map(|(a, b)| (a - b).norm() * M_TO_MM));
    }
    pck_from_errors(&errors, thresholds_mm)
}

/// Evenly spaced thresholds `0, step, …, max` in millimeters.
pub fn threshold_grid(max_mm: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| max_mm * k as f64 / steps as f64)
        .collect()
}
