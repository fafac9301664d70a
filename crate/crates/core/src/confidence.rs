//! Pose confidence from the agreement of detected 2D joints with the
//! reprojected model joints, and the contrastive objective that trains it.

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Joints2D, PatchSpec};
use crate::hand_model::NUM_KEYPOINTS;

pub const JOINT_VEC_LEN: usize = NUM_KEYPOINTS * 2;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const DEGENERATE_NORM: f64 = 1e-12;

/// 42 values, x and y interleaved per joint in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedJointVec(pub Vec<f64>);

impl NormalizedJointVec {
    fn from_points(points: impl Iterator<Item = Vector2<f64>>) -> Self {
        Self(points.flat_map(|p| [p.x, p.y]).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `(J · s_i/s_p − (s_i/2, s_i/2)) / s_i` for patch-space joints.
pub fn normalize_pred(j2d: &Joints2D, spec: &PatchSpec) -> NormalizedJointVec {
    let s_i = spec.patch_size;
    let half = Vector2::repeat(s_i / 2.0);
    NormalizedJointVec::from_points(
        j2d.points()
            .iter()
            .map(|p| (p * spec.patch_scale() - half) / s_i),
    )
}

/// `(J_proj − C) / s_i` for frame-space joints, `C` the patch center.
pub fn normalize_proj(j2d_proj: &Joints2D, spec: &PatchSpec) -> NormalizedJointVec {
    let c = spec.patch_center();
    NormalizedJointVec::from_points(j2d_proj.points().iter().map(|p| (p - c) / spec.patch_size))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let va = DVector::from_column_slice(a);
    let vb = DVector::from_column_slice(b);
    let (na, nb) = (va.norm(), vb.norm());
    if !(na.is_finite() && nb.is_finite()) {
        return Err(Error::NonFinite("joint vector".into()));
    }
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Err(Error::DegenerateVector);
    }
    Ok((va.dot(&vb), na, nb))
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let (dot, na, nb) = check_pair(a, b)?;
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_confidence(a: &NormalizedJointVec, b: &NormalizedJointVec) -> Result<f64> {
    cosine_similarity(&a.0, &b.0)
}

/// Analytic gradient of the cosine similarity with respect to `a`.
pub fn cosine_gradient(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let (dot, na, nb) = check_pair(a, b)?;
    let inv = 1.0 / (na * nb);
    let k = dot / (na * na * na * nb);
    Ok(a.iter().zip(b).map(|(x, y)| y * inv - x * k).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub pred: NormalizedJointVec,
    pub proj: NormalizedJointVec,
    pub label: PairLabel,
}

/// Mean of `(cos − target)²`, target `+1` for positive pairs and
/// `negative_target` for negative ones.
pub fn contrastive_loss(pairs: &[ContrastivePair], negative_target: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("contrastive pair set"));
    }
    let mut total = 0.0;
    for pair in pairs {
        let cos = cosine_confidence(&pair.pred, &pair.proj)?;
        let target = match pair.label {
            PairLabel::Positive => 1.0,
            PairLabel::Negative => negative_target,
        };
        total += (cos - target).powi(2);
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxRegion {
    fn intersection(&self, other: &BoxRegion) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        ix.max(0.0) * iy.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeSampling {
    /// Patch side range as fractions of the shorter frame side.
    pub min_size_frac: f64,
    pub max_size_frac: f64,
    /// Largest accepted intersection area over patch area with any hand box.
    pub max_overlap: f64,
    pub attempts_per_patch: usize,
}

impl Default for NegativeSampling {
    fn default() -> Self {
        Self {
            min_size_frac: 0.15,
            max_size_frac: 0.4,
            max_overlap: 0.05,
            attempts_per_patch: 1000,
        }
    }
}

/// Seeded rejection sampling of in-frame square patches that avoid every
/// hand box.
pub fn sample_negative_patches(
    frame_w: f64,
    frame_h: f64,
    hand_boxes: &[BoxRegion],
    count: usize,
    seed: u64,
    opts: &NegativeSampling,
) -> Result<Vec<PatchSpec>> {
    let short = frame_w.min(frame_h);
    if !(short > 0.0) {
        return Err(Error::invalid("frame dimensions must be positive"));
    }
    let min_size = (opts.min_size_frac * short).max(1.0);
    let max_size = (opts.max_size_frac * short).clamp(min_size, short);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let budget = opts.attempts_per_patch.saturating_mul(count.max(1));
    let mut attempts = 0;
    while out.len() < count {
        if attempts >= budget {
            return Err(Error::SamplingExhausted {
                requested: count,
                placed: out.len(),
            });
        }
        attempts += 1;
        let size = if max_size > min_size {
            rng.random_range(min_size..max_size)
        } else {
            min_size
        };
        let x = rng.random_range(0.0..=(frame_w - size));
        let y = rng.random_range(0.0..=(frame_h - size));
        let candidate = BoxRegion {
            x,
            y,
            w: size,
            h: size,
        };
        let area = size * size;
        if hand_boxes
            .iter()
            .all(|b| candidate.intersection(b) / area < opts.max_overlap)
        {
            out.push(PatchSpec::new(frame_w, frame_h, Vector2::new(x, y), size));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(size: f64) -> PatchSpec {
        PatchSpec::new(640.0, 480.0, Vector2::new(100.0, 50.0), size)
    }

    #[test]
    fn pred_normalization_examples() {
        let centered = Joints2D([Vector2::new(112.0, 112.0); NUM_KEYPOINTS]);
        let v = normalize_pred(&centered, &spec(200.0));
        assert!(v.0.iter().all(|x| x.abs() < 1e-15));
        assert_eq!(v.0.len(), JOINT_VEC_LEN);

        let mut j = centered;
        j.0[0] = Vector2::zeros();
        let v = normalize_pred(&j, &spec(200.0));
        assert_eq!(&v.0[..2], &[-0.5, -0.5]);

        j.0[0] = Vector2::new(224.0, 224.0);
        let v = normalize_pred(&j, &spec(224.0));
        assert_eq!(&v.0[..2], &[0.5, 0.5]);
    }

    #[test]
    fn proj_normalization_examples() {
        let s = spec(200.0);
        let c = s.patch_center();
        let v = normalize_proj(&Joints2D([c; NUM_KEYPOINTS]), &s);
        assert!(v.0.iter().all(|&x| x == 0.0));
        let mut j = Joints2D([c; NUM_KEYPOINTS]);
        j.0[2] = c + Vector2::new(200.0, 0.0);
        let v = normalize_proj(&j, &s);
        assert_eq!(&v.0[4..6], &[1.0, 0.0]);
    }

    #[test]
    fn proj_normalization_is_translation_invariant() {
        let s = spec(150.0);
        let j = Joints2D(std::array::from_fn(|k| {
            Vector2::new(k as f64 * 3.0 + 120.0, 90.0 - k as f64)
        }));
        let mut moved = s;
        moved.upper_left += Vector2::new(33.0, -7.0);
        let jm = j.map(|p| p + Vector2::new(33.0, -7.0));
        let a = normalize_proj(&j, &s);
        let b = normalize_proj(&jm, &moved);
        for (x, y) in a.0.iter().zip(&b.0) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn pred_and_proj_coincide_when_patch_fills_frame_scale() {
        // s_i = s_p: both reduce to centering and scaling by s_p
        let s = PatchSpec::new(224.0, 224.0, Vector2::zeros(), 224.0);
        let j = Joints2D(std::array::from_fn(|k| {
            Vector2::new(k as f64 * 7.0, 200.0 - k as f64 * 5.0)
        }));
        let a = normalize_pred(&j, &s);
        let b = normalize_proj(&j, &s);
        for (x, y) in a.0.iter().zip(&b.0) {
            assert_relative_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn cosine_examples_and_degenerate() {
        let a: Vec<f64> = (0..42).map(|k| (k as f64 * 0.37).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let dbl: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        assert_relative_eq!(cosine_similarity(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(cosine_similarity(&a, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_relative_eq!(cosine_similarity(&a, &dbl).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            cosine_similarity(&a, &[0.0; 42]),
            Err(Error::DegenerateVector)
        ));
        assert!(cosine_similarity(&a, &[1.0; 3]).is_err());
    }

    #[test]
    fn contrastive_loss_examples() {
        let a = NormalizedJointVec(vec![1.0, 0.0]);
        let b = NormalizedJointVec(vec![0.0, 1.0]);
        let neg = NormalizedJointVec(vec![-1.0, 0.0]);
        let pos_perfect = ContrastivePair {
            pred: a.clone(),
            proj: a.clone(),
            label: PairLabel::Positive,
        };
        let neg_perfect = ContrastivePair {
            pred: a.clone(),
            proj: neg,
            label: PairLabel::Negative,
        };
        let pos_ortho = ContrastivePair {
            pred: a,
            proj: b,
            label: PairLabel::Positive,
        };
        assert_eq!(
            contrastive_loss(std::slice::from_ref(&pos_perfect), -1.0).unwrap(),
            0.0
        );
        assert_eq!(
            contrastive_loss(std::slice::from_ref(&neg_perfect), -1.0).unwrap(),
            0.0
        );
        assert_eq!(
            contrastive_loss(std::slice::from_ref(&pos_ortho), -1.0).unwrap(),
            1.0
        );
        assert_eq!(
            contrastive_loss(&[pos_perfect, neg_perfect, pos_ortho], -1.0).unwrap(),
            1.0 / 3.0
        );
        assert!(contrastive_loss(&[], -1.0).is_err());
    }

    #[test]
    fn negative_sampling_contract() {
        let opts = NegativeSampling::default();
        let free = sample_negative_patches(640.0, 480.0, &[], 20, 7, &opts).unwrap();
        assert_eq!(free.len(), 20);
        for p in &free {
            assert!(p.upper_left.x >= 0.0 && p.upper_left.y >= 0.0);
            assert!(p.upper_left.x + p.patch_size <= 640.0);
            assert!(p.upper_left.y + p.patch_size <= 480.0);
        }
        let again = sample_negative_patches(640.0, 480.0, &[], 20, 7, &opts).unwrap();
        assert_eq!(free, again);

        let everything = BoxRegion {
            x: 0.0,
            y: 0.0,
            w: 640.0,
            h: 480.0,
        };
        assert!(matches!(
            sample_negative_patches(640.0, 480.0, &[everything], 3, 7, &opts),
            Err(Error::SamplingExhausted { .. })
        ));

        let hand = BoxRegion {
            x: 200.0,
            y: 150.0,
            w: 150.0,
            h: 150.0,
        };
        let avoid = sample_negative_patches(640.0, 480.0, &[hand], 30, 11, &opts).unwrap();
        for p in avoid {
            let b = BoxRegion {
                x: p.upper_left.x,
                y: p.upper_left.y,
                w: p.patch_size,
                h: p.patch_size,
            };
            assert!(b.intersection(&hand) / (p.patch_size * p.patch_size) < 0.05);
        }
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_bounded_and_scale_free(
            a in prop::collection::vec(-1.0f64..1.0, 42),
            b in prop::collection::vec(-1.0f64..1.0, 42),
            la in 0.01f64..100.0, lb in 0.01f64..100.0,
        ) {
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert!((-1.0..=1.0).contains(&ab));
            let sa: Vec<f64> = a.iter().map(|x| x * la).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * lb).collect();
            prop_assert!((cosine_similarity(&sa, &sb).unwrap() - ab).abs() < 1e-12);
        }

        #[test]
        fn contrastive_loss_is_nonnegative(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 4),
            positive in any::<bool>(),
        ) {
            let pair = ContrastivePair {
                pred: NormalizedJointVec(a),
                proj: NormalizedJointVec(b),
                label: if positive { PairLabel::Positive } else { PairLabel::Negative },
            };
            if let Ok(l) = contrastive_loss(&[pair], -1.0) {
                prop_assert!(l >= 0.0);
            }
        }
    }
}
