//! Sub-pixel coordinate classification. Each axis of each joint is a
//! categorical distribution over `s_p · s` bins; bin `i` stands for the
//! coordinate `i / s` pixels.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::binio::DenseArray;
use crate::error::{Error, Result};
use crate::geometry::Joints2D;
use crate::hand_model::NUM_KEYPOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Network input size `s_p` in pixels.
    pub net_size: usize,
    /// Bins per pixel `s`.
    pub scale: usize,
    /// Label smoothing standard deviation, in bins.
    pub sigma_bins: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            net_size: 224,
            scale: 3,
            sigma_bins: 6.0,
        }
    }
}

impl CodecConfig {
    pub fn n_bins(&self) -> usize {
        self.net_size * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 1 || self.net_size < 1 {
            return Err(Error::invalid(
                "codec scale and net_size must be at least 1",
            ));
        }
        if !(self.sigma_bins > 0.0 && self.sigma_bins.is_finite()) {
            return Err(Error::invalid("sigma_bins must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X = 0,
    Y = 1,
}

/// Per-joint, per-axis vectors over bins, stored `[joint][axis][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    n_joints: usize,
    n_bins: usize,
    data: Vec<f64>,
}

impl BinGrid {
    pub fn new(n_joints: usize, n_bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_joints * 2 * n_bins {
            return Err(Error::ShapeMismatch {
                expected: n_joints * 2 * n_bins,
                got: data.len(),
            });
        }
        Ok(Self {
            n_joints,
            n_bins,
            data,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn axis(&self, joint: usize, axis: Axis) -> &[f64] {
        let start = (joint * 2 + axis as usize) * self.n_bins;
        &self.data[start..start + self.n_bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_bins)
    }

    pub fn to_array(&self) -> DenseArray {
        DenseArray::new(vec![self.n_joints, 2, self.n_bins], self.data.clone())
            .expect("consistent dims")
    }

    pub fn from_array(array: DenseArray) -> Result<Self> {
        match array.dims.as_slice() {
            &[n_joints, 2, n_bins] => Self::new(n_joints, n_bins, array.data),
            dims => Err(Error::malformed(
                "dense array",
                format!("expected dims [joints, 2, bins], got {dims:?}"),
            )),
        }
    }
}

/// Smoothed classification targets; every row is a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordTargets(pub BinGrid);

/// Unnormalized classifier scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordLogits(pub BinGrid);

impl CoordTargets {
    /// Natural log of every probability, floored at the smallest normal f64
    /// so the result is finite.
    pub fn to_logits(&self) -> CoordLogits {
        let g = &self.0;
        CoordLogits(BinGrid {
            n_joints: g.n_joints,
            n_bins: g.n_bins,
            data: g
                .data
                .iter()
                .map(|t| t.max(f64::MIN_POSITIVE).ln())
                .collect(),
        })
    }
}

impl CoordLogits {
    pub fn validate(&self) -> Result<()> {
        if self.0.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("logits".into()))
        }
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| v - lse).collect()
}

/// Gaussian label over the bins centered at `coord · s`, truncated to the
/// bin range and renormalized.
pub fn gaussian_label(coord: f64, cfg: &CodecConfig) -> Vec<f64> {
    let mu = coord * cfg.scale as f64;
    let denom = 2.0 * cfg.sigma_bins * cfg.sigma_bins;
    let log_w: Vec<f64> = (0..cfg.n_bins())
        .map(|i| {
            let d = i as f64 - mu;
            -d * d / denom
        })
        .collect();
    // log domain keeps the sigma → 0 limit well defined
    softmax(&log_w)
}

pub fn encode_labels(gt: &Joints2D, cfg: &CodecConfig) -> Result<CoordTargets> {
    cfg.validate()?;
    if !gt.is_finite() {
        return Err(Error::NonFinite("joint coordinates".into()));
    }
    let mut data = Vec::with_capacity(NUM_KEYPOINTS * 2 * cfg.n_bins());
    for p in gt.points() {
        data.extend(gaussian_label(p.x, cfg));
        data.extend(gaussian_label(p.y, cfg));
    }
    Ok(CoordTargets(BinGrid::new(
        NUM_KEYPOINTS,
        cfg.n_bins(),
        data,
    )?))
}

/// One-hot targets at the nearest bin, clamped to the bin range.
pub fn encode_one_hot(gt: &Joints2D, cfg: &CodecConfig) -> Result<CoordTargets> {
    cfg.validate()?;
    let n = cfg.n_bins();
    let mut data = vec![0.0; NUM_KEYPOINTS * 2 * n];
    for (j, p) in gt.points().iter().enumerate() {
        for (a, c) in [p.x, p.y].into_iter().enumerate() {
            let bin = (c * cfg.scale as f64).round().clamp(0.0, (n - 1) as f64) as usize;
            data[(j * 2 + a) * n + bin] = 1.0;
        }
    }
    Ok(CoordTargets(BinGrid::new(NUM_KEYPOINTS, n, data)?))
}

fn check_logits(logits: &CoordLogits, cfg: &CodecConfig) -> Result<()> {
    cfg.validate()?;
    logits.validate()?;
    if logits.0.n_bins != cfg.n_bins() {
        return Err(Error::ShapeMismatch {
            expected: cfg.n_bins(),
            got: logits.0.n_bins,
        });
    }
    if logits.0.n_joints != NUM_KEYPOINTS {
        return Err(Error::ShapeMismatch {
            expected: NUM_KEYPOINTS,
            got: logits.0.n_joints,
        });
    }
    Ok(())
}

fn soft_argmax(row: &[f64]) -> f64 {
    softmax(row)
        .iter()
        .enumerate()
        .map(|(i, p)| i as f64 * p)
        .sum()
}

fn hard_argmax(row: &[f64]) -> f64 {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0 as f64
}

fn decode_with(
    logits: &CoordLogits,
    cfg: &CodecConfig,
    argmax: impl Fn(&[f64]) -> f64,
) -> Result<Joints2D> {
    check_logits(logits, cfg)?;
    let s = cfg.scale as f64;
    let mut out = Joints2D::default();
    for (j, p) in out.0.iter_mut().enumerate() {
        *p = Vector2::new(
            argmax(logits.0.axis(j, Axis::X)) / s,
            argmax(logits.0.axis(j, Axis::Y)) / s,
        );
    }
    Ok(out)
}

/// `(1/s) · Σ_i i · softmax(f)_i` per axis.
pub fn decode_soft_argmax(logits: &CoordLogits, cfg: &CodecConfig) -> Result<Joints2D> {
    decode_with(logits, cfg, soft_argmax)
}

pub fn decode_hard_argmax(logits: &CoordLogits, cfg: &CodecConfig) -> Result<Joints2D> {
    decode_with(logits, cfg, hard_argmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn all_at(c: f64) -> Joints2D {
        Joints2D([Vector2::new(c, c); NUM_KEYPOINTS])
    }

    /// Mean of a distribution by plain summation, divided by the scale.
    fn mean_px(row: &[f64], scale: f64) -> f64 {
        let mut m = 0.0;
        let mut z = 0.0;
        for (i, w) in row.iter().enumerate() {
            m += i as f64 * w;
            z += w;
        }
        m / z / scale
    }

    #[test]
    fn default_bin_count() {
        assert_eq!(CodecConfig::default().n_bins(), 672);
    }

    #[test]
    fn interior_label_is_symmetric_around_its_bin() {
        let cfg = CodecConfig::default();
        let t = encode_labels(&all_at(100.0), &cfg).unwrap();
        let row = t.0.axis(0, Axis::X);
        let peak = hard_argmax(row) as usize;
        assert_eq!(peak, 300);
        for k in 1..60 {
            assert_relative_eq!(row[300 - k], row[300 + k], epsilon = 1e-15);
        }
        assert_relative_eq!(mean_px(row, 3.0), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn boundary_label_is_half_gaussian() {
        let cfg = CodecConfig::default();
        let t = encode_labels(&all_at(0.0), &cfg).unwrap();
        let row = t.0.axis(3, Axis::Y);
        assert_eq!(hard_argmax(row), 0.0);
        assert!(row.windows(2).take(40).all(|w| w[0] > w[1]));
        assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_sigma_is_one_hot_at_nearest_bin() {
        let cfg = CodecConfig {
            sigma_bins: 1e-6,
            ..CodecConfig::default()
        };
        let t = encode_labels(&all_at(100.1), &cfg).unwrap();
        let row = t.0.axis(0, Axis::X);
        assert_eq!(row[300], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn spike_decodes_to_its_bin() {
        let cfg = CodecConfig::default();
        let mut data = vec![0.0; NUM_KEYPOINTS * 2 * 672];
        for r in 0..NUM_KEYPOINTS * 2 {
            data[r * 672 + 300] = 60.0;
        }
        let logits = CoordLogits(BinGrid::new(NUM_KEYPOINTS, 672, data).unwrap());
        let j = decode_soft_argmax(&logits, &cfg).unwrap();
        assert_relative_eq!(j.0[5].x, 100.0, epsilon = 1e-6);
        assert_relative_eq!(j.0[5].y, 100.0, epsilon = 1e-6);
    }

    #[test]
    fn uniform_logits_decode_to_middle() {
        let cfg = CodecConfig::default();
        let logits = CoordLogits(
            BinGrid::new(NUM_KEYPOINTS, 672, vec![0.25; NUM_KEYPOINTS * 2 * 672]).unwrap(),
        );
        let j = decode_soft_argmax(&logits, &cfg).unwrap();
        assert_relative_eq!(j.0[0].x, 671.0 / 2.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(j.0[0].x, 111.8333, epsilon = 1e-4);
    }

    #[test]
    fn round_trip_interior() {
        let cfg = CodecConfig::default();
        for c in [8.0, 37.3, 100.0, 150.77, 216.0] {
            let t = encode_labels(&all_at(c), &cfg).unwrap();
            let j = decode_soft_argmax(&t.to_logits(), &cfg).unwrap();
            assert!((j.0[0].x - c).abs() < 1e-3, "c={c} got {}", j.0[0].x);
        }
    }

    #[test]
    fn boundary_bias_is_bounded_by_sigma() {
        let cfg = CodecConfig::default();
        let bound = cfg.sigma_bins / cfg.scale as f64;
        for c in [0.0, 1.0, 3.0, 221.0, 223.5] {
            let t = encode_labels(&all_at(c), &cfg).unwrap();
            let j = decode_soft_argmax(&t.to_logits(), &cfg).unwrap();
            assert!((j.0[0].x - c).abs() <= bound, "c={c} got {}", j.0[0].x);
        }
    }

    #[test]
    fn hard_argmax_quantization_bound() {
        let cfg = CodecConfig::default();
        let bound = 1.0 / (2.0 * cfg.scale as f64);
        let mut worst: f64 = 0.0;
        for k in 0..=22300 {
            let c = k as f64 * 0.01;
            let t = encode_one_hot(&all_at(c), &cfg).unwrap();
            let j = decode_hard_argmax(&t.to_logits(), &cfg).unwrap();
            worst = worst.max((j.0[0].x - c).abs());
        }
        assert!(worst <= bound + 1e-12, "worst {worst}");
    }

    #[test]
    fn wrong_bin_count_is_rejected() {
        let cfg = CodecConfig::default();
        let logits =
            CoordLogits(BinGrid::new(NUM_KEYPOINTS, 10, vec![0.0; NUM_KEYPOINTS * 20]).unwrap());
        assert!(decode_soft_argmax(&logits, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn targets_are_distributions(c in -50.0f64..300.0, sigma in 0.5f64..20.0) {
            let cfg = CodecConfig { sigma_bins: sigma, ..CodecConfig::default() };
            let t = encode_labels(&all_at(c), &cfg).unwrap();
            for row in t.0.rows() {
                prop_assert!(row.iter().all(|&w| w >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn decode_is_shift_invariant(c in 10.0f64..200.0, shift in -50.0f64..50.0) {
            let cfg = CodecConfig::default();
            let logits = encode_labels(&all_at(c), &cfg).unwrap().to_logits();
            let mut shifted = logits.clone();
            for (i, v) in shifted.0.data.iter_mut().enumerate() {
                // shift only the x axis of every joint
                if (i / 672) % 2 == 0 {
                    *v += shift;
                }
            }
            let a = decode_soft_argmax(&logits, &cfg).unwrap();
            let b = decode_soft_argmax(&shifted, &cfg).unwrap();
            for (p, q) in a.0.iter().zip(&b.0) {
                prop_assert!((p - q).norm() < 1e-9);
            }
        }
    }
}
