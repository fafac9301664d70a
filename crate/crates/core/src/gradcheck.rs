//! Random-instance comparison of analytic loss gradients with central
//! finite differences.

use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_labels, BinGrid, CodecConfig, CoordLogits};
use crate::confidence::{cosine_gradient, cosine_similarity, JOINT_VEC_LEN};
use crate::error::{Error, Result};
use crate::geometry::Joints2D;
use crate::hand_model::{Joints3D, CANONICAL_PARENTS, NUM_KEYPOINTS};
use crate::losses::{
    bone_gradient, bone_loss, finite_diff_gradient, kl_divergence, kl_gradient, l1_gradient,
    l1_loss, l2_gradient, l2_loss, relative_deviation,
};

pub const FD_STEP: f64 = 1e-6;
/// Smallest distance kept from the kinks of absolute-value losses.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradLoss {
    Kl,
    L1,
    L2,
    Bone,
    Cosine,
}

impl FromStr for GradLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(GradLoss::Kl),
            "l1" => Ok(GradLoss::L1),
            "l2" => Ok(GradLoss::L2),
            "bone" => Ok(GradLoss::Bone),
            "cosine" => Ok(GradLoss::Cosine),
            other => Err(Error::invalid(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: GradLoss,
    pub seed: u64,
    pub instances: usize,
    pub max_relative_deviation: f64,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Draws `gt` until every residual stays clear of zero.
fn away_from_kinks(rng: &mut ChaCha8Rng, pred: &[f64]) -> Vec<f64> {
    loop {
        let gt = uniform(rng, pred.len(), -1.0, 1.0);
        if pred
            .iter()
            .zip(&gt)
            .all(|(p, g)| (p - g).abs() > KINK_MARGIN)
        {
            return gt;
        }
    }
}

fn joints(values: &[f64]) -> Joints3D {
    let mut j = Joints3D::default();
    for (p, c) in j.0.iter_mut().zip(values.chunks(3)) {
        *p = Vector3::new(c[0], c[1], c[2]);
    }
    j
}

fn bones(values: &[f64]) -> Vec<f64> {
    let j = joints(values);
    crate::hand_model::bone_vectors(j.points(), &CANONICAL_PARENTS)
        .expect("canonical tree")
        .iter()
        .flat_map(|b| [b.x, b.y, b.z])
        .collect()
}

fn kl_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = CodecConfig {
        net_size: 8,
        scale: 3,
        sigma_bins: 2.0,
    };
    let mut gt = Joints2D::default();
    for p in gt.0.iter_mut() {
        p.x = rng.random_range(0.0..8.0);
        p.y = rng.random_range(0.0..8.0);
    }
    let target = encode_labels(&gt, &cfg)?;
    let n_bins = cfg.n_bins();
    let x = uniform(rng, NUM_KEYPOINTS * 2 * n_bins, -3.0, 3.0);
    let as_logits = |v: &[f64]| BinGrid::new(NUM_KEYPOINTS, n_bins, v.to_vec()).map(CoordLogits);
    let analytic = kl_gradient(&target, &as_logits(&x)?)?;
    let numeric = finite_diff_gradient(|v| kl_divergence(&target, &as_logits(v)?), &x, FD_STEP)?;
    Ok(relative_deviation(&analytic, &numeric))
}

/// Relative deviation between analytic and numeric gradients on one random
/// instance.
pub fn instance_deviation(loss: GradLoss, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (analytic, numeric) = match loss {
        GradLoss::Kl => return kl_instance(rng),
        GradLoss::L1 => {
            let x = uniform(rng, JOINT_VEC_LEN, -1.0, 1.0);
            let gt = away_from_kinks(rng, &x);
            (
                l1_gradient(&x, &gt)?,
                finite_diff_gradient(|v| l1_loss(v, &gt), &x, FD_STEP)?,
            )
        }
        GradLoss::L2 => {
            let x = uniform(rng, JOINT_VEC_LEN, -1.0, 1.0);
            let gt = uniform(rng, JOINT_VEC_LEN, -1.0, 1.0);
            (
                l2_gradient(&x, &gt)?,
                finite_diff_gradient(|v| l2_loss(v, &gt), &x, FD_STEP)?,
            )
        }
        GradLoss::Bone => {
            let x = uniform(rng, NUM_KEYPOINTS * 3, -0.1, 0.1);
            let gt = loop {
                let gt = uniform(rng, NUM_KEYPOINTS * 3, -0.1, 0.1);
                let (bx, bg) = (bones(&x), bones(&gt));
                if bx
                    .iter()
                    .zip(&bg)
                    .all(|(p, g)| (p - g).abs() > KINK_MARGIN * 0.1)
                {
                    break gt;
                }
            };
            let g = joints(&gt);
            (
                bone_gradient(&joints(&x), &g, &CANONICAL_PARENTS)?,
                finite_diff_gradient(
                    |v| bone_loss(&joints(v), &g, &CANONICAL_PARENTS),
                    &x,
                    FD_STEP,
                )?,
            )
        }
        GradLoss::Cosine => {
            let x = uniform(rng, JOINT_VEC_LEN, -1.0, 1.0);
            let b = uniform(rng, JOINT_VEC_LEN, -1.0, 1.0);
            (
                cosine_gradient(&x, &b)?,
                finite_diff_gradient(|v| cosine_similarity(v, &b), &x, FD_STEP)?,
            )
        }
    };
    Ok(relative_deviation(&analytic, &numeric))
}

pub fn gradcheck(loss: GradLoss, seed: u64, instances: usize) -> Result<GradcheckReport> {
    if instances == 0 {
        return Err(Error::invalid("at least one instance is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        worst = worst.max(instance_deviation(loss, &mut rng)?);
    }
    Ok(GradcheckReport {
        loss,
        seed,
        instances,
        max_relative_deviation: worst,
    })
}
