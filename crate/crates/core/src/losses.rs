//! Training losses and their analytic gradients. Every loss is a mean over
//! elements so values do not depend on batch size.

use serde::{Deserialize, Serialize};

use crate::codec::{log_softmax, softmax, CoordLogits, CoordTargets};
use crate::error::{Error, Result};
use crate::hand_model::{bone_vectors, Joints3D};

fn check_len(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss input"));
    }
    Ok(())
}

pub fn l1_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Subgradient with respect to `pred`; zero at the kink.
pub fn l1_gradient(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    check_len(pred, gt)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect())
}

pub fn l2_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - g).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn l2_gradient(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    check_len(pred, gt)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| 2.0 * (p - g) / n)
        .collect())
}

fn check_kl(target: &CoordTargets, logits: &CoordLogits) -> Result<()> {
    let (t, f) = (&target.0, &logits.0);
    if t.n_bins() != f.n_bins() || t.n_joints() != f.n_joints() {
        return Err(Error::ShapeMismatch {
            expected: t.data().len(),
            got: f.data().len(),
        });
    }
    for row in t.rows() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "KL target row is not a distribution (sum {sum})"
            )));
        }
    }
    logits.validate()
}

/// `KL(target ‖ softmax(logits))`, averaged over joints and axes.
pub fn kl_divergence(target: &CoordTargets, logits: &CoordLogits) -> Result<f64> {
    check_kl(target, logits)?;
    let rows = target.0.rows().zip(logits.0.rows());
    let mut total = 0.0;
    let mut count = 0;
    for (t, f) in rows {
        let log_q = log_softmax(f);
        total += t
            .iter()
            .zip(&log_q)
            .filter(|(&ti, _)| ti > 0.0)
            .map(|(ti, lq)| ti * (ti.ln() - lq))
            .sum::<f64>();
        count += 1;
    }
    Ok(total / count as f64)
}

/// Gradient with respect to the logits: `(softmax(f) − t) / rows`, laid out
/// like the logits.
pub fn kl_gradient(target: &CoordTargets, logits: &CoordLogits) -> Result<Vec<f64>> {
    check_kl(target, logits)?;
    let n_rows = (target.0.n_joints() * 2) as f64;
    let mut grad = Vec::with_capacity(logits.0.data().len());
    for (t, f) in target.0.rows().zip(logits.0.rows()) {
        grad.extend(softmax(f).iter().zip(t).map(|(q, ti)| (q - ti) / n_rows));
    }
    Ok(grad)
}

fn flatten(v: &[nalgebra::Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Mean absolute deviation between predicted and ground-truth bone vectors.
pub fn bone_loss(pred: &Joints3D, gt: &Joints3D, parents: &[Option<usize>]) -> Result<f64> {
    let bp = bone_vectors(pred.points(), parents)?;
    let bg = bone_vectors(gt.points(), parents)?;
    l1_loss(&flatten(&bp), &flatten(&bg))
}

/// Gradient of [`bone_loss`] with respect to the predicted joints, flattened
/// `[j0.x, j0.y, j0.z, j1.x, …]`.
pub fn bone_gradient(
    pred: &Joints3D,
    gt: &Joints3D,
    parents: &[Option<usize>],
) -> Result<Vec<f64>> {
    let bp = flatten(&bone_vectors(pred.points(), parents)?);
    let bg = flatten(&bone_vectors(gt.points(), parents)?);
    let g_bones = l1_gradient(&bp, &bg)?;
    let mut grad = vec![0.0; pred.points().len() * 3];
    let mut bone = 0;
    for (child, parent) in parents.iter().enumerate() {
        if let Some(p) = *parent {
            for c in 0..3 {
                grad[child * 3 + c] += g_bones[bone * 3 + c];
                grad[p * 3 + c] -= g_bones[bone * 3 + c];
            }
            bone += 1;
        }
    }
    Ok(grad)
}

/// Learned homoscedastic uncertainties of the five backbone terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sigma_2d: f64,
    pub sigma_3d: f64,
    pub sigma_2dp: f64,
    pub sigma_m: f64,
    pub sigma_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sigma_2d: 1.0,
            sigma_3d: 1.0,
            sigma_2dp: 1.0,
            sigma_m: 1.0,
            sigma_b: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.sigma_2d,
            self.sigma_3d,
            self.sigma_2dp,
            self.sigma_m,
            self.sigma_b,
        ]
    }
}

/// Raw backbone terms in the order `L_2d, L_3d, L_2d^p, L_m, L_b`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BackboneTerms {
    pub l_2d: f64,
    pub l_3d: f64,
    pub l_2dp: f64,
    pub l_m: f64,
    pub l_b: f64,
}

impl BackboneTerms {
    pub fn as_array(&self) -> [f64; 5] {
        [self.l_2d, self.l_3d, self.l_2dp, self.l_m, self.l_b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: BackboneTerms,
    pub l_c: f64,
    pub regularizer: f64,
    pub total: f64,
}

/// `Σ term/σ² + Σ log σ² + L_c`. With `regularize = false` the `log σ²`
/// terms are dropped.
pub fn homoscedastic_total(
    terms: &BackboneTerms,
    weights: &LossWeights,
    l_c: f64,
    regularize: bool,
) -> Result<LossReport> {
    let sigmas = weights.as_array();
    if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("homoscedastic sigmas must be positive"));
    }
    let raw = terms.as_array();
    if raw.iter().chain([&l_c]).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss term".into()));
    }
    let weighted: f64 = raw.iter().zip(&sigmas).map(|(t, s)| t / (s * s)).sum();
    let regularizer = if regularize {
        sigmas.iter().map(|s| (s * s).ln()).sum()
    } else {
        0.0
    };
    Ok(LossReport {
        terms: *terms,
        l_c,
        regularizer,
        total: weighted + regularizer + l_c,
    })
}

/// The σ minimizing `t/σ² + log σ²` for a positive term `t`.
pub fn stationary_sigma(term: f64) -> f64 {
    term.sqrt()
}

/// Central differences `(f(x + εeᵢ) − f(x − εeᵢ)) / 2ε`.
pub fn finite_diff_gradient(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe)?;
        probe[i] = x[i] - eps;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(format!(
                "function value near coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
