//! Depth activation, the combined scale-invariant / relative-squared depth
//! loss, and the usual monocular depth error battery (KITTI conventions:
//! natural logs, SILog ×100 under a square root, iRMSE in 1/km).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DepthMap;

/// Depth cap used for KITTI-range predictions.
pub const KITTI_MAX_DEPTH: f64 = 88.0;
pub const DEFAULT_EVAL_MIN: f64 = 1e-3;
pub const DEFAULT_EVAL_MAX: f64 = 80.0;

/// `max_depth * sigmoid(logit)` per pixel, kept inside the open interval
/// `(0, max_depth)` even where the sigmoid saturates in floating point.
pub fn depth_from_logit(width: usize, height: usize, logits: &[f64], max_depth: f64) -> Result<DepthMap> {
    if !(max_depth > 0.0 && max_depth.is_finite()) {
        return Err(Error::Domain(format!("max depth must be positive, got {max_depth}")));
    }
    if logits.len() != width * height {
        return Err(Error::Dimension(format!(
            "{width}x{height} needs {} logits, got {}",
            width * height,
            logits.len()
        )));
    }
    let below_max = max_depth.next_down();
    let values = logits
        .iter()
        .map(|&f| {
            let s = if f >= 0.0 {
                1.0 / (1.0 + (-f).exp())
            } else {
                let e = f.exp();
                e / (1.0 + e)
            };
            (max_depth * s).clamp(f64::MIN_POSITIVE, below_max)
        })
        .collect();
    DepthMap::from_raw(width, height, values)
}

fn check_pair(gt: &[f64], pred: &[f64]) -> Result<()> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::Dimension(format!(
            "depth loss needs equal non-empty inputs, got {} and {}",
            gt.len(),
            pred.len()
        )));
    }
    if let Some(bad) = gt.iter().chain(pred).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("depth must be positive and finite, got {bad}")));
    }
    Ok(())
}

/// The two parts of the depth loss, kept apart because the first is
/// invariant to a global scale of the prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthLossTerms {
    /// `mean(e²) − mean(e)²` with `e = log gt − log pred`, clamped at 0.
    pub log_variance: f64,
    /// `sqrt(mean(((gt − pred) / gt)²))`.
    pub rel_sq_root: f64,
}

impl DepthLossTerms {
    pub fn total(&self) -> f64 {
        self.log_variance + self.rel_sq_root
    }
}

pub fn depth_loss_terms(gt: &[f64], pred: &[f64]) -> Result<DepthLossTerms> {
    check_pair(gt, pred)?;
    let n = gt.len() as f64;
    let (mut sum, mut sum_sq, mut rel) = (0.0, 0.0, 0.0);
    for (&g, &p) in gt.iter().zip(pred) {
        let e = g.ln() - p.ln();
        sum += e;
        sum_sq += e * e;
        let r = (g - p) / g;
        rel += r * r;
    }
    let mean = sum / n;
    Ok(DepthLossTerms {
        log_variance: (sum_sq / n - mean * mean).max(0.0),
        rel_sq_root: (rel / n).sqrt(),
    })
}

/// Scale-invariant log variance plus root mean relative squared error.
pub fn depth_loss(gt: &[f64], pred: &[f64]) -> Result<f64> {
    depth_loss_terms(gt, pred).map(|t| t.total())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Loss per image, then the mean over images.
    PerImage,
    /// All pixels of all images pooled into one loss.
    Global,
}

pub fn depth_loss_batch(images: &[(&[f64], &[f64])], reduction: LossReduction) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Dimension("empty batch".into()));
    }
    match reduction {
        LossReduction::PerImage => {
            let mut total = 0.0;
            for (g, p) in images {
                total += depth_loss(g, p)?;
            }
            Ok(total / images.len() as f64)
        }
        LossReduction::Global => {
            let gt: Vec<f64> = images.iter().flat_map(|(g, _)| g.iter().copied()).collect();
            let pred: Vec<f64> = images.iter().flat_map(|(_, p)| p.iter().copied()).collect();
            depth_loss(&gt, &pred)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalResult {
    /// `100 * sqrt(log variance)`.
    pub silog: f64,
    /// Raw variance of log errors.
    pub silog_variance: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// 1/km.
    pub irmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n: u64,
}

/// Running sums for the depth metrics; mergeable across images.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthAccumulator {
    n: u64,
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    log_sq: f64,
    log_sum: f64,
    inv_sq: f64,
    inliers: [u64; 3],
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: f64, gt: f64) {
        let diff = pred - gt;
        let log_err = pred.ln() - gt.ln();
        let inv = 1000.0 / pred - 1000.0 / gt;
        self.n += 1;
        self.abs_rel += diff.abs() / gt;
        self.sq_rel += diff * diff / gt;
        self.sq += diff * diff;
        self.log_sq += log_err * log_err;
        self.log_sum += log_err;
        self.inv_sq += inv * inv;
        let ratio = (pred / gt).max(gt / pred);
        let mut thr = 1.0;
        for slot in &mut self.inliers {
            thr *= 1.25;
            if ratio < thr {
                *slot += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &DepthAccumulator) {
        self.n += other.n;
        self.abs_rel += other.abs_rel;
        self.sq_rel += other.sq_rel;
        self.sq += other.sq;
        self.log_sq += other.log_sq;
        self.log_sum += other.log_sum;
        self.inv_sq += other.inv_sq;
        for (a, b) in self.inliers.iter_mut().zip(other.inliers) {
            *a += b;
        }
    }

    /// Adds every pixel whose ground truth lies in `[min_depth, max_depth]`
    /// and whose prediction is present.
    pub fn add_maps(&mut self, pred: &DepthMap, gt: &DepthMap, min_depth: f64, max_depth: f64) -> Result<()> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(Error::Dimension(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        for i in 0..gt.len() {
            let Some(g) = gt.at(i) else { continue };
            if g < min_depth || g > max_depth {
                continue;
            }
            if let Some(p) = pred.at(i) {
                self.add(p, g);
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DepthEvalResult> {
        if self.n == 0 {
            return Err(Error::EmptyMask);
        }
        let n = self.n as f64;
        let mean_log = self.log_sum / n;
        let variance = (self.log_sq / n - mean_log * mean_log).max(0.0);
        Ok(DepthEvalResult {
            silog: 100.0 * variance.sqrt(),
            silog_variance: variance,
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq / n).sqrt(),
            rmse_log: (self.log_sq / n).sqrt(),
            irmse: (self.inv_sq / n).sqrt(),
            delta1: self.inliers[0] as f64 / n,
            delta2: self.inliers[1] as f64 / n,
            delta3: self.inliers[2] as f64 / n,
            n: self.n,
        })
    }
}

pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, min_depth: f64, max_depth: f64) -> Result<DepthEvalResult> {
    let mut acc = DepthAccumulator::default();
    acc.add_maps(pred, gt, min_depth, max_depth)?;
    acc.finish()
}
