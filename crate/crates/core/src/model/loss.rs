//! Depth losses over masked label maps. Each returns its value and the
//! gradient with respect to the prediction. Sums are normalized by the
//! number of masked pixels (or pixel pairs), so an empty mask gives zero.

use serde::{Deserialize, Serialize};

use crate::{invalid, Result};

/// Ratio between the largest masked residual and the berHu threshold.
pub const BERHU_THRESHOLD_RATIO: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Labels and mask for one frame, row-major `height × width`.
#[derive(Clone, Copy, Debug)]
pub struct LossTarget<'a> {
    pub labels: &'a [f64],
    pub mask: &'a [bool],
    pub width: usize,
    pub height: usize,
}

impl LossTarget<'_> {
    fn check(&self, pred: &[f64]) -> Result<()> {
        let n = self.width * self.height;
        if pred.len() != n || self.labels.len() != n || self.mask.len() != n {
            return invalid(format!(
                "loss operands differ: {} predictions, {} labels, {} mask entries for {}×{}",
                pred.len(),
                self.labels.len(),
                self.mask.len(),
                self.width,
                self.height
            ));
        }
        Ok(())
    }

    fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn l2_loss(pred: &[f64], target: &LossTarget) -> Result<FrameLoss> {
    target.check(pred)?;
    let mut grad = vec![0.0; pred.len()];
    let n = target.masked_count();
    if n == 0 {
        return Ok(FrameLoss { value: 0.0, grad });
    }
    let mut sum = 0.0;
    for i in 0..pred.len() {
        if target.mask[i] {
            let d = pred[i] - target.labels[i];
            sum += d * d;
            grad[i] = 2.0 * d / n as f64;
        }
    }
    Ok(FrameLoss {
        value: sum / n as f64,
        grad,
    })
}

/// Per-pixel reverse Huber value and derivative at residual `d`, threshold `c`.
pub fn berhu(d: f64, c: f64) -> (f64, f64) {
    if d.abs() <= c {
        (d.abs(), if d == 0.0 { 0.0 } else { d.signum() })
    } else {
        ((d * d + c * c) / (2.0 * c), d / c)
    }
}

/// `c = 0.2 · max |δ|` over masked pixels, held constant when
/// differentiating.
pub fn berhu_loss(pred: &[f64], target: &LossTarget) -> Result<FrameLoss> {
    target.check(pred)?;
    let mut grad = vec![0.0; pred.len()];
    let n = target.masked_count();
    if n == 0 {
        return Ok(FrameLoss { value: 0.0, grad });
    }
    let max = (0..pred.len())
        .filter(|&i| target.mask[i])
        .map(|i| (pred[i] - target.labels[i]).abs())
        .fold(0.0, f64::max);
    let c = BERHU_THRESHOLD_RATIO * max;
    let mut sum = 0.0;
    for i in 0..pred.len() {
        if target.mask[i] {
            let (v, g) = berhu(pred[i] - target.labels[i], c);
            sum += v;
            grad[i] = g / n as f64;
        }
    }
    Ok(FrameLoss {
        value: sum / n as f64,
        grad,
    })
}

/// Squared differences of horizontal and vertical finite differences.
/// A pair counts only when both pixels are masked.
pub fn gdl_loss(pred: &[f64], target: &LossTarget) -> Result<FrameLoss> {
    target.check(pred)?;
    let (w, h) = (target.width, target.height);
    let mut grad = vec![0.0; pred.len()];
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !target.mask[i] {
                continue;
            }
            if x > 0 && target.mask[i - 1] {
                pairs.push((i, i - 1));
            }
            if y > 0 && target.mask[i - w] {
                pairs.push((i, i - w));
            }
        }
    }
    if pairs.is_empty() {
        return Ok(FrameLoss { value: 0.0, grad });
    }
    let n = pairs.len() as f64;
    let mut sum = 0.0;
    for &(a, b) in &pairs {
        let e = (pred[a] - pred[b]) - (target.labels[a] - target.labels[b]);
        sum += e * e;
        grad[a] += 2.0 * e / n;
        grad[b] -= 2.0 * e / n;
    }
    Ok(FrameLoss {
        value: sum / n,
        grad,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L2,
    Berhu,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(default)]
    pub kind: LossKind,
    #[serde(default)]
    pub lambda_gdl: f64,
    /// Per-frame weights; empty means all ones.
    #[serde(default)]
    pub alphas: Vec<f64>,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gdl >= 0.0 && self.lambda_gdl.is_finite()) {
            return invalid(format!(
                "gradient-difference weight {} must be non-negative",
                self.lambda_gdl
            ));
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return invalid("frame weights must be non-negative");
        }
        if !self.alphas.is_empty() && !self.alphas.iter().any(|&a| a > 0.0) {
            return invalid("at least one frame weight must be positive");
        }
        Ok(())
    }

    fn alpha(&self, i: usize, k: usize) -> Result<f64> {
        match self.alphas.len() {
            0 => Ok(1.0),
            len if len == k => Ok(self.alphas[i]),
            len => invalid(format!("{len} frame weights for a {k}-frame sequence")),
        }
    }

    /// Base loss plus the weighted gradient-difference term for one frame.
    pub fn frame_loss(&self, pred: &[f64], target: &LossTarget) -> Result<FrameLoss> {
        let mut loss = match self.kind {
            LossKind::L2 => l2_loss(pred, target)?,
            LossKind::Berhu => berhu_loss(pred, target)?,
        };
        if self.lambda_gdl != 0.0 {
            let gdl = gdl_loss(pred, target)?;
            loss.value += self.lambda_gdl * gdl.value;
            for (g, d) in loss.grad.iter_mut().zip(&gdl.grad) {
                *g += self.lambda_gdl * d;
            }
        }
        Ok(loss)
    }
}

/// `(1/k) Σ αᵢ (base(Dᵢ, Yᵢ) + λ · GDL(Dᵢ, Yᵢ))`, with per-frame gradients.
pub fn sequence_loss(
    preds: &[Vec<f64>],
    targets: &[LossTarget],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let k = preds.len();
    if k == 0 || targets.len() != k {
        return invalid(format!("{k} predictions for {} targets", targets.len()));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(k);
    for (i, (pred, target)) in preds.iter().zip(targets).enumerate() {
        let alpha = cfg.alpha(i, k)?;
        let loss = cfg.frame_loss(pred, target)?;
        total += alpha * loss.value;
        grads.push(loss.grad.iter().map(|g| alpha * g / k as f64).collect());
    }
    Ok((total / k as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(labels: &[f64], width: usize) -> (Vec<bool>, usize, usize) {
        (vec![true; labels.len()], width, labels.len() / width)
    }

    #[test]
    fn l2_examples() {
        let y = vec![0.3, 0.4, 0.5, 0.6];
        let (mask, w, h) = full(&y, 2);
        let t = LossTarget {
            labels: &y,
            mask: &mask,
            width: w,
            height: h,
        };
        assert_eq!(l2_loss(&y, &t).unwrap().value, 0.0);
        let d: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        assert!((l2_loss(&d, &t).unwrap().value - 0.01).abs() < 1e-15);
        let none = vec![false; 4];
        let t = LossTarget {
            labels: &y,
            mask: &none,
            width: w,
            height: h,
        };
        let loss = l2_loss(&d, &t).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn berhu_takes_quadratic_branch_when_residuals_are_equal() {
        let y = vec![0.0; 3];
        let d = vec![0.4; 3];
        let (mask, w, h) = full(&y, 3);
        let t = LossTarget {
            labels: &y,
            mask: &mask,
            width: w,
            height: h,
        };
        let c: f64 = 0.08;
        let want = (0.16 + c * c) / (2.0 * c);
        assert!((berhu_loss(&d, &t).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn gdl_ignores_offsets_and_counts_pairs() {
        let y = vec![0.1, 0.5, 0.2, 0.3, 0.7, 0.4];
        let (mask, w, h) = full(&y, 3);
        let t = LossTarget {
            labels: &y,
            mask: &mask,
            width: w,
            height: h,
        };
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
        assert!(gdl_loss(&shifted, &t).unwrap().value < 1e-15);

        let y = vec![0.0, 0.0];
        let mask = vec![true, true];
        let t = LossTarget {
            labels: &y,
            mask: &mask,
            width: 2,
            height: 1,
        };
        assert_eq!(gdl_loss(&[0.0, 1.0], &t).unwrap().value, 1.0);
        let mask = vec![true, false];
        let t = LossTarget {
            labels: &y,
            mask: &mask,
            width: 2,
            height: 1,
        };
        assert_eq!(gdl_loss(&[0.0, 1.0], &t).unwrap().value, 0.0);
    }

    #[test]
    fn config_rejects_bad_weights() {
        assert!(LossConfig {
            alphas: vec![0.0, 0.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            alphas: vec![-1.0, 1.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            lambda_gdl: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            alphas: vec![0.0, 1.0],
            ..Default::default()
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn mismatched_operands_are_rejected() {
        let y = vec![0.0; 4];
        let mask = vec![true; 4];
        let t = LossTarget {
            labels: &y,
            mask: &mask,
            width: 2,
            height: 2,
        };
        assert!(l2_loss(&[0.0; 3], &t).is_err());
    }
}
