//! Segmentation losses on predicted probabilities.
//!
//! Predictions are clamped to `[EPS, 1 - EPS]` before any logarithm; clamped
//! elements receive no gradient from the logarithmic terms.

use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Bce,
    Focal { alpha: f64, gamma: f64 },
    Dice,
    BceDice,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Focal { .. } => "focal",
            LossKind::Dice => "dice",
            LossKind::BceDice => "bce_dice",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Some(LossKind::Bce),
            "focal" => Some(LossKind::Focal { alpha: 0.25, gamma: 2.0 }),
            "dice" => Some(LossKind::Dice),
            "bce_dice" | "bce+dice" => Some(LossKind::BceDice),
            _ => None,
        }
    }
}

fn clamp(p: f64) -> (f64, bool) {
    if p < EPS {
        (EPS, true)
    } else if p > 1.0 - EPS {
        (1.0 - EPS, true)
    } else {
        (p, false)
    }
}

pub fn bce_value(pred: &[f64], target: &[f64]) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let (p, _) = clamp(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    s / pred.len() as f64
}

pub(crate) fn bce_grad(pred: &[f64], target: &[f64], g: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| match clamp(p) {
            (_, true) => 0.0,
            (p, false) => g * (-t / p + (1.0 - t) / (1.0 - p)) / n,
        })
        .collect()
}

pub fn focal_value(pred: &[f64], target: &[f64], alpha: f64, gamma: f64) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let (p, _) = clamp(p);
            -alpha * t * (1.0 - p).powf(gamma) * p.ln() - (1.0 - alpha) * (1.0 - t) * p.powf(gamma) * (1.0 - p).ln()
        })
        .sum();
    s / pred.len() as f64
}

pub(crate) fn focal_grad(pred: &[f64], target: &[f64], alpha: f64, gamma: f64, g: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| match clamp(p) {
            (_, true) => 0.0,
            (p, false) => {
                let pos = alpha * t * (gamma * (1.0 - p).powf(gamma - 1.0) * p.ln() - (1.0 - p).powf(gamma) / p);
                let neg = (1.0 - alpha)
                    * (1.0 - t)
                    * (-gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() + p.powf(gamma) / (1.0 - p));
                g * (pos + neg) / n
            }
        })
        .collect()
}

pub fn dice_value(pred: &[f64], target: &[f64]) -> f64 {
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let total: f64 = pred.iter().sum::<f64>() + target.iter().sum::<f64>();
    1.0 - (2.0 * inter + 1.0) / (total + 1.0)
}

pub(crate) fn dice_grad(pred: &[f64], target: &[f64], g: f64) -> Vec<f64> {
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let total: f64 = pred.iter().sum::<f64>() + target.iter().sum::<f64>() + 1.0;
    let num = 2.0 * inter + 1.0;
    target
        .iter()
        .map(|&t| -g * (2.0 * t * total - num) / (total * total))
        .collect()
}

impl Tape {
    fn loss_target(&self, op: &'static str, pred: Var, target: &[f64]) -> Result<Vec<f64>> {
        let n = self.value(pred).len();
        if target.len() != n {
            return Err(Error::shape(op, format!("{n} predictions, {} targets", target.len())));
        }
        Ok(target.to_vec())
    }

    /// Mean binary cross-entropy.
    pub fn bce(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let target = self.loss_target("bce", pred, target)?;
        let v = bce_value(self.value(pred).data(), &target);
        let rg = self.requires_grad(pred);
        Ok(self.push(Tensor::scalar(v), rg, Op::Bce { pred, target }))
    }

    /// Mean focal loss with class weight `alpha` on positives.
    pub fn focal(&mut self, pred: Var, target: &[f64], alpha: f64, gamma: f64) -> Result<Var> {
        let target = self.loss_target("focal", pred, target)?;
        let v = focal_value(self.value(pred).data(), &target, alpha, gamma);
        let rg = self.requires_grad(pred);
        Ok(self.push(
            Tensor::scalar(v),
            rg,
            Op::Focal {
                pred,
                target,
                alpha,
                gamma,
            },
        ))
    }

    /// Soft Dice loss with unit smoothing, pooled over every element.
    pub fn dice(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let target = self.loss_target("dice", pred, target)?;
        let v = dice_value(self.value(pred).data(), &target);
        let rg = self.requires_grad(pred);
        Ok(self.push(Tensor::scalar(v), rg, Op::Dice { pred, target }))
    }

    pub fn bce_dice(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let a = self.bce(pred, target)?;
        let b = self.dice(pred, target)?;
        self.add(a, b)
    }

    pub fn loss(&mut self, kind: LossKind, pred: Var, target: &[f64]) -> Result<Var> {
        match kind {
            LossKind::Bce => self.bce(pred, target),
            LossKind::Focal { alpha, gamma } => self.focal(pred, target, alpha, gamma),
            LossKind::Dice => self.dice(pred, target),
            LossKind::BceDice => self.bce_dice(pred, target),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bce_at_half_is_ln2() {
        assert_relative_eq!(bce_value(&[0.5, 0.5], &[1.0, 0.0]), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn dice_half_overlap() {
        // inter = 1, total = 1 + 2 -> 1 - 3/4.
        assert_relative_eq!(dice_value(&[1.0, 0.0], &[1.0, 1.0]), 0.25, epsilon = 1e-12);
        assert_relative_eq!(dice_value(&[0.0, 0.0], &[1.0, 0.0]), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn focal_without_focusing_is_weighted_bce() {
        let p = [0.2, 0.7, 0.9, 0.4];
        let t = [1.0, 0.0, 1.0, 0.0];
        assert_relative_eq!(focal_value(&p, &t, 0.5, 0.0), 0.5 * bce_value(&p, &t), epsilon = 1e-12);
    }

    #[test]
    fn clamped_predictions_stay_finite() {
        let v = bce_value(&[0.0, 1.0], &[1.0, 0.0]);
        assert!(v.is_finite());
        assert_relative_eq!(v, -(EPS.ln()), epsilon = 1e-9);
        assert_eq!(bce_grad(&[0.0, 1.0], &[1.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn loss_shape_mismatch() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::full(&[3], 0.5));
        assert!(matches!(t.bce(p, &[1.0]), Err(Error::Shape { op: "bce", .. })));
    }
}
