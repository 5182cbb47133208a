//! Pixel-wise training losses on probability maps: binary cross entropy,
//! the soft Jaccard index, and their weighted combination
//! `L = L_bce + w · (1 − J)`.
//!
//! Inputs are flat slices of predicted probabilities and binary ground
//! truth of equal length `n`; every loss is a mean over the `n` pixels.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Probabilities are clamped to `[EPS, 1 − EPS]` inside the logarithms.
pub const EPS: f64 = 1e-7;

/// Default weight of the Jaccard term.
pub const DEFAULT_JACCARD_WEIGHT: f64 = 0.3;

fn validate<T: Scalar>(pred: &[T], gt: &[T]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("loss over zero pixels"));
    }
    if let Some(p) = pred.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(Error::invalid(format!("prediction {p} outside [0, 1]")));
    }
    if let Some(y) = gt.iter().find(|y| **y != T::zero() && **y != T::one()) {
        return Err(Error::invalid(format!("ground truth {y} is not binary")));
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Mean binary cross entropy.
pub fn bce_loss<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    validate(pred, gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, y)| {
            let (p, y) = (clamp_prob(p.as_f64()), y.as_f64());
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(T::of(-sum / pred.len() as f64))
}

/// d bce / d pred. Zero where the clamp is active.
pub fn bce_grad<T: Scalar>(pred: &[T], gt: &[T]) -> Result<Vec<T>> {
    validate(pred, gt)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, y)| {
            let (p, y) = (p.as_f64(), y.as_f64());
            if !(EPS..=1.0 - EPS).contains(&p) {
                T::zero()
            } else {
                T::of(-(y / p - (1.0 - y) / (1.0 - p)) / n)
            }
        })
        .collect())
}

/// Soft Jaccard index: mean over pixels of `y·p / (y + p − y·p)`, with
/// `0/0` terms counted as 0.
pub fn soft_jaccard<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    validate(pred, gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, y)| {
            let (p, y) = (p.as_f64(), y.as_f64());
            let den = y + p - y * p;
            if den == 0.0 {
                0.0
            } else {
                y * p / den
            }
        })
        .sum();
    Ok(T::of(sum / pred.len() as f64))
}

/// d J / d pred.
pub fn soft_jaccard_grad<T: Scalar>(pred: &[T], gt: &[T]) -> Result<Vec<T>> {
    validate(pred, gt)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, y)| {
            let (p, y) = (p.as_f64(), y.as_f64());
            let den = y + p - y * p;
            if den == 0.0 {
                T::zero()
            } else {
                // quotient rule with d(num)/dp = y, d(den)/dp = 1 - y
                T::of((y * den - y * p * (1.0 - y)) / (den * den) / n)
            }
        })
        .collect())
}

/// `bce + w · (1 − J)`.
pub fn jbce_loss<T: Scalar>(pred: &[T], gt: &[T], w: T) -> Result<T> {
    if w < T::zero() {
        return Err(Error::invalid(format!(
            "Jaccard weight must be >= 0, got {w}"
        )));
    }
    let bce = bce_loss(pred, gt)?;
    let j = soft_jaccard(pred, gt)?;
    Ok(bce + w * (T::one() - j))
}

pub fn jbce_grad<T: Scalar>(pred: &[T], gt: &[T], w: T) -> Result<Vec<T>> {
    if w < T::zero() {
        return Err(Error::invalid(format!(
            "Jaccard weight must be >= 0, got {w}"
        )));
    }
    let gb = bce_grad(pred, gt)?;
    let gj = soft_jaccard_grad(pred, gt)?;
    Ok(gb.into_iter().zip(gj).map(|(b, j)| b - w * j).collect())
}
