//! Class-balanced binary cross-entropy for boundary maps.

use num_traits::Float;

use crate::error::{check_same_dims, Error, Result};
use crate::raster::{BinaryMask, ProbMap};

pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoss<T> {
    pub loss: T,
    /// dL/dB per pixel. Zero where `B` was clamped.
    pub grad: Vec<T>,
    /// Weight of the positive (boundary) term.
    pub alpha: T,
    /// `y` holds a single class, so one of the two terms carries no weight.
    pub degenerate: bool,
}

/// `|Y-| / (|Y-| + |Y+|)`: the share of non-boundary pixels.
pub fn class_balance_weight(y: &[bool]) -> f64 {
    if y.is_empty() {
        return 0.5;
    }
    let pos = y.iter().filter(|&&v| v).count();
    (y.len() - pos) as f64 / y.len() as f64
}

/// `L = -sum(Y * a * ln B + (1 - Y)(1 - a) ln(1 - B))` with `a` from
/// [`class_balance_weight`] and `B` clamped to `[eps, 1 - eps]`.
pub fn boundary_loss_values<T: Float>(b: &[T], y: &[bool]) -> Result<BoundaryLoss<T>> {
    if b.len() != y.len() {
        return Err(Error::Validation(format!(
            "boundary map has {} pixels, labels have {}",
            b.len(),
            y.len()
        )));
    }
    if b.is_empty() {
        return Err(Error::Precondition(
            "boundary loss needs at least one pixel".into(),
        ));
    }
    let alpha_f64 = class_balance_weight(y);
    let degenerate = alpha_f64 == 0.0 || alpha_f64 == 1.0;
    if degenerate {
        log::warn!("boundary labels hold a single class; class-balance weight is {alpha_f64}");
    }
    let alpha = T::from(alpha_f64).unwrap();
    let one = T::one();
    let eps = T::from(LOG_EPS).unwrap();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(b.len());
    for (&raw, &label) in b.iter().zip(y) {
        let p = raw.max(eps).min(one - eps);
        let live = if p == raw { one } else { T::zero() };
        if label {
            loss = loss - alpha * p.ln();
            grad.push(-alpha / p * live);
        } else {
            loss = loss - (one - alpha) * (one - p).ln();
            grad.push((one - alpha) / (one - p) * live);
        }
    }
    Ok(BoundaryLoss {
        loss,
        grad,
        alpha,
        degenerate,
    })
}

/// Raster entry point; evaluates in 32-bit.
pub fn boundary_loss(b: &ProbMap, y: &BinaryMask) -> Result<BoundaryLoss<f32>> {
    check_same_dims(b.dims(), y.dims())?;
    boundary_loss_values(b.data(), y.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let b = [0.8f64, 0.1, 0.1, 0.1];
        let y = [true, false, false, false];
        let out = boundary_loss_values(&b, &y).unwrap();
        assert_eq!(out.alpha, 0.75);
        let expected = -(0.75 * 0.8f64.ln() + 3.0 * 0.25 * 0.9f64.ln());
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_tiny() {
        let y: Vec<bool> = (0..16).map(|i| i % 5 == 0).collect();
        let b: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let out = boundary_loss_values(&b, &y).unwrap();
        assert!(out.loss / 16.0 < 1e-5);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn degenerate_labels_still_defined() {
        let out = boundary_loss_values(&[0.3f64, 0.4], &[false, false]).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.alpha, 1.0);
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn f32_raster_path() {
        let b = ProbMap::new(2, 2, vec![0.8, 0.1, 0.1, 0.1]).unwrap();
        let y = BinaryMask::new(2, 2, vec![true, false, false, false]).unwrap();
        let out = boundary_loss(&b, &y).unwrap();
        let expected = -(0.75 * 0.8f64.ln() + 3.0 * 0.25 * 0.9f64.ln());
        assert!((out.loss as f64 - expected).abs() < 1e-6);
        assert!(boundary_loss(&b, &BinaryMask::empty(2, 3)).is_err());
    }
}
