//! Weighted pixel-to-pixel contrastive loss.
//!
//! For anchor `a`, positives `p_k`, negatives `n_j`, temperature `t` and
//! weight `w`:
//!
//! ```text
//! L = 1/|P| * sum_k  -w * ln( e^{a.p_k/t} / (e^{a.p_k/t} + (1 - w) * sum_j e^{a.n_j/t}) )
//! ```
//!
//! Only the negatives are damped by `(1 - w)` in the denominator.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub temperature: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(scale: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

impl ContrastBatch {
    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::Precondition(
                "contrastive loss needs at least one positive".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Precondition(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Precondition(format!(
                "alpha {} is outside [0, 1]",
                self.alpha
            )));
        }
        let d = self.dim();
        if let Some(v) = self
            .positives
            .iter()
            .chain(&self.negatives)
            .find(|v| v.len() != d)
        {
            return Err(Error::Validation(format!(
                "embedding of dimension {} does not match anchor dimension {d}",
                v.len()
            )));
        }
        Ok(())
    }
}

/// Scales `v` to unit length; zero vectors are returned unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

pub fn contrast_loss(batch: &ContrastBatch) -> Result<ContrastLoss> {
    batch.validate()?;
    let d = batch.dim();
    let tau = batch.temperature;
    let alpha = batch.alpha;
    let neg_weight = 1.0 - alpha;

    let pos_logits: Vec<f64> = batch
        .positives
        .iter()
        .map(|p| dot(&batch.anchor, p) / tau)
        .collect();
    let neg_logits: Vec<f64> = batch
        .negatives
        .iter()
        .map(|n| dot(&batch.anchor, n) / tau)
        .collect();
    let neg_max = neg_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut loss = 0.0;
    let mut dpos = vec![0.0; pos_logits.len()];
    let mut dneg = vec![0.0; neg_logits.len()];
    let inv_p = 1.0 / pos_logits.len() as f64;
    let use_negatives = neg_weight > 0.0 && !neg_logits.is_empty();

    for (k, &s) in pos_logits.iter().enumerate() {
        if !use_negatives {
            // the ratio is exactly 1
            continue;
        }
        // ln D = m + ln(e^{s-m} + (1-a) sum e^{t_j-m})
        let m = s.max(neg_max);
        let pos_term = (s - m).exp();
        let neg_terms: Vec<f64> = neg_logits
            .iter()
            .map(|&t| neg_weight * (t - m).exp())
            .collect();
        let neg_sum: f64 = neg_terms.iter().sum();
        let denom = pos_term + neg_sum;
        let log_denom = m + denom.ln();
        loss += -alpha * (s - log_denom) * inv_p;
        // d/ds = -a * (1 - e^s/D) = -a * negsum/D ; d/dt_j = a * (1-a) e^{t_j}/D
        dpos[k] += -alpha * (neg_sum / denom) * inv_p;
        for (j, nt) in neg_terms.iter().enumerate() {
            dneg[j] += alpha * (nt / denom) * inv_p;
        }
    }

    let mut grad_anchor = vec![0.0; d];
    let mut grad_positives = vec![vec![0.0; d]; batch.positives.len()];
    let mut grad_negatives = vec![vec![0.0; d]; batch.negatives.len()];
    for (k, p) in batch.positives.iter().enumerate() {
        let g = dpos[k] / tau;
        axpy(g, p, &mut grad_anchor);
        axpy(g, &batch.anchor, &mut grad_positives[k]);
    }
    for (j, n) in batch.negatives.iter().enumerate() {
        let g = dneg[j] / tau;
        axpy(g, n, &mut grad_anchor);
        axpy(g, &batch.anchor, &mut grad_negatives[j]);
    }

    Ok(ContrastLoss {
        loss,
        grad_anchor,
        grad_positives,
        grad_negatives,
    })
}
