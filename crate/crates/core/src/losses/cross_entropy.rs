use super::tensor::Tensor3;
use crate::error::{Error, Result};
use crate::raster::SemanticMap;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// dL/dlogits.
    pub grad: Tensor3,
}

/// Mean over pixels of `-ln softmax(logits)[target]`.
pub fn cross_entropy_pixelwise(logits: &Tensor3, target: &SemanticMap) -> Result<CrossEntropy> {
    let (classes, h, w) = logits.shape();
    if (h, w) != target.dims() {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            found: target.dims(),
        });
    }
    let plane = h * w;
    if plane == 0 || classes == 0 {
        return Err(Error::Validation("cross-entropy on an empty tensor".into()));
    }
    if let Some((i, &t)) = target
        .data()
        .iter()
        .enumerate()
        .find(|(_, &t)| t as usize >= classes)
    {
        return Err(Error::Validation(format!(
            "pixel {i} targets class {t}, but logits only have {classes} classes"
        )));
    }
    let data = logits.data();
    let mut grad = Tensor3::zeros(classes, h, w);
    let mut total = 0.0;
    let inv_n = 1.0 / plane as f64;
    for p in 0..plane {
        let m = (0..classes)
            .map(|c| data[c * plane + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..classes).map(|c| (data[c * plane + p] - m).exp()).sum();
        let log_z = m + z.ln();
        let t = target.data()[p] as usize;
        total += log_z - data[t * plane + p];
        let g = grad.data_mut();
        for c in 0..classes {
            let soft = (data[c * plane + p] - log_z).exp();
            g[c * plane + p] = (soft - if c == t { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok(CrossEntropy {
        loss: total * inv_n,
        grad,
    })
}
