//! Training objectives and attention math, evaluated on scalars.

mod attention;
mod boundary;
mod contrast;
mod cross_entropy;
mod tensor;

pub use attention::{default_hidden, mau_forward, MauOutput, MauWeights, SPATIAL_KERNEL};
pub use boundary::{
    boundary_loss, boundary_loss_values, class_balance_weight, BoundaryLoss, LOG_EPS,
};
pub use contrast::{contrast_loss, l2_normalize, ContrastBatch, ContrastLoss};
pub use cross_entropy::{cross_entropy_pixelwise, CrossEntropy};
pub use tensor::Tensor3;

use crate::raster::{BinaryMask, SemanticMap};

/// Weights of the contrastive, boundary and segmentation terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub contrast: f64,
    pub boundary: f64,
    pub segmentation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contrast: 0.3,
            boundary: 50.0,
            segmentation: 1.0,
        }
    }
}

pub fn overall_loss(contrast: f64, boundary: f64, segmentation: f64, weights: LossWeights) -> f64 {
    weights.contrast * contrast + weights.boundary * boundary + weights.segmentation * segmentation
}

/// Pixels with at least one in-bounds 4-neighbour of a different class.
pub fn semantic_contours(semantic: &SemanticMap) -> BinaryMask {
    let (h, w) = semantic.dims();
    let d = semantic.data();
    BinaryMask::from_fn(h, w, |r, c| {
        let v = d[r * w + c];
        (r > 0 && d[(r - 1) * w + c] != v)
            || (r + 1 < h && d[(r + 1) * w + c] != v)
            || (c > 0 && d[r * w + c - 1] != v)
            || (c + 1 < w && d[r * w + c + 1] != v)
    })
}
