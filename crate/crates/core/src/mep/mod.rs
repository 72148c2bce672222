//! Mask extraction pipeline: boundary thinning, marker labeling, watershed
//! flooding and refinement.
//!
//! ```text
//! boundary ──nms_thin──► thin edges ──complement──► ccl_label ──area filter──► markers
//! markers + cost ──watershed_flood──► instances ──refine(semantic)──► instance label map
//! ```

mod ccl;
mod nms;
mod refine;
mod watershed;

pub use ccl::{ccl_label, label_regions, Connectivity, DisjointSet};
pub use nms::{nms_thin, Direction};
pub use refine::{
    close_instances, filter_by_semantic, refine, remove_small_components, SPLIT_CONNECTIVITY,
};
pub use watershed::watershed_flood;

use crate::error::{check_same_dims, Error, Result};
use crate::raster::{LabelMap, ProbMap, SemanticMap};

/// Image size at which the default `min_component_area` was chosen.
pub const REFERENCE_PIXELS: usize = 416 * 416;

#[derive(Debug, Clone, PartialEq)]
pub struct MepConfig {
    pub boundary_threshold: f32,
    pub min_component_area: usize,
    pub closing_radius: usize,
    pub connectivity: Connectivity,
    /// Skip closing, semantic filtering and the final area filter.
    pub refine: bool,
    /// Weight of the intensity-gradient term added to the flooding cost.
    /// Zero means the cost surface is the boundary map alone.
    pub image_weight: f32,
}

impl Default for MepConfig {
    fn default() -> Self {
        Self {
            boundary_threshold: 0.5,
            min_component_area: 16,
            closing_radius: 1,
            connectivity: Connectivity::Four,
            refine: true,
            image_weight: 0.0,
        }
    }
}

impl MepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.boundary_threshold) {
            return Err(Error::Validation(format!(
                "boundary threshold {} is outside [0, 1]",
                self.boundary_threshold
            )));
        }
        if !(self.image_weight >= 0.0 && self.image_weight.is_finite()) {
            return Err(Error::Validation(format!(
                "image weight {} must be finite and non-negative",
                self.image_weight
            )));
        }
        Ok(())
    }

    /// `min_component_area` rescaled from the 416x416 reference to an
    /// `height x width` image.
    pub fn scaled_min_area(&self, height: usize, width: usize) -> usize {
        let scaled =
            self.min_component_area as f64 * (height * width) as f64 / REFERENCE_PIXELS as f64;
        scaled.round() as usize
    }
}

/// Drops marker components smaller than `min_area` and renumbers the rest.
pub fn suppress_small_markers(markers: &LabelMap, min_area: usize) -> LabelMap {
    let areas = markers.areas();
    let data = markers
        .data()
        .iter()
        .map(|&l| if areas[l as usize] < min_area { 0 } else { l })
        .collect();
    LabelMap::new(markers.height(), markers.width(), data)
        .expect("dimensions preserved")
        .relabel_dense()
}

/// Flooding cost: `(boundary + weight * g) / (1 + weight)` where `g` is the
/// max-normalized central-difference gradient magnitude of `image`.
pub fn flooding_cost(boundary: &ProbMap, image: &ProbMap, weight: f32) -> Result<ProbMap> {
    check_same_dims(boundary.dims(), image.dims())?;
    let (h, w) = image.dims();
    let mut grad: Vec<f32> = (0..h * w)
        .map(|i| {
            let (gx, gy) = nms::gradient_at(image, i / w, i % w);
            (gx * gx + gy * gy).sqrt()
        })
        .collect();
    let peak = grad.iter().copied().fold(0.0f32, f32::max);
    if peak > 0.0 {
        grad.iter_mut().for_each(|g| *g /= peak);
    }
    let data = boundary
        .data()
        .iter()
        .zip(&grad)
        .map(|(&b, &g)| ((b + weight * g) / (1.0 + weight)).clamp(0.0, 1.0))
        .collect();
    ProbMap::new(h, w, data)
}

/// Markers for the watershed: connected regions of non-boundary pixels.
pub fn extract_markers(boundary: &ProbMap, config: &MepConfig) -> LabelMap {
    let edges = nms_thin(boundary, config.boundary_threshold);
    let markers = ccl_label(&edges.complement(), config.connectivity);
    suppress_small_markers(&markers, config.min_component_area)
}

pub fn extract_masks(
    boundary: &ProbMap,
    semantic: &SemanticMap,
    config: &MepConfig,
) -> Result<LabelMap> {
    extract_masks_with_image(boundary, semantic, None, config)
}

/// Runs the whole pipeline. `image` (a grayscale intensity raster) only
/// enters the flooding cost when `config.image_weight > 0`.
pub fn extract_masks_with_image(
    boundary: &ProbMap,
    semantic: &SemanticMap,
    image: Option<&ProbMap>,
    config: &MepConfig,
) -> Result<LabelMap> {
    config.validate()?;
    check_same_dims(boundary.dims(), semantic.dims())?;
    let markers = extract_markers(boundary, config);
    let flooded = match image {
        Some(img) if config.image_weight > 0.0 => {
            let cost = flooding_cost(boundary, img, config.image_weight)?;
            watershed_flood(&cost, &markers)?
        }
        _ => watershed_flood(boundary, &markers)?,
    };
    if config.refine {
        refine(
            &flooded,
            semantic,
            config.closing_radius,
            config.min_component_area,
        )
    } else {
        Ok(flooded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = MepConfig::default();
        assert!(c.validate().is_ok());
        c.boundary_threshold = 1.5;
        assert!(c.validate().is_err());
        c.boundary_threshold = 0.5;
        c.image_weight = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn scaled_area() {
        let c = MepConfig::default();
        assert_eq!(c.scaled_min_area(416, 416), 16);
        assert_eq!(c.scaled_min_area(832, 832), 64);
    }

    #[test]
    fn zero_boundary_background_semantic_is_empty() {
        let b = ProbMap::filled(20, 20, 0.0).unwrap();
        let s = SemanticMap::new(20, 20, vec![0; 400]).unwrap();
        let out = extract_masks(&b, &s, &MepConfig::default()).unwrap();
        assert_eq!(out.max_label(), 0);
    }

    #[test]
    fn zero_boundary_single_blob() {
        let b = ProbMap::filled(20, 20, 0.0).unwrap();
        let s = SemanticMap::new(
            20,
            20,
            (0..400)
                .map(|i| {
                    let (r, c) = (i / 20, i % 20);
                    u16::from((5..12).contains(&r) && (3..15).contains(&c))
                })
                .collect(),
        )
        .unwrap();
        let out = extract_masks(&b, &s, &MepConfig::default()).unwrap();
        assert_eq!(out.max_label(), 1);
        for (l, s) in out.data().iter().zip(s.data()) {
            assert_eq!(*l == 1, *s == 1);
        }
    }

    #[test]
    fn image_weight_zero_ignores_image() {
        let b = ProbMap::from_fn(12, 12, |_, c| if c == 6 { 0.9 } else { 0.0 }).unwrap();
        let s = SemanticMap::new(12, 12, vec![1; 144]).unwrap();
        let img = ProbMap::from_fn(12, 12, |r, c| ((r * 5 + c) % 7) as f32 / 7.0).unwrap();
        let cfg = MepConfig::default();
        let a = extract_masks(&b, &s, &cfg).unwrap();
        let b2 = extract_masks_with_image(&b, &s, Some(&img), &cfg).unwrap();
        assert_eq!(a, b2);
        let weighted = MepConfig {
            image_weight: 0.5,
            ..MepConfig::default()
        };
        assert!(extract_masks_with_image(&b, &s, Some(&img), &weighted).is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        let b = ProbMap::filled(4, 4, 0.0).unwrap();
        let s = SemanticMap::new(4, 5, vec![1; 20]).unwrap();
        assert!(extract_masks(&b, &s, &MepConfig::default()).is_err());
    }
}
