//! Mask mAP evaluation.
//!
//! Predictions of one class are ranked by descending score across the whole
//! dataset (ties by image id, then label). Each prediction takes the
//! unmatched ground truth of its class and image with the highest IoU (ties
//! to the lowest index) and counts as a true positive when that IoU reaches
//! the threshold. AP is the area under the precision envelope.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{check_same_dims, Result};
use crate::fusion::{list_image_ids, read_instance_set, Instance, InstanceSet};
use crate::raster::BinaryMask;

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.25, 0.5, 0.7, 0.75];

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMethod {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same_dims(a.dims(), b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// IoU of two ascending pixel-index lists.
fn iou_sorted(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub image_id: String,
    pub predictions: Vec<Instance>,
    pub ground_truth: Vec<Instance>,
}

impl EvalImage {
    pub fn new(predictions: InstanceSet, ground_truth: InstanceSet) -> Self {
        Self {
            image_id: ground_truth.image_id,
            predictions: predictions.instances,
            ground_truth: ground_truth.instances,
        }
    }
}

/// Ranked match flags of one class at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub true_positives: Vec<bool>,
    pub scores: Vec<f32>,
    pub num_gt: usize,
}

impl MatchResult {
    /// `None` when the class has no ground truth.
    pub fn average_precision(&self, method: ApMethod) -> Option<f64> {
        ap_from_ranked(&self.true_positives, self.num_gt, method)
    }
}

/// AP of a ranked TP/FP sequence against `num_gt` ground truths.
pub fn ap_from_ranked(tp: &[bool], num_gt: usize, method: ApMethod) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    // precision envelope: best precision at this or any higher recall
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    Some(match method {
        ApMethod::AllPoints => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                if *r > prev_recall {
                    ap += (r - prev_recall) * p;
                    prev_recall = *r;
                }
            }
            ap
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|i| {
                    let t = i as f64 / 10.0;
                    recall
                        .iter()
                        .position(|&r| r >= t - 1e-12)
                        .map_or(0.0, |k| precision[k])
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

struct PreparedImage {
    image_id: String,
    pred_class: Vec<u16>,
    pred_score: Vec<f32>,
    pred_label: Vec<u32>,
    gt_class: Vec<u16>,
    /// `ious[p][g]`, zero across classes.
    ious: Vec<Vec<f64>>,
}

/// Dataset with pairwise IoUs precomputed, reusable across thresholds.
pub struct Evaluator {
    images: Vec<PreparedImage>,
}

impl Evaluator {
    pub fn new(images: &[EvalImage]) -> Self {
        let images = images
            .par_iter()
            .map(|img| {
                let gt_pixels: Vec<Vec<u32>> =
                    img.ground_truth.iter().map(|g| g.mask.indices()).collect();
                let ious = img
                    .predictions
                    .iter()
                    .map(|p| {
                        let pix = p.mask.indices();
                        img.ground_truth
                            .iter()
                            .zip(&gt_pixels)
                            .map(|(g, gp)| {
                                if g.class_id == p.class_id {
                                    iou_sorted(&pix, gp)
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                PreparedImage {
                    image_id: img.image_id.clone(),
                    pred_class: img.predictions.iter().map(|p| p.class_id).collect(),
                    pred_score: img.predictions.iter().map(|p| p.score).collect(),
                    pred_label: img.predictions.iter().map(|p| p.label).collect(),
                    gt_class: img.ground_truth.iter().map(|g| g.class_id).collect(),
                    ious,
                }
            })
            .collect();
        Self { images }
    }

    /// Classes with at least one ground-truth instance, ascending.
    pub fn gt_classes(&self) -> Vec<u16> {
        let set: BTreeSet<u16> = self
            .images
            .iter()
            .flat_map(|i| i.gt_class.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    pub fn match_class(&self, class_id: u16, threshold: f64) -> MatchResult {
        let mut ranked: Vec<(f32, &str, u32, usize, usize)> = Vec::new();
        for (ii, img) in self.images.iter().enumerate() {
            for (pi, &c) in img.pred_class.iter().enumerate() {
                if c == class_id {
                    ranked.push((
                        img.pred_score[pi],
                        &img.image_id,
                        img.pred_label[pi],
                        ii,
                        pi,
                    ));
                }
            }
        }
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.cmp(b.1))
                .then_with(|| a.2.cmp(&b.2))
        });

        let mut matched: Vec<Vec<bool>> = self
            .images
            .iter()
            .map(|i| vec![false; i.gt_class.len()])
            .collect();
        let num_gt = self
            .images
            .iter()
            .map(|i| i.gt_class.iter().filter(|&&c| c == class_id).count())
            .sum();
        let mut true_positives = Vec::with_capacity(ranked.len());
        let mut scores = Vec::with_capacity(ranked.len());
        for &(score, _, _, ii, pi) in &ranked {
            let img = &self.images[ii];
            let mut best: Option<(usize, f64)> = None;
            for (gi, &gc) in img.gt_class.iter().enumerate() {
                if gc != class_id || matched[ii][gi] {
                    continue;
                }
                let v = img.ious[pi][gi];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            let tp = match best {
                Some((gi, v)) if v >= threshold => {
                    matched[ii][gi] = true;
                    true
                }
                _ => false,
            };
            true_positives.push(tp);
            scores.push(score);
        }
        MatchResult {
            true_positives,
            scores,
            num_gt,
        }
    }

    pub fn average_precision(
        &self,
        class_id: u16,
        threshold: f64,
        method: ApMethod,
    ) -> Option<f64> {
        self.match_class(class_id, threshold)
            .average_precision(method)
    }

    pub fn map_at(&self, thresholds: &[f64], method: ApMethod) -> MapTable {
        let classes = self.gt_classes();
        let per_class: Vec<Vec<f64>> = thresholds
            .par_iter()
            .map(|&t| {
                classes
                    .par_iter()
                    .map(|&c| self.average_precision(c, t, method).unwrap_or(0.0))
                    .collect()
            })
            .collect();
        let map = per_class
            .iter()
            .map(|aps| {
                if aps.is_empty() {
                    0.0
                } else {
                    aps.iter().sum::<f64>() / aps.len() as f64
                }
            })
            .collect();
        MapTable {
            thresholds: thresholds.to_vec(),
            classes,
            per_class,
            map,
        }
    }

    /// mAP averaged over IoU 0.50:0.05:0.95.
    pub fn coco_ap(&self, method: ApMethod) -> f64 {
        let table = self.map_at(&coco_thresholds(), method);
        table.map.iter().sum::<f64>() / table.map.len() as f64
    }
}

pub fn map_at(thresholds: &[f64], dataset: &[EvalImage], method: ApMethod) -> MapTable {
    Evaluator::new(dataset).map_at(thresholds, method)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapTable {
    pub thresholds: Vec<f64>,
    /// Classes with at least one ground truth.
    pub classes: Vec<u16>,
    /// `per_class[t][k]` is the AP of `classes[k]` at `thresholds[t]`.
    pub per_class: Vec<Vec<f64>>,
    pub map: Vec<f64>,
}

impl MapTable {
    pub fn threshold_list(&self) -> String {
        self.thresholds
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn mean_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| self.map[i])
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("thresholds: {}\n", self.threshold_list());
        out.push_str(&format!("{:>10} {:>8}", "iou", "mAP"));
        for c in &self.classes {
            out.push_str(&format!(" {:>8}", format!("class_{c}")));
        }
        out.push('\n');
        for (t, (m, aps)) in self
            .thresholds
            .iter()
            .zip(self.map.iter().zip(&self.per_class))
        {
            out.push_str(&format!("{:>10} {:>8.4}", t, m));
            for ap in aps {
                out.push_str(&format!(" {:>8.4}", ap));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iou_threshold".to_string(), "map".to_string()];
        header.extend(self.classes.iter().map(|c| format!("class_{c}")));
        wtr.write_record(&header)?;
        for (t, (m, aps)) in self
            .thresholds
            .iter()
            .zip(self.map.iter().zip(&self.per_class))
        {
            let mut row = vec![t.to_string(), format!("{m:.6}")];
            row.extend(aps.iter().map(|a| format!("{a:.6}")));
            wtr.write_record(&row)?;
        }
        wtr.into_inner()
            .map_err(|e| crate::Error::Io(e.into_error()))
    }
}

/// Loaded evaluation inputs plus the bookkeeping about image ids.
#[derive(Debug)]
pub struct LoadedDataset {
    pub images: Vec<EvalImage>,
    /// Prediction ids without ground truth.
    pub unmatched_predictions: Vec<String>,
    /// Ground-truth ids without a prediction file; evaluated as empty.
    pub missing_predictions: Vec<String>,
}

pub fn load_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<LoadedDataset> {
    let gt_ids = list_image_ids(gt_dir)?;
    let pred_ids = list_image_ids(pred_dir)?;
    let gt_set: HashSet<&String> = gt_ids.iter().collect();
    let pred_set: HashSet<&String> = pred_ids.iter().collect();
    let unmatched_predictions = pred_ids
        .iter()
        .filter(|id| !gt_set.contains(id))
        .cloned()
        .collect();
    let missing_predictions: Vec<String> = gt_ids
        .iter()
        .filter(|id| !pred_set.contains(id))
        .cloned()
        .collect();
    let images = gt_ids
        .par_iter()
        .map(|id| {
            let gt = read_instance_set(gt_dir, id)?;
            let pred = if pred_set.contains(id) {
                read_instance_set(pred_dir, id)?
            } else {
                InstanceSet::empty(id.clone(), gt.height, gt.width)
            };
            check_same_dims((gt.height, gt.width), (pred.height, pred.width))?;
            Ok(EvalImage::new(pred, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        images,
        unmatched_predictions,
        missing_predictions,
    })
}
