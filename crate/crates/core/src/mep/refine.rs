//! Refinement pass: per-instance closing, semantic filtering and removal of
//! small components.

use super::ccl::{label_regions, Connectivity};
use crate::error::{check_same_dims, Result};
use crate::raster::{LabelMap, SemanticMap};

/// Pieces of an instance that end up disconnected after filtering are split
/// with this connectivity before the area test.
pub const SPLIT_CONNECTIVITY: Connectivity = Connectivity::Eight;

/// Separable square min/max filter over a `win_h x win_w` window. Neighbours
/// outside the window are ignored.
fn square_filter(
    src: &[bool],
    win_w: usize,
    win_h: usize,
    radius: usize,
    dilate: bool,
) -> Vec<bool> {
    let mut tmp = vec![false; src.len()];
    for r in 0..win_h {
        let row = &src[r * win_w..(r + 1) * win_w];
        for c in 0..win_w {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(win_w - 1);
            let span = &row[lo..=hi];
            tmp[r * win_w + c] = if dilate {
                span.iter().any(|&b| b)
            } else {
                span.iter().all(|&b| b)
            };
        }
    }
    let mut out = vec![false; src.len()];
    for c in 0..win_w {
        for r in 0..win_h {
            let lo = r.saturating_sub(radius);
            let hi = (r + radius).min(win_h - 1);
            let mut iter = (lo..=hi).map(|rr| tmp[rr * win_w + c]);
            out[r * win_w + c] = if dilate {
                iter.any(|b| b)
            } else {
                iter.all(|b| b)
            };
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct BBox {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

fn bounding_boxes(labels: &LabelMap) -> Vec<Option<BBox>> {
    let w = labels.width();
    let mut boxes: Vec<Option<BBox>> = vec![None; labels.max_label() as usize + 1];
    for (i, &l) in labels.data().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (r, c) = (i / w, i % w);
        let b = boxes[l as usize].get_or_insert(BBox {
            r0: r,
            r1: r,
            c0: c,
            c1: c,
        });
        b.r0 = b.r0.min(r);
        b.r1 = b.r1.max(r);
        b.c0 = b.c0.min(c);
        b.c1 = b.c1.max(c);
    }
    boxes
}

/// Closes each instance's mask independently with a square structuring
/// element of side `2 * radius + 1`, as if the image were surrounded by
/// unset pixels. A pixel claimed by several closed masks goes to the lowest
/// label.
pub fn close_instances(labels: &LabelMap, radius: usize) -> LabelMap {
    if radius == 0 {
        return labels.clone();
    }
    let (h, w) = labels.dims();
    let data = labels.data();
    let mut out = vec![0u32; h * w];
    for (label, bbox) in bounding_boxes(labels).into_iter().enumerate() {
        let Some(b) = bbox else { continue };
        let label = label as u32;
        // closing stays within bbox + r, and erosion there reads bbox + 2r;
        // the window may hang over the image edge
        let pad = 2 * radius as isize;
        let r0 = b.r0 as isize - pad;
        let c0 = b.c0 as isize - pad;
        let win_h = (b.r1 - b.r0) + 1 + 4 * radius;
        let win_w = (b.c1 - b.c0) + 1 + 4 * radius;
        let to_image = |r: usize, c: usize| -> Option<usize> {
            let (ir, ic) = (r0 + r as isize, c0 + c as isize);
            (ir >= 0 && ic >= 0 && (ir as usize) < h && (ic as usize) < w)
                .then(|| ir as usize * w + ic as usize)
        };
        let mut window = vec![false; win_h * win_w];
        for r in 0..win_h {
            for c in 0..win_w {
                if let Some(i) = to_image(r, c) {
                    window[r * win_w + c] = data[i] == label;
                }
            }
        }
        let dilated = square_filter(&window, win_w, win_h, radius, true);
        let closed = square_filter(&dilated, win_w, win_h, radius, false);
        for r in 0..win_h {
            for c in 0..win_w {
                if !closed[r * win_w + c] {
                    continue;
                }
                if let Some(i) = to_image(r, c) {
                    if out[i] == 0 {
                        out[i] = label;
                    }
                }
            }
        }
    }
    LabelMap::new(h, w, out).expect("dimensions preserved")
}

/// Clears instance pixels that fall on semantic background.
pub fn filter_by_semantic(labels: &LabelMap, semantic: &SemanticMap) -> Result<LabelMap> {
    check_same_dims(labels.dims(), semantic.dims())?;
    let data = labels
        .data()
        .iter()
        .zip(semantic.data())
        .map(|(&l, &s)| if s == 0 { 0 } else { l })
        .collect();
    LabelMap::new(labels.height(), labels.width(), data)
}

/// Splits instances into connected pieces, deletes pieces smaller than
/// `min_area` pixels and renumbers the survivors densely.
pub fn remove_small_components(labels: &LabelMap, min_area: usize) -> LabelMap {
    let regions = label_regions(labels, SPLIT_CONNECTIVITY);
    let areas = regions.areas();
    let data: Vec<u32> = regions
        .data()
        .iter()
        .map(|&l| {
            if l != 0 && areas[l as usize] < min_area {
                0
            } else {
                l
            }
        })
        .collect();
    LabelMap::new(labels.height(), labels.width(), data)
        .expect("dimensions preserved")
        .relabel_dense()
}

/// Full refinement: closing, semantic filter, area filter.
pub fn refine(
    instances: &LabelMap,
    semantic: &SemanticMap,
    closing_radius: usize,
    min_area: usize,
) -> Result<LabelMap> {
    check_same_dims(instances.dims(), semantic.dims())?;
    let closed = close_instances(instances, closing_radius);
    let filtered = filter_by_semantic(&closed, semantic)?;
    Ok(remove_small_components(&filtered, min_area))
}
