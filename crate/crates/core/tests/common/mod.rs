//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use instaseg::eval::EvalImage;
use instaseg::mep::Connectivity;
use instaseg::{BinaryMask, LabelMap, ProbMap};
use rand::Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_instaseg"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// File name to contents for every file below `dir`.
pub fn dir_snapshot(dir: &Path) -> HashMap<PathBuf, Vec<u8>> {
    let mut out = HashMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.random_bool(density))
}

fn offsets(conn: Connectivity) -> &'static [(isize, isize)] {
    match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    }
}

/// Breadth-first flood-fill labeling.
pub fn bfs_label(mask: &BinaryMask, conn: Connectivity) -> Vec<u32> {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in offsets(conn) {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    labels
}

/// True when the two labelings agree up to a bijection of non-zero labels.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        if (x == 0) != (y == 0) {
            return false;
        }
        x == 0 || (*fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
    })
}

/// For each marker label, the smallest achievable maximum cost over a
/// 4-connected path from its markers to each pixel, excluding the source
/// pixel and never crossing another label's marker. Computed by repeated
/// relaxation until nothing changes.
pub fn minimax_costs(cost: &ProbMap, markers: &LabelMap) -> HashMap<u32, Vec<f64>> {
    let (h, w) = cost.dims();
    let labels: std::collections::BTreeSet<u32> =
        markers.data().iter().copied().filter(|&l| l != 0).collect();
    let mut out = HashMap::new();
    for &label in &labels {
        let mut d = vec![f64::INFINITY; h * w];
        for (i, &m) in markers.data().iter().enumerate() {
            if m == label {
                d[i] = 0.0;
            }
        }
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..h * w {
                let m = markers.data()[i];
                if m != 0 {
                    continue;
                }
                let (r, c) = (i / w, i % w);
                let mut best = d[i];
                let mut consider = |j: usize| {
                    let cand = d[j].max(cost.data()[i] as f64);
                    if cand < best {
                        best = cand;
                    }
                };
                if r > 0 {
                    consider(i - w);
                }
                if r + 1 < h {
                    consider(i + w);
                }
                if c > 0 {
                    consider(i - 1);
                }
                if c + 1 < w {
                    consider(i + 1);
                }
                if best < d[i] {
                    d[i] = best;
                    changed = true;
                }
            }
        }
        out.insert(label, d);
    }
    out
}

/// Naive AP for one class: IoUs computed on the fly, greedy matching over an
/// explicitly sorted list, AP as the mean over ground truths of the best
/// precision at or after each true positive's rank.
pub fn brute_force_ap(images: &[EvalImage], class_id: u16, threshold: f64) -> Option<f64> {
    let num_gt: usize = images
        .iter()
        .map(|img| {
            img.ground_truth
                .iter()
                .filter(|g| g.class_id == class_id)
                .count()
        })
        .sum();
    if num_gt == 0 {
        return None;
    }
    let mut preds = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        for (pi, p) in img.predictions.iter().enumerate() {
            if p.class_id == class_id {
                preds.push((ii, pi));
            }
        }
    }
    preds.sort_by(|&(ia, pa), &(ib, pb)| {
        let (a, b) = (&images[ia], &images[ib]);
        let (x, y) = (&a.predictions[pa], &b.predictions[pb]);
        y.score
            .partial_cmp(&x.score)
            .unwrap()
            .then(a.image_id.cmp(&b.image_id))
            .then(x.label.cmp(&y.label))
    });
    let mut used: Vec<Vec<bool>> = images
        .iter()
        .map(|i| vec![false; i.ground_truth.len()])
        .collect();
    let mut flags = Vec::new();
    for &(ii, pi) in &preds {
        let img = &images[ii];
        let pred = &img.predictions[pi];
        let mut best_iou = -1.0;
        let mut best_g = None;
        for (gi, g) in img.ground_truth.iter().enumerate() {
            if g.class_id != class_id || used[ii][gi] {
                continue;
            }
            let inter = pred
                .mask
                .data()
                .iter()
                .zip(g.mask.data())
                .filter(|(a, b)| **a && **b)
                .count();
            let union = pred
                .mask
                .data()
                .iter()
                .zip(g.mask.data())
                .filter(|(a, b)| **a || **b)
                .count();
            let iou = if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            };
            if iou > best_iou {
                best_iou = iou;
                best_g = Some(gi);
            }
        }
        let tp = best_g.is_some() && best_iou >= threshold;
        if tp {
            used[ii][best_g.unwrap()] = true;
        }
        flags.push(tp);
    }
    let precision: Vec<f64> = flags
        .iter()
        .scan(0usize, |hits, &t| {
            *hits += t as usize;
            Some(*hits)
        })
        .enumerate()
        .map(|(k, hits)| hits as f64 / (k + 1) as f64)
        .collect();
    let total: f64 = (0..flags.len())
        .filter(|&k| flags[k])
        .map(|k| precision[k..].iter().copied().fold(0.0, f64::max))
        .sum();
    Some(total / num_gt as f64)
}

/// Brute-force NMS: direction from `atan2`, binned into 45 degree sectors.
pub fn nms_oracle(map: &ProbMap, threshold: f32) -> BinaryMask {
    let (h, w) = map.dims();
    let at = |r: isize, c: isize| -> Option<f32> {
        (r >= 0 && c >= 0 && r < h as isize && c < w as isize)
            .then(|| map.get(r as usize, c as usize))
    };
    BinaryMask::from_fn(h, w, |r, c| {
        let v = map.get(r, c);
        if v < threshold {
            return false;
        }
        let clamp = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;
        let (ri, ci) = (r as isize, c as isize);
        let gx = (map.get(r, clamp(ci + 1, w)) - map.get(r, clamp(ci - 1, w))) * 0.5;
        let gy = (map.get(clamp(ri + 1, h), c) - map.get(clamp(ri - 1, h), c)) * 0.5;
        let mut deg = (gy as f64).atan2(gx as f64).to_degrees();
        if deg < 0.0 {
            deg += 180.0;
        }
        if deg >= 180.0 {
            deg -= 180.0;
        }
        let (dr, dc) = if !(22.5..157.5).contains(&deg) {
            (0, 1)
        } else if deg < 67.5 {
            (1, 1)
        } else if deg < 112.5 {
            (1, 0)
        } else {
            (1, -1)
        };
        let fwd = at(ri + dr, ci + dc).unwrap_or(f32::NEG_INFINITY);
        let back = at(ri - dr, ci - dc).unwrap_or(f32::NEG_INFINITY);
        v >= fwd && v >= back
    })
}
