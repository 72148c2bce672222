//! Marker-controlled priority-flood watershed.
//!
//! Flooding is a bottleneck-path Dijkstra over the 4-neighbour grid: a
//! frontier pixel's priority is the largest cost met on the way from its
//! marker, so every pixel ends up with the marker whose minimax path cost is
//! lowest. Equal priorities pop in insertion order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{check_same_dims, Result};
use crate::raster::{LabelMap, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Entry {
    // bit pattern of a non-negative f32, which orders like the float itself
    priority: u32,
    seq: u64,
    index: u32,
    label: u32,
}

pub fn watershed_flood(cost: &ProbMap, markers: &LabelMap) -> Result<LabelMap> {
    check_same_dims(cost.dims(), markers.dims())?;
    let (h, w) = cost.dims();
    let costs = cost.data();
    let mut out = markers.data().to_vec();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;

    let mut push_neighbours =
        |heap: &mut BinaryHeap<Reverse<Entry>>, out: &[u32], i: usize, level: f32, label: u32| {
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if out[j] == 0 {
                    // costs are validated to [0, 1]; `+ 0.0` folds -0.0
                    let p = level.max(costs[j]) + 0.0;
                    heap.push(Reverse(Entry {
                        priority: p.to_bits(),
                        seq,
                        index: j as u32,
                        label,
                    }));
                    seq += 1;
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r + 1 < h {
                visit(i + w);
            }
        };

    for i in 0..h * w {
        let label = out[i];
        if label != 0 {
            push_neighbours(&mut heap, &out, i, 0.0, label);
        }
    }

    while let Some(Reverse(entry)) = heap.pop() {
        let i = entry.index as usize;
        if out[i] != 0 {
            continue;
        }
        out[i] = entry.label;
        push_neighbours(
            &mut heap,
            &out,
            i,
            f32::from_bits(entry.priority),
            entry.label,
        );
    }

    LabelMap::new(h, w, out)
}
