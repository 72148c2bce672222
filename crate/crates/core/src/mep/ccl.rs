//! Two-scan connected-component labeling with union-find equivalence
//! merging.

use crate::raster::{BinaryMask, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_number(n: u32) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }

    pub fn as_number(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Disjoint-set forest with union by rank and path compression.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(size: usize) -> Self {
        Self {
            parent: (0..size as u32).collect(),
            rank: vec![0; size],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Adds a singleton set and returns its index.
    pub fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    pub fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`, returning the new root.
    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (hi, lo) = match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => (rb, ra),
            std::cmp::Ordering::Greater => (ra, rb),
            std::cmp::Ordering::Equal => {
                self.rank[ra as usize] += 1;
                (ra, rb)
            }
        };
        self.parent[lo as usize] = hi;
        hi
    }
}

/// Labels the set pixels of `mask`. Components get labels `1..=K` in the
/// raster order of their first pixel; unset pixels get 0.
pub fn ccl_label(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (h, w) = mask.dims();
    let data = mask.data();
    let labels = two_scan(h, w, connectivity, |i| data[i], |_, _| true);
    LabelMap::new(h, w, labels).expect("dimensions preserved")
}

/// Splits every positive label of `labels` into its connected pieces. Two
/// pixels join only when they carry the same input label. Output labels
/// are dense in first-encounter order.
pub fn label_regions(labels: &LabelMap, connectivity: Connectivity) -> LabelMap {
    let (h, w) = labels.dims();
    let data = labels.data();
    let out = two_scan(
        h,
        w,
        connectivity,
        |i| data[i] != 0,
        |i, j| data[i] == data[j],
    );
    LabelMap::new(h, w, out).expect("dimensions preserved")
}

fn two_scan(
    h: usize,
    w: usize,
    connectivity: Connectivity,
    foreground: impl Fn(usize) -> bool,
    joins: impl Fn(usize, usize) -> bool,
) -> Vec<u32> {
    let mut provisional = vec![0u32; h * w];
    // index 0 is a dummy so provisional label `l` maps to set `l`
    let mut sets = DisjointSet::new(1);
    let eight = connectivity == Connectivity::Eight;

    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !foreground(i) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |j: usize| {
                let l = provisional[j];
                if l != 0 && joins(i, j) {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                push(i - 1);
            }
            if r > 0 {
                push(i - w);
                if eight {
                    if c > 0 {
                        push(i - w - 1);
                    }
                    if c + 1 < w {
                        push(i - w + 1);
                    }
                }
            }
            provisional[i] = if n == 0 {
                sets.make_set()
            } else {
                let first = neighbours[0];
                for &other in &neighbours[1..n] {
                    sets.union(first, other);
                }
                first
            };
        }
    }

    let mut dense = vec![0u32; sets.len()];
    let mut next = 0u32;
    for l in provisional.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if dense[root] == 0 {
            next += 1;
            dense[root] = next;
        }
        *l = dense[root];
    }
    provisional
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(h, w, |r, c| rows[r].as_bytes()[c] == b'#')
    }

    #[test]
    fn split_by_unset_row() {
        let m = mask(&["####", "####", "....", "####"]);
        let l = ccl_label(&m, Connectivity::Four);
        assert_eq!(l.data(), &[1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 2, 2, 2, 2]);
    }

    #[test]
    fn diagonal_chain() {
        let m = mask(&["#...", ".#..", "..#.", "...#"]);
        let four = ccl_label(&m, Connectivity::Four);
        assert_eq!(four.max_label(), 4);
        assert_eq!(four.get(3, 3), 4);
        let eight = ccl_label(&m, Connectivity::Eight);
        assert_eq!(eight.max_label(), 1);
    }

    #[test]
    fn u_shape_merges_late() {
        // the two arms only meet on the last row
        let m = mask(&["#.#", "#.#", "###"]);
        let l = ccl_label(&m, Connectivity::Four);
        assert_eq!(l.max_label(), 1);
        assert_eq!(l.num_labels(), 1);
    }

    #[test]
    fn anti_diagonal_needs_ne_neighbour() {
        let m = mask(&["..#", ".#.", "#.."]);
        assert_eq!(ccl_label(&m, Connectivity::Eight).max_label(), 1);
        assert_eq!(ccl_label(&m, Connectivity::Four).max_label(), 3);
    }

    #[test]
    fn labels_follow_first_encounter_order() {
        let m = mask(&["..#", "#.#", "#.."]);
        let l = ccl_label(&m, Connectivity::Four);
        assert_eq!(l.get(0, 2), 1);
        assert_eq!(l.get(1, 0), 2);
    }

    #[test]
    fn regions_respect_labels() {
        let l = LabelMap::new(2, 4, vec![1, 1, 2, 2, 1, 0, 0, 1]).unwrap();
        let out = label_regions(&l, Connectivity::Four);
        assert_eq!(out.data(), &[1, 1, 2, 2, 1, 0, 0, 3]);
        let out8 = label_regions(&l, Connectivity::Eight);
        assert_eq!(out8.data(), &[1, 1, 2, 2, 1, 0, 0, 3]);
    }

    proptest! {
        #[test]
        fn find_is_idempotent_and_union_joins(
            pairs in proptest::collection::vec((0u32..32, 0u32..32), 0..64)
        ) {
            let mut ds = DisjointSet::new(32);
            for &(a, b) in &pairs {
                ds.union(a, b);
                prop_assert_eq!(ds.find(a), ds.find(b));
            }
            for x in 0..32 {
                let r = ds.find(x);
                prop_assert_eq!(ds.find(r), r);
            }
        }
    }
}
