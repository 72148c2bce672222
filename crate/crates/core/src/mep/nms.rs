//! Non-maximum suppression along the gradient direction ("edge thinning").

use crate::raster::{BinaryMask, ProbMap};

/// tan(22.5°)
const TAN_22_5: f32 = 0.414_213_57;

/// Quantized gradient direction; each variant names the neighbour offset
/// `(drow, dcol)` compared against on one side (the opposite side is the
/// negated offset).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl Direction {
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::Deg0 => (0, 1),
            Direction::Deg45 => (1, 1),
            Direction::Deg90 => (1, 0),
            Direction::Deg135 => (1, -1),
        }
    }

    /// `gx` is the column derivative, `gy` the row derivative (rows grow
    /// downwards). A zero gradient maps to `Deg0`.
    pub fn quantize(gx: f32, gy: f32) -> Direction {
        let (ax, ay) = (gx.abs(), gy.abs());
        if ay <= TAN_22_5 * ax {
            Direction::Deg0
        } else if ax <= TAN_22_5 * ay {
            Direction::Deg90
        } else if (gx > 0.0) == (gy > 0.0) {
            Direction::Deg45
        } else {
            Direction::Deg135
        }
    }
}

/// Central-difference gradient with replicated borders.
pub(crate) fn gradient_at(map: &ProbMap, r: usize, c: usize) -> (f32, f32) {
    let (h, w) = map.dims();
    let left = map.get(r, c.saturating_sub(1));
    let right = map.get(r, (c + 1).min(w - 1));
    let up = map.get(r.saturating_sub(1), c);
    let down = map.get((r + 1).min(h - 1), c);
    ((right - left) * 0.5, (down - up) * 0.5)
}

/// Keeps pixels that reach `threshold` and are not smaller than either
/// neighbour along their quantized gradient direction. Out-of-bounds
/// neighbours never suppress.
pub fn nms_thin(boundary: &ProbMap, threshold: f32) -> BinaryMask {
    let (h, w) = boundary.dims();
    let neighbour = |r: usize, c: usize, dr: isize, dc: isize| -> Option<f32> {
        let rr = r as isize + dr;
        let cc = c as isize + dc;
        (rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w)
            .then(|| boundary.get(rr as usize, cc as usize))
    };
    BinaryMask::from_fn(h, w, |r, c| {
        let v = boundary.get(r, c);
        if v < threshold {
            return false;
        }
        let (gx, gy) = gradient_at(boundary, r, c);
        let (dr, dc) = Direction::quantize(gx, gy).offset();
        let fwd = neighbour(r, c, dr, dc).unwrap_or(f32::NEG_INFINITY);
        let back = neighbour(r, c, -dr, -dc).unwrap_or(f32::NEG_INFINITY);
        v >= fwd && v >= back
    })
}
