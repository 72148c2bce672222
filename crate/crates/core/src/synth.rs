//! Synthetic scenes: non-overlapping shapes rendered to a ground-truth
//! instance set, a semantic map and a blurred contour map standing in for a
//! predicted boundary map.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{write_instance_set, Instance, InstanceSet};
use crate::raster::{
    write_atomic, write_float_raster, write_semantic_png, BinaryMask, ProbMap, SemanticMap,
};

/// Attempts per instance before a spec is declared infeasible.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Shapes keep this many pixels clear of the image border.
pub const BORDER_MARGIN: usize = 2;
pub const MANIFEST_HEADER: [&str; 4] = ["image_id", "label", "class_id", "area"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Blob,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rect" | "rectangle" => Ok(Self::Rectangle),
            "ellipse" => Ok(Self::Ellipse),
            "blob" => Ok(Self::Blob),
            other => Err(Error::Validation(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub shapes: Vec<ShapeKind>,
    pub num_classes: u16,
    /// Minimum Chebyshev gap in pixels between two shapes.
    pub min_separation: usize,
    /// Range of shape extents (side or diameter) in pixels.
    pub min_size: usize,
    pub max_size: usize,
    pub contour_blur: f64,
    pub noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 416,
            width: 416,
            min_instances: 3,
            max_instances: 6,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Blob],
            num_classes: 3,
            min_separation: 4,
            min_size: 20,
            max_size: 60,
            contour_blur: 1.0,
            noise: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.height == 0 || self.width == 0 {
            return fail(format!(
                "image size {}x{} is empty",
                self.height, self.width
            ));
        }
        if self.min_instances > self.max_instances {
            return fail(format!(
                "instance range {}..={} is empty",
                self.min_instances, self.max_instances
            ));
        }
        if self.shapes.is_empty() {
            return fail("shape palette is empty".into());
        }
        if self.num_classes == 0 {
            return fail("need at least one class".into());
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return fail(format!(
                "size range {}..={} is invalid",
                self.min_size, self.max_size
            ));
        }
        for (name, v) in [("contour blur", self.contour_blur), ("noise", self.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub boundary: ProbMap,
    pub semantic: SemanticMap,
    pub ground_truth: InstanceSet,
    /// Pixels with a 4-neighbour of a different instance label.
    pub contour: BinaryMask,
}

pub fn scene_id(index: u64) -> String {
    format!("scene_{index:04}")
}

/// Scene PRNG: the master seed selects the key, the scene index the stream.
pub fn scene_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    generate_indexed(seed, 0, spec)
}

pub fn generate_indexed(master_seed: u64, index: u64, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = scene_rng(master_seed, index);
    let (h, w) = (spec.height, spec.width);
    let count = rng.random_range(spec.min_instances..=spec.max_instances);

    let mut labels = vec![0u32; h * w];
    let mut semantic = vec![0u16; h * w];
    let mut forbidden = vec![false; h * w];
    let mut classes = Vec::with_capacity(count);
    for i in 0..count {
        let label = i as u32 + 1;
        let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
        let class_id = rng.random_range(1..=spec.num_classes);
        let pixels = (0..MAX_PLACEMENT_ATTEMPTS)
            .find_map(|_| {
                let shape = Shape::sample(kind, spec, &mut rng);
                let pixels = shape.place(h, w, &mut rng)?;
                (!pixels.is_empty() && pixels.iter().all(|&p| !forbidden[p])).then_some(pixels)
            })
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "could not place instance {} of {count} in scene {index} after {MAX_PLACEMENT_ATTEMPTS} attempts",
                    i + 1
                ))
            })?;
        for &p in &pixels {
            labels[p] = label;
            semantic[p] = class_id;
        }
        block_around(&mut forbidden, &pixels, h, w, spec.min_separation);
        classes.push(class_id);
    }

    let contour = contour_mask(&labels, h, w);
    let boundary = render_boundary(&contour, h, w, spec, &mut rng)?;
    let mut gt = InstanceSet::empty(scene_id(index), h, w);
    for (i, &class_id) in classes.iter().enumerate() {
        let label = i as u32 + 1;
        gt.instances.push(Instance {
            label,
            mask: BinaryMask::new(h, w, labels.iter().map(|&l| l == label).collect())?,
            class_id,
            score: 1.0,
        });
    }
    Ok(Scene {
        boundary,
        semantic: SemanticMap::with_num_classes(h, w, semantic, spec.num_classes)?,
        ground_truth: gt,
        contour: BinaryMask::new(h, w, contour)?,
    })
}

enum Shape {
    /// Half extents.
    Rectangle { a: f64, b: f64 },
    /// Semi-axes and rotation.
    Ellipse { a: f64, b: f64, theta: f64 },
    /// Closed polygon around the origin.
    Blob { vertices: Vec<(f64, f64)> },
}

impl Shape {
    fn sample(kind: ShapeKind, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Shape {
        let (lo, hi) = (spec.min_size as f64, spec.max_size as f64);
        let mut size = || rng.random_range(lo..=hi) / 2.0;
        match kind {
            ShapeKind::Rectangle => {
                let (a, b) = (size(), size());
                Shape::Rectangle { a, b }
            }
            ShapeKind::Ellipse => {
                let (a, b) = (size(), size());
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                Shape::Ellipse { a, b, theta }
            }
            ShapeKind::Blob => {
                let r0 = size();
                let n = 8;
                let base = rng.random_range(0.0..std::f64::consts::TAU);
                let mut vertices: Vec<(f64, f64)> = (0..n)
                    .map(|k| {
                        let step = std::f64::consts::TAU / n as f64;
                        let t = base + k as f64 * step + rng.random_range(-0.3..0.3) * step;
                        let r = r0 * rng.random_range(0.55..=1.0);
                        (r * t.sin(), r * t.cos())
                    })
                    .collect();
                for _ in 0..3 {
                    vertices = subdivide(&vertices);
                }
                Shape::Blob { vertices }
            }
        }
    }

    /// Half extent of an axis-aligned box containing the shape.
    fn reach(&self) -> f64 {
        match self {
            Shape::Rectangle { a, b } => a.max(*b),
            Shape::Ellipse { a, b, .. } => a.max(*b),
            Shape::Blob { vertices } => vertices
                .iter()
                .map(|&(y, x)| y.abs().max(x.abs()))
                .fold(0.0, f64::max),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Rectangle { a, b } => y.abs() <= *a && x.abs() <= *b,
            Shape::Ellipse { a, b, theta } => {
                let (s, c) = theta.sin_cos();
                let u = x * c + y * s;
                let v = -x * s + y * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Blob { vertices } => point_in_polygon(vertices, y, x),
        }
    }

    /// Picks a centre keeping the shape inside the margin and returns the
    /// covered pixel indices, or `None` when the image is too small.
    fn place(&self, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        let reach = self.reach().ceil() as usize;
        let lo = BORDER_MARGIN + reach;
        let (hi_r, hi_c) = (h.checked_sub(1 + lo)?, w.checked_sub(1 + lo)?);
        if hi_r < lo || hi_c < lo {
            return None;
        }
        let cy = rng.random_range(lo..=hi_r);
        let cx = rng.random_range(lo..=hi_c);
        let mut pixels = Vec::new();
        for r in cy - reach..=cy + reach {
            for c in cx - reach..=cx + reach {
                if self.contains(r as f64 - cy as f64, c as f64 - cx as f64) {
                    pixels.push(r * w + c);
                }
            }
        }
        Some(pixels)
    }
}

/// One round of midpoint subdivision: insert edge midpoints, then move each
/// original vertex halfway toward the average of its two new neighbours.
fn subdivide(poly: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = poly.len();
    let mid = |i: usize| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0)
    };
    let mut out = Vec::with_capacity(2 * n);
    for (i, &v) in poly.iter().enumerate() {
        let (p, q) = (mid((i + n - 1) % n), mid(i));
        out.push(((2.0 * v.0 + p.0 + q.0) / 4.0, (2.0 * v.1 + p.1 + q.1) / 4.0));
        out.push(q);
    }
    out
}

/// Even-odd rule.
fn point_in_polygon(poly: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn block_around(forbidden: &mut [bool], pixels: &[usize], h: usize, w: usize, gap: usize) {
    for &p in pixels {
        let (r, c) = (p / w, p % w);
        for rr in r.saturating_sub(gap)..=(r + gap).min(h - 1) {
            for cc in c.saturating_sub(gap)..=(c + gap).min(w - 1) {
                forbidden[rr * w + cc] = true;
            }
        }
    }
}

fn contour_mask(labels: &[u32], h: usize, w: usize) -> Vec<bool> {
    (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let l = labels[i];
            (r > 0 && labels[i - w] != l)
                || (r + 1 < h && labels[i + w] != l)
                || (c > 0 && labels[i - 1] != l)
                || (c + 1 < w && labels[i + 1] != l)
        })
        .collect()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable convolution; pixels outside the image count as zero.
fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let d = j as isize - radius;
                    let (rr, cc) = if horizontal {
                        (r as isize, c as isize + d)
                    } else {
                        (r as isize + d, c as isize)
                    };
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        acc += kv * src[rr as usize * w + cc as usize];
                    }
                }
                out[r * w + c] = acc;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn render_boundary(
    contour: &[bool],
    h: usize,
    w: usize,
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ProbMap> {
    let mut values: Vec<f64> = contour.iter().map(|&b| f64::from(u8::from(b))).collect();
    if spec.contour_blur > 0.0 {
        values = blur(&values, h, w, spec.contour_blur);
        let peak = values.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            values.iter_mut().for_each(|v| *v /= peak);
        }
    }
    if spec.noise > 0.0 {
        let normal =
            Normal::new(0.0, spec.noise).map_err(|e| Error::Validation(format!("noise: {e}")))?;
        for v in &mut values {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    ProbMap::new(h, w, values.into_iter().map(|v| v as f32).collect())
}

/// Generates scenes `0..n` in parallel.
pub fn generate_dataset(master_seed: u64, n: u64, spec: &SceneSpec) -> Result<Vec<Scene>> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_indexed(master_seed, i, spec))
        .collect()
}

pub fn encode_manifest(scenes: &[Scene]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(MANIFEST_HEADER)?;
    for scene in scenes {
        let gt = &scene.ground_truth;
        for inst in &gt.instances {
            wtr.write_record([
                gt.image_id.clone(),
                inst.label.to_string(),
                inst.class_id.to_string(),
                inst.area().to_string(),
            ])?;
        }
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `boundary/<id>.bfr`, `semantic/<id>.png`, `gt/<id>.{png,csv}` and
/// `manifest.csv` under `out`.
pub fn write_dataset(out: &Path, scenes: &[Scene]) -> Result<()> {
    let (bdir, sdir, gdir) = (out.join("boundary"), out.join("semantic"), out.join("gt"));
    for d in [&bdir, &sdir, &gdir] {
        fs::create_dir_all(d)?;
    }
    scenes.par_iter().try_for_each(|scene| {
        let id = &scene.ground_truth.image_id;
        write_float_raster(&scene.boundary, bdir.join(format!("{id}.bfr")))?;
        write_semantic_png(&scene.semantic, sdir.join(format!("{id}.png")))?;
        write_instance_set(&scene.ground_truth, &gdir)
    })?;
    write_atomic(&out.join("manifest.csv"), &encode_manifest(scenes)?)
}
