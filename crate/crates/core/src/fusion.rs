//! Combining class-agnostic instance masks with the semantic map, scoring,
//! and the on-disk instance format (label PNG plus CSV sidecar).

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{check_same_dims, Error, Result};
use crate::raster::{
    encode_label_png, read_label_png, write_atomic, BinaryMask, LabelMap, ProbMap, SemanticMap,
};

pub const CSV_HEADER: [&str; 4] = ["image_id", "label", "class_id", "score"];

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Label of this instance in the label map it came from.
    pub label: u32,
    pub mask: BinaryMask,
    pub class_id: u16,
    pub score: f32,
}

impl Instance {
    pub fn area(&self) -> usize {
        self.mask.count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn empty(image_id: impl Into<String>, height: usize, width: usize) -> Self {
        Self {
            image_id: image_id.into(),
            height,
            width,
            instances: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Label map holding every instance under its own label.
    pub fn to_label_map(&self) -> LabelMap {
        let mut data = vec![0u32; self.height * self.width];
        for inst in &self.instances {
            for (d, &m) in data.iter_mut().zip(inst.mask.data()) {
                if m {
                    *d = inst.label;
                }
            }
        }
        LabelMap::new(self.height, self.width, data).expect("dimensions preserved")
    }
}

/// How instances straddling several semantic classes are classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassRule {
    /// One class per instance by majority vote.
    #[default]
    Majority,
    /// Split each instance into one instance per non-background class.
    SplitByPixel,
}

fn class_histograms(instances: &LabelMap, semantic: &SemanticMap) -> Vec<Vec<usize>> {
    let classes = semantic.data().iter().copied().max().unwrap_or(0) as usize + 1;
    let mut hist = vec![vec![0usize; classes]; instances.max_label() as usize + 1];
    for (&l, &s) in instances.data().iter().zip(semantic.data()) {
        if l != 0 {
            hist[l as usize][s as usize] += 1;
        }
    }
    hist
}

/// Majority class of each instance, ties toward the lowest class id.
/// Instances voted background are dropped. Scores start at 1.
pub fn assign_classes(
    image_id: &str,
    instances: &LabelMap,
    semantic: &SemanticMap,
) -> Result<InstanceSet> {
    assign_classes_with(image_id, instances, semantic, ClassRule::Majority)
}

pub fn assign_classes_with(
    image_id: &str,
    instances: &LabelMap,
    semantic: &SemanticMap,
    rule: ClassRule,
) -> Result<InstanceSet> {
    check_same_dims(instances.dims(), semantic.dims())?;
    let (h, w) = instances.dims();
    let hist = class_histograms(instances, semantic);
    let mut set = InstanceSet::empty(image_id, h, w);
    match rule {
        ClassRule::Majority => {
            for (label, counts) in hist.iter().enumerate().skip(1) {
                let total: usize = counts.iter().sum();
                if total == 0 {
                    continue;
                }
                // max_by_key keeps the last maximum; scan in reverse for the lowest id
                let (class, _) = counts
                    .iter()
                    .enumerate()
                    .rev()
                    .max_by_key(|&(_, &n)| n)
                    .expect("non-empty histogram");
                if class == 0 {
                    continue;
                }
                set.instances.push(Instance {
                    label: label as u32,
                    mask: instances.mask_of(label as u32),
                    class_id: class as u16,
                    score: 1.0,
                });
            }
        }
        ClassRule::SplitByPixel => {
            let mut next = 0u32;
            for (label, counts) in hist.iter().enumerate().skip(1) {
                for (class, &n) in counts.iter().enumerate().skip(1) {
                    if n == 0 {
                        continue;
                    }
                    next += 1;
                    let mask = BinaryMask::from_fn(h, w, |r, c| {
                        instances.get(r, c) == label as u32 && semantic.get(r, c) == class as u16
                    });
                    set.instances.push(Instance {
                        label: next,
                        mask,
                        class_id: class as u16,
                        score: 1.0,
                    });
                }
            }
        }
    }
    Ok(set)
}

/// Scores each instance by the mean of `1 - boundary` over its pixels and
/// sorts by descending score (stable).
pub fn score_instances(mut set: InstanceSet, boundary: &ProbMap) -> Result<InstanceSet> {
    check_same_dims((set.height, set.width), boundary.dims())?;
    for inst in &mut set.instances {
        let (sum, n) = inst
            .mask
            .data()
            .iter()
            .zip(boundary.data())
            .filter(|(&m, _)| m)
            .fold((0.0f64, 0usize), |(s, n), (_, &b)| {
                (s + (1.0 - b as f64), n + 1)
            });
        inst.score = if n == 0 {
            0.0
        } else {
            ((sum / n as f64) as f32).clamp(0.0, 1.0)
        };
    }
    set.instances
        .sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    Ok(set)
}

pub fn png_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.png"))
}

pub fn csv_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.csv"))
}

pub fn encode_instance_csv(set: &InstanceSet) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(CSV_HEADER)?;
    for inst in &set.instances {
        wtr.write_record([
            set.image_id.clone(),
            inst.label.to_string(),
            inst.class_id.to_string(),
            format!("{:.6}", inst.score),
        ])?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `<dir>/<image_id>.png` and `<dir>/<image_id>.csv`.
pub fn write_instance_set(set: &InstanceSet, dir: &Path) -> Result<()> {
    let png = encode_label_png(&set.to_label_map())?;
    write_atomic(&png_path(dir, &set.image_id), &png)?;
    write_atomic(&csv_path(dir, &set.image_id), &encode_instance_csv(set)?)
}

/// Reads the pair written by [`write_instance_set`]. Labels present in the
/// PNG without a CSV row are ignored.
pub fn read_instance_set(dir: &Path, image_id: &str) -> Result<InstanceSet> {
    let labels = read_label_png(png_path(dir, image_id))?;
    let path = csv_path(dir, image_id);
    let mut rdr = csv::Reader::from_reader(fs::File::open(&path)?);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Format(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            CSV_HEADER,
            headers
        )));
    }
    let mut set = InstanceSet::empty(image_id, labels.height(), labels.width());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let bad =
            |what: &str| Error::Format(format!("{}: row {}: bad {what}", path.display(), row + 1));
        if &record[0] != image_id {
            return Err(bad("image_id"));
        }
        let label: u32 = record[1].parse().map_err(|_| bad("label"))?;
        let class_id: u16 = record[2].parse().map_err(|_| bad("class_id"))?;
        let score: f32 = record[3].parse().map_err(|_| bad("score"))?;
        if label == 0 || class_id == 0 || !(0.0..=1.0).contains(&score) {
            return Err(bad("value"));
        }
        set.instances.push(Instance {
            label,
            mask: labels.mask_of(label),
            class_id,
            score,
        });
    }
    Ok(set)
}

/// Image ids that have both a `.png` and a `.csv` in `dir`, sorted.
pub fn list_image_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if png_path(dir, stem).is_file() {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
