//! Raster containers and their on-disk formats.
//!
//! All rasters are row-major and immutable once built. Float rasters are
//! stored as `BFR1` files (4 magic bytes, `u32` LE height, `u32` LE width,
//! then `height * width` little-endian `f32` values). Label and semantic maps
//! are single-channel 8/16-bit PNGs, written as 16-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const BFR_MAGIC: &[u8; 4] = b"BFR1";

macro_rules! raster_common {
    ($name:ident, $elem:ty) => {
        impl $name {
            #[inline]
            pub fn height(&self) -> usize {
                self.height
            }

            #[inline]
            pub fn width(&self) -> usize {
                self.width
            }

            #[inline]
            pub fn dims(&self) -> (usize, usize) {
                (self.height, self.width)
            }

            #[inline]
            pub fn len(&self) -> usize {
                self.data.len()
            }

            #[inline]
            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            #[inline]
            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            #[inline]
            pub fn get(&self, row: usize, col: usize) -> $elem {
                self.data[row * self.width + col]
            }
        }
    };
}

fn check_len(height: usize, width: usize, len: usize) -> Result<()> {
    match height.checked_mul(width) {
        Some(n) if n == len => Ok(()),
        _ => Err(Error::Validation(format!(
            "{height}x{width} raster needs {} values, got {len}",
            height.saturating_mul(width)
        ))),
    }
}

/// Per-pixel probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

raster_common!(ProbMap, f32);

impl ProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_len(height, width, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }
}

/// Instance labels; `0` is background or unassigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

raster_common!(LabelMap, u32);

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        check_len(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct positive labels.
    pub fn num_labels(&self) -> usize {
        let mut seen = vec![false; self.max_label() as usize + 1];
        let mut n = 0;
        for &l in &self.data {
            if l != 0 && !seen[l as usize] {
                seen[l as usize] = true;
                n += 1;
            }
        }
        n
    }

    /// True when the positive labels present are exactly `1..=K`.
    pub fn is_dense(&self) -> bool {
        self.num_labels() == self.max_label() as usize
    }

    /// Renumbers positive labels to `1..=K` in first-encounter raster order.
    pub fn relabel_dense(&self) -> LabelMap {
        LabelMap {
            height: self.height,
            width: self.width,
            data: relabel_dense(&self.data),
        }
    }

    /// Pixel count per label, indexed by label (index 0 counts background).
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.max_label() as usize + 1];
        for &l in &self.data {
            areas[l as usize] += 1;
        }
        areas
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&l| l == label).collect(),
        }
    }
}

pub(crate) fn relabel_dense(labels: &[u32]) -> Vec<u32> {
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut map = vec![0u32; max + 1];
    let mut next = 0u32;
    labels
        .iter()
        .map(|&l| {
            if l == 0 {
                return 0;
            }
            let slot = &mut map[l as usize];
            if *slot == 0 {
                next += 1;
                *slot = next;
            }
            *slot
        })
        .collect()
}

/// Semantic class ids; `0` is background, `1..=num_classes` are objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    data: Vec<u16>,
    num_classes: u16,
}

raster_common!(SemanticMap, u16);

impl SemanticMap {
    /// Builds a map whose declared class count is the largest id present.
    pub fn new(height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        let max = data.iter().copied().max().unwrap_or(0);
        Self::with_num_classes(height, width, data, max)
    }

    pub fn with_num_classes(
        height: usize,
        width: usize,
        data: Vec<u16>,
        num_classes: u16,
    ) -> Result<Self> {
        check_len(height, width, data.len())?;
        if let Some((index, &c)) = data.iter().enumerate().find(|(_, &c)| c > num_classes) {
            return Err(Error::Validation(format!(
                "pixel {index} has class {c}, but only {num_classes} classes are declared"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

raster_common!(BinaryMask, bool);

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        check_len(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    /// Indices of set pixels, ascending.
    pub fn indices(&self) -> Vec<u32> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i as u32))
            .collect()
    }
}

fn reject_degenerate(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        Err(Error::Degenerate { height, width })
    } else {
        Ok(())
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn encode_float_raster(map: &ProbMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * map.len());
    out.extend_from_slice(BFR_MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_float_raster(mut reader: impl Read) -> Result<ProbMap> {
    let mut header = [0u8; 12];
    reader.read_exact(&mut header)?;
    if &header[..4] != BFR_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &header[..4],
            BFR_MAGIC
        )));
    }
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    reject_degenerate(height, width)?;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::Format(format!("{height}x{width} raster is too large")))?;
    let mut payload = vec![0u8; n * 4];
    reader.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ProbMap::new(height, width, data)
}

pub fn read_float_raster(path: impl AsRef<Path>) -> Result<ProbMap> {
    decode_float_raster(BufReader::new(File::open(path)?))
}

pub fn write_float_raster(map: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    reject_degenerate(map.height, map.width)?;
    write_atomic(path.as_ref(), &encode_float_raster(map))
}

/// Decodes a single-channel 8/16-bit PNG into `(height, width, samples)`.
fn decode_gray_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(Error::Format(format!(
            "{}: expected single-channel grayscale PNG, found {color:?}",
            path.display()
        )));
    }
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::Format("PNG too large".into()))?
    ];
    let info = reader.next_frame(&mut buf)?;
    let (width, height) = (info.width as usize, info.height as usize);
    reject_degenerate(height, width)?;
    let bytes = &buf[..info.buffer_size()];
    let samples = match depth {
        png::BitDepth::Eight => bytes.iter().map(|&b| b as u16).collect(),
        png::BitDepth::Sixteen => bytes
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported bit depth {other:?}, expected 8 or 16",
                path.display()
            )))
        }
    };
    Ok((height, width, samples))
}

fn encode_gray16_png(height: usize, width: usize, samples: &[u16]) -> Result<Vec<u8>> {
    reject_degenerate(height, width)?;
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder.write_header()?;
        let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_be_bytes()).collect();
        writer.write_image_data(&bytes)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (height, width, samples) = decode_gray_png(path.as_ref())?;
    LabelMap::new(height, width, samples.into_iter().map(u32::from).collect())
}

pub fn encode_label_png(map: &LabelMap) -> Result<Vec<u8>> {
    let samples = map
        .data
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::LabelOverflow { label: l }))
        .collect::<Result<Vec<_>>>()?;
    encode_gray16_png(map.height, map.width, &samples)
}

pub fn write_label_png(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_label_png(map)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_semantic_png(path: impl AsRef<Path>) -> Result<SemanticMap> {
    let (height, width, samples) = decode_gray_png(path.as_ref())?;
    SemanticMap::new(height, width, samples)
}

pub fn write_semantic_png(map: &SemanticMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_gray16_png(map.height, map.width, &map.data)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes any encodable PNG through a buffered writer; used by tests that
/// need non-grayscale inputs.
#[doc(hidden)]
pub fn write_raw_png(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width, height);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()?;
    Ok(())
}
