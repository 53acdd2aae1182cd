//! Embeddings to viewable images: percentile stretch, channel composition,
//! inversion and PNG export with an embedded provenance record.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::linalg::{percentile_sorted, sorted_copy};

pub const DEFAULT_STRETCH: [f64; 2] = [2.0, 98.0];
/// PNG text-chunk keyword carrying the provenance JSON.
pub const PROVENANCE_KEY: &str = "provenance";

/// Everything needed to regenerate an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub params: serde_json::Value,
    pub components: Vec<usize>,
    /// Absent when values were shown without a stretch.
    pub stretch: Option<[f64; 2]>,
    pub invert: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedImage {
    pub width: usize,
    pub height: usize,
    /// One to three row-major planes with values in `[0,1]`.
    pub channels: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl EnhancedImage {
    pub fn new(width: usize, height: usize, channels: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        if channels.is_empty() || channels.len() > 3 {
            return Err(Error::InvalidInput(format!("{} channels; expected 1 to 3", channels.len())));
        }
        for (c, plane) in channels.iter().enumerate() {
            if plane.len() != width * height {
                return Err(Error::DimensionMismatch(format!(
                    "channel {c} has {} values for a {width}x{height} frame",
                    plane.len()
                )));
            }
            if plane.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!("channel {c} has values outside [0,1]")));
            }
        }
        Ok(EnhancedImage { width, height, channels, provenance })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeOptions {
    /// Embedding components mapped to R, G, B in order (grayscale for one).
    pub components: Vec<usize>,
    pub stretch: [f64; 2],
    pub invert: bool,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions { components: vec![0], stretch: DEFAULT_STRETCH, invert: false }
    }
}

/// Affine map sending percentile `p_lo` to 0 and `p_hi` to 1, clamped.
/// When the two percentiles coincide, values below map to 0, above to 1 and
/// equal to 0.5; a constant plane therefore becomes all 0.5.
pub fn stretch(values: &[f64], p_lo: f64, p_hi: f64) -> Result<Vec<f64>> {
    if !(0.0 <= p_lo && p_lo < p_hi && p_hi <= 100.0) {
        return Err(Error::Config(format!("stretch percentiles ({p_lo}, {p_hi}) must satisfy 0 ≤ lo < hi ≤ 100")));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot stretch non-finite values".into()));
    }
    let sorted = sorted_copy(values);
    let lo = percentile_sorted(&sorted, p_lo);
    let hi = percentile_sorted(&sorted, p_hi);
    let span = hi - lo;
    Ok(values
        .par_iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0)
            } else if v < lo {
                0.0
            } else if v > hi {
                1.0
            } else {
                0.5
            }
        })
        .collect())
}

/// Scatter each embedding row onto its pixel, returning one plane per requested component.
pub fn rasterize(
    embedding: &Embedding,
    pixel_index: &[(u32, u32)],
    width: usize,
    height: usize,
    components: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if pixel_index.len() != embedding.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} pixel indices for {} embedding rows",
            pixel_index.len(),
            embedding.rows()
        )));
    }
    if let Some(&c) = components.iter().find(|&&c| c >= embedding.dims()) {
        return Err(Error::Config(format!(
            "component {c} out of range for a {}-dimensional embedding",
            embedding.dims()
        )));
    }
    let mut seen = vec![false; width * height];
    for &(x, y) in pixel_index {
        let (x, y) = (x as usize, y as usize);
        if x >= width || y >= height {
            return Err(Error::InvalidInput(format!("pixel ({x},{y}) outside {width}x{height} frame")));
        }
        if std::mem::replace(&mut seen[y * width + x], true) {
            return Err(Error::InvalidInput(format!("pixel ({x},{y}) appears twice")));
        }
    }
    if let Some(gap) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "pixel ({},{}) has no embedding row",
            gap % width,
            gap / width
        )));
    }
    Ok(components
        .iter()
        .map(|&c| {
            let mut plane = vec![0.0; width * height];
            for (row, &(x, y)) in pixel_index.iter().enumerate() {
                plane[y as usize * width + x as usize] = embedding.values[(row, c)];
            }
            plane
        })
        .collect())
}

/// Rasterize, stretch per channel and optionally invert selected components.
pub fn compose(
    embedding: &Embedding,
    pixel_index: &[(u32, u32)],
    width: usize,
    height: usize,
    opts: &ComposeOptions,
    method: &str,
    params: serde_json::Value,
) -> Result<EnhancedImage> {
    if opts.components.is_empty() || opts.components.len() > 3 {
        return Err(Error::Config(format!(
            "{} components requested; expected 1 to 3",
            opts.components.len()
        )));
    }
    let planes = rasterize(embedding, pixel_index, width, height, &opts.components)?;
    let mut channels = Vec::with_capacity(planes.len());
    for plane in planes {
        let mut s = stretch(&plane, opts.stretch[0], opts.stretch[1])?;
        if opts.invert {
            s.iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        channels.push(s);
    }
    EnhancedImage::new(
        width,
        height,
        channels,
        Provenance {
            method: method.to_string(),
            params,
            components: opts.components.clone(),
            stretch: Some(opts.stretch),
            invert: opts.invert,
        },
    )
}

/// Round-half-up quantization of a `[0,1]` value onto `0..=max`.
fn quantize(v: f64, max: f64) -> u16 {
    (v.clamp(0.0, 1.0) * max + 0.5).floor() as u16
}

/// PNG bytes: grayscale for one channel, RGB otherwise (missing blue is 0).
/// The provenance JSON is stored in a `tEXt` chunk.
pub fn encode_png(image: &EnhancedImage, bit_depth: u8) -> Result<Vec<u8>> {
    let text = serde_json::to_string(&image.provenance).map_err(|e| Error::json("provenance", e))?;
    encode_planes(&image.channels, image.width, image.height, bit_depth, Some(&text))
}

/// Encode 1 to 3 planes of `[0,1]` values, with an optional provenance text.
pub fn encode_planes(
    channels: &[Vec<f64>],
    width: usize,
    height: usize,
    bit_depth: u8,
    provenance: Option<&str>,
) -> Result<Vec<u8>> {
    let (depth, max) = match bit_depth {
        8 => (png::BitDepth::Eight, 255.0),
        16 => (png::BitDepth::Sixteen, 65535.0),
        other => return Err(Error::Config(format!("unsupported bit depth {other}"))),
    };
    let samples_per_pixel = if channels.len() == 1 { 1 } else { 3 };
    let n = width * height;
    let mut samples = vec![0u16; n * samples_per_pixel];
    for (c, plane) in channels.iter().enumerate() {
        for (i, &v) in plane.iter().enumerate() {
            samples[i * samples_per_pixel + c] = quantize(v, max);
        }
    }
    let bytes: Vec<u8> = match depth {
        png::BitDepth::Sixteen => samples.iter().flat_map(|s| s.to_be_bytes()).collect(),
        _ => samples.iter().map(|&s| s as u8).collect(),
    };
    let mut out = Vec::new();
    let encode_err = |e: png::EncodingError| Error::Numeric(format!("PNG encoding failed: {e}"));
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(if samples_per_pixel == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        encoder.set_depth(depth);
        if let Some(text) = provenance {
            encoder.add_text_chunk(PROVENANCE_KEY.to_string(), text.to_string()).map_err(encode_err)?;
        }
        let mut writer = encoder.write_header().map_err(encode_err)?;
        writer.write_image_data(&bytes).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    Ok(out)
}

/// Write `bytes` to `path` via a sibling temporary file and rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn export_png(image: &EnhancedImage, path: impl AsRef<Path>, bit_depth: u8) -> Result<()> {
    write_atomic(path, &encode_png(image, bit_depth)?)
}

/// Read the provenance text chunk back from PNG bytes.
pub fn read_provenance(bytes: &[u8]) -> Result<Option<String>> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = decoder
        .read_info()
        .map_err(|e| Error::InvalidInput(format!("not a PNG: {e}")))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == PROVENANCE_KEY)
        .map(|t| t.text.clone()))
}

/// Box-average a plane by the smallest integer factor that brings it to at
/// most `max_px` pixels. Returns the plane and its new dimensions.
pub fn downsample(plane: &[f64], width: usize, height: usize, max_px: usize) -> (Vec<f64>, usize, usize) {
    let max_px = max_px.max(1);
    let mut f = 1;
    while width.div_ceil(f) * height.div_ceil(f) > max_px {
        f += 1;
    }
    if f == 1 {
        return (plane.to_vec(), width, height);
    }
    let (w2, h2) = (width.div_ceil(f), height.div_ceil(f));
    let out = (0..w2 * h2)
        .into_par_iter()
        .map(|i| {
            let (bx, by) = (i % w2, i / w2);
            let mut sum = 0.0;
            let mut count = 0usize;
            for y in by * f..((by + 1) * f).min(height) {
                for x in bx * f..((bx + 1) * f).min(width) {
                    sum += plane[y * width + x];
                    count += 1;
                }
            }
            sum / count as f64
        })
        .collect();
    (out, w2, h2)
}
