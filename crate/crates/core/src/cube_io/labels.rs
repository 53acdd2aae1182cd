use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASS_OVERTEXT: u8 = 1;
pub const CLASS_UNDERTEXT: u8 = 2;
pub const CLASS_PARCHMENT: u8 = 3;

/// Per-pixel class labels, 0 meaning unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > CLASS_PARCHMENT) {
            return Err(Error::InvalidInput(format!("label value {bad} outside 0..=3")));
        }
        Ok(LabelMask { width, height, labels })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        LabelMask { width, height, labels: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u8> {
        (x < self.width && y < self.height).then(|| self.labels[y * self.width + x])
    }

    /// Pixel counts for classes 1..=3.
    pub fn counts(&self) -> BTreeMap<u8, usize> {
        let mut counts: BTreeMap<u8, usize> = (1..=3).map(|c| (c, 0)).collect();
        for &l in &self.labels {
            if l != 0 {
                *counts.entry(l).or_default() += 1;
            }
        }
        counts
    }

    /// Distinct nonzero classes present, ascending.
    pub fn classes(&self) -> Vec<u8> {
        self.counts().into_iter().filter(|&(_, n)| n > 0).map(|(c, _)| c).collect()
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::DimensionMismatch(format!(
                "label mask is {}x{}, cube is {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPolygon {
    pub class: u8,
    pub points: Vec<[f64; 2]>,
}

/// Operator-drawn regions. JSON form:
/// `{"classes": {"1": "overtext", ...}, "polygons": [{"class": 1, "points": [[x, y], ...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPolygonSet {
    #[serde(default = "default_class_names")]
    pub classes: BTreeMap<String, String>,
    #[serde(default)]
    pub polygons: Vec<LabelPolygon>,
}

fn default_class_names() -> BTreeMap<String, String> {
    [("1", "overtext"), ("2", "undertext"), ("3", "parchment")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

impl Default for LabelPolygonSet {
    fn default() -> Self {
        LabelPolygonSet { classes: default_class_names(), polygons: Vec::new() }
    }
}

impl LabelPolygonSet {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.polygons.iter().enumerate() {
            if p.points.len() < 3 {
                return Err(Error::InvalidInput(format!(
                    "polygon {i} has {} vertices, need at least 3",
                    p.points.len()
                )));
            }
            if !(1..=3).contains(&p.class) {
                return Err(Error::InvalidInput(format!("polygon {i} has class {}", p.class)));
            }
            if p.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("polygon {i} has a non-finite vertex")));
            }
        }
        Ok(())
    }
}

/// Even-odd point-in-polygon test.
fn contains(points: &[[f64; 2]], px: f64, py: f64) -> bool {
    let mut inside = false;
    let mut j = points.len() - 1;
    for i in 0..points.len() {
        let [xi, yi] = points[i];
        let [xj, yj] = points[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Fill polygons into a mask, sampling at pixel centers; later polygons win.
pub fn rasterize_labels(polygons: &LabelPolygonSet, width: usize, height: usize) -> Result<LabelMask> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("mask must be at least 1x1".into()));
    }
    polygons.validate()?;
    let mut labels = vec![0u8; width * height];
    for poly in &polygons.polygons {
        let (mut x0, mut y0, mut x1, mut y1) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &[x, y] in &poly.points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let xs = (x0 - 0.5).floor().max(0.0) as usize;
        let ys = (y0 - 0.5).floor().max(0.0) as usize;
        let xe = ((x1 - 0.5).ceil().max(-1.0) + 1.0).min(width as f64) as usize;
        let ye = ((y1 - 0.5).ceil().max(-1.0) + 1.0).min(height as f64) as usize;
        for y in ys..ye {
            for x in xs..xe {
                if contains(&poly.points, x as f64 + 0.5, y as f64 + 0.5) {
                    labels[y * width + x] = poly.class;
                }
            }
        }
    }
    Ok(LabelMask { width, height, labels })
}

/// Load labels from polygon JSON (`.json`) or an indexed/grayscale PNG mask.
pub fn load_labels(path: impl AsRef<Path>, width: usize, height: usize) -> Result<LabelMask> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let mask = if is_png {
        read_mask_png(path)?
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: LabelPolygonSet =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        rasterize_labels(&set, width, height)?
    };
    mask.check_dims(width, height)?;
    Ok(mask)
}

/// Decode a paletted (or 8-bit gray) PNG whose raw pixel values are 0..=3.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let decode_err = |message: String| Error::Decode { path: path.to_path_buf(), message };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| decode_err("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(decode_err(format!(
            "label mask must be 8-bit indexed or grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks(info.line_size).take(h) {
        labels.extend_from_slice(&row[..w]);
    }
    LabelMask::new(w, h, labels)
}

/// Write a mask as a paletted PNG (0 transparent black, 1 red, 2 blue, 3 tan).
pub fn write_mask_png(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let encode_err = |e: png::EncodingError| Error::Decode { path: path.to_path_buf(), message: e.to_string() };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), mask.width as u32, mask.height as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(vec![0, 0, 0, 220, 40, 40, 40, 80, 220, 225, 205, 160]);
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&mask.labels).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}
