//! Band-stack ingestion and the pixel/label plumbing around it.
//!
//! A page is a [`SpectralCube`]: `D` co-registered grayscale captures of the
//! same `W × H` frame, each sample normalized to `[0, 1]` (dark is ink).
//! Operators mark regions as a [`LabelPolygonSet`] which is rasterized into a
//! [`LabelMask`]; fits work on a [`DesignMatrix`] of pixel spectra.

mod design;
mod labels;
mod manifest;
mod normalize;

pub use design::{flatten, subsample, DesignMatrix, Roi};
pub use labels::{
    load_labels, rasterize_labels, read_mask_png, write_mask_png, LabelMask, LabelPolygon,
    LabelPolygonSet, CLASS_OVERTEXT, CLASS_PARCHMENT, CLASS_UNDERTEXT,
};
pub use manifest::{load_cube, write_cube, BandEntry, Manifest};
pub use normalize::{normalize_band, NormalizeMode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDescriptor {
    pub band_id: String,
    pub file_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
    #[serde(default)]
    pub illumination: String,
    /// Capture code such as `CFUG` (365 nm UV, green filter).
    #[serde(default)]
    pub filter_code: String,
}

impl BandDescriptor {
    pub fn new(band_id: impl Into<String>) -> Self {
        let band_id = band_id.into();
        BandDescriptor {
            file_name: format!("{band_id}.png"),
            band_id,
            wavelength_nm: None,
            illumination: String::new(),
            filter_code: String::new(),
        }
    }
}

/// `W × H × D` stack of registered band images.
///
/// Samples are stored pixel-interleaved: the spectrum of pixel `(x, y)` is
/// `samples[(y * W + x) * D ..][..D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    width: usize,
    height: usize,
    bands: Vec<BandDescriptor>,
    samples: Vec<f64>,
}

impl SpectralCube {
    pub fn new(
        width: usize,
        height: usize,
        bands: Vec<BandDescriptor>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::InvalidInput("cube has zero bands".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("cube has an empty frame".into()));
        }
        if samples.len() != width * height * bands.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{} cube",
                samples.len(),
                bands.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for b in &bands {
            if !seen.insert(b.band_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate band_id {:?}", b.band_id)));
            }
            if let Some(w) = b.wavelength_nm {
                if !(w > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "band {:?} has non-positive wavelength {w}",
                        b.band_id
                    )));
                }
            }
        }
        if let Some(bad) = samples.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidInput(format!("sample {bad} outside [0,1]")));
        }
        Ok(SpectralCube { width, height, bands, samples })
    }

    /// Build a cube from per-band planes (each `W × H`, row-major).
    pub fn from_planes(
        width: usize,
        height: usize,
        bands: Vec<BandDescriptor>,
        planes: &[Vec<f64>],
    ) -> Result<Self> {
        if planes.len() != bands.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} planes for {} band descriptors",
                planes.len(),
                bands.len()
            )));
        }
        let d = planes.len();
        let px = width * height;
        if let Some(p) = planes.iter().find(|p| p.len() != px) {
            return Err(Error::DimensionMismatch(format!(
                "band plane has {} samples, frame has {px}",
                p.len()
            )));
        }
        let mut samples = vec![0.0; px * d];
        for (b, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                samples[i * d + b] = v;
            }
        }
        SpectralCube::new(width, height, bands, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[BandDescriptor] {
        &self.bands
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, band: usize) -> f64 {
        self.samples[(y * self.width + x) * self.bands.len() + band]
    }

    pub fn spectrum(&self, x: usize, y: usize) -> &[f64] {
        let d = self.bands.len();
        let start = (y * self.width + x) * d;
        &self.samples[start..start + d]
    }

    /// Row-major copy of one band.
    pub fn band_plane(&self, band: usize) -> Result<Vec<f64>> {
        self.check_band(band)?;
        let d = self.bands.len();
        Ok(self.samples.iter().skip(band).step_by(d).copied().collect())
    }

    pub(crate) fn set_band_plane(&mut self, band: usize, plane: &[f64]) {
        let d = self.bands.len();
        for (i, &v) in plane.iter().enumerate() {
            self.samples[i * d + band] = v;
        }
    }

    /// Cube restricted to the given bands, in the given order.
    pub fn select_bands(&self, indices: &[usize]) -> Result<SpectralCube> {
        if indices.is_empty() {
            return Err(Error::Config("band subset is empty".into()));
        }
        let planes = indices
            .iter()
            .map(|&b| self.band_plane(b))
            .collect::<Result<Vec<_>>>()?;
        let bands = indices.iter().map(|&b| self.bands[b].clone()).collect();
        SpectralCube::from_planes(self.width, self.height, bands, &planes)
    }

    pub(crate) fn check_band(&self, band: usize) -> Result<()> {
        if band >= self.bands.len() {
            return Err(Error::InvalidInput(format!(
                "band {band} out of range (cube has {})",
                self.bands.len()
            )));
        }
        Ok(())
    }
}
