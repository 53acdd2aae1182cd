use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BandDescriptor, SpectralCube};
use crate::error::{Error, Result};

/// On-disk manifest: band files are resolved relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_hint: Option<usize>,
    pub bands: Vec<BandEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandEntry {
    pub band_id: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illumination: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_code: Option<String>,
}

struct DecodedBand {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

fn decode_band(path: &Path) -> Result<DecodedBand> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "band file not found"),
        ));
    }
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()
        }
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: format!("expected 8/16-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    Ok(DecodedBand { width, height, values })
}

/// Load and validate the band stack listed in a JSON manifest.
pub fn load_cube(manifest_path: impl AsRef<Path>) -> Result<SpectralCube> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::json(manifest_path.display().to_string(), e))?;
    if manifest.bands.is_empty() {
        return Err(Error::InvalidInput("manifest lists zero bands".into()));
    }
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let paths: Vec<PathBuf> = manifest.bands.iter().map(|b| base.join(&b.file)).collect();
    let decoded = paths
        .par_iter()
        .map(|p| decode_band(p))
        .collect::<Result<Vec<_>>>()?;

    let (w, h) = (decoded[0].width, decoded[0].height);
    for (band, dec) in manifest.bands.iter().zip(&decoded) {
        if (dec.width, dec.height) != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "band {:?} is {}x{}, first band is {w}x{h}",
                band.band_id, dec.width, dec.height
            )));
        }
    }
    let descriptors = manifest
        .bands
        .iter()
        .map(|b| BandDescriptor {
            band_id: b.band_id.clone(),
            file_name: b.file.clone(),
            wavelength_nm: b.wavelength_nm,
            illumination: b.illumination.clone().unwrap_or_default(),
            filter_code: b.filter_code.clone().unwrap_or_default(),
        })
        .collect();
    let planes: Vec<Vec<f64>> = decoded.into_iter().map(|d| d.values).collect();
    SpectralCube::from_planes(w, h, descriptors, &planes)
}

/// Write every band as a grayscale PNG plus a `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn write_cube(cube: &SpectralCube, dir: impl AsRef<Path>, bit_depth: u8) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = (cube.width() as u32, cube.height() as u32);
    let mut entries = Vec::with_capacity(cube.band_count());
    for (b, desc) in cube.bands().iter().enumerate() {
        let plane = cube.band_plane(b)?;
        let path = dir.join(&desc.file_name);
        let result = match bit_depth {
            8 => {
                let raw: Vec<u8> = plane.iter().map(|&v| quantize(v, 255.0) as u8).collect();
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).map(|buf| buf.save(&path))
            }
            16 => {
                let raw: Vec<u16> = plane.iter().map(|&v| quantize(v, 65535.0) as u16).collect();
                ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).map(|buf| buf.save(&path))
            }
            other => return Err(Error::Config(format!("unsupported bit depth {other}"))),
        };
        result
            .expect("buffer length matches frame")
            .map_err(|e| Error::Decode { path: path.clone(), message: e.to_string() })?;
        entries.push(BandEntry {
            band_id: desc.band_id.clone(),
            file: desc.file_name.clone(),
            wavelength_nm: desc.wavelength_nm,
            illumination: (!desc.illumination.is_empty()).then(|| desc.illumination.clone()),
            filter_code: (!desc.filter_code.is_empty()).then(|| desc.filter_code.clone()),
        });
    }
    let manifest = Manifest { width_hint: Some(cube.width()), bands: entries };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Round-half-up quantization of a `[0,1]` value onto `0..=max`.
pub(crate) fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max + 0.5).floor()
}
