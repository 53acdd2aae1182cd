//! Synthetic palimpsest pages with ground truth.
//!
//! The frame is tiled into square glyph cells. Half of the cells carry an
//! undertext glyph; overtext glyphs fill as many cells, of which the share
//! `overlap` coincides with undertext cells. Glyphs are random thick line
//! segments kept inside their cell, so with `overlap = 0` no pixel is drawn
//! by both texts. Overtext occludes undertext.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube_io::{BandDescriptor, LabelMask, SpectralCube, CLASS_OVERTEXT, CLASS_PARCHMENT, CLASS_UNDERTEXT};
use crate::error::{Error, Result};

pub const DEFAULT_SYNTH_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Class spectra, each of length `D`: parchment, overtext, undertext.
    pub spectra: [Vec<f64>; 3],
    /// Per-band gaussian noise standard deviation.
    pub noise: f64,
    /// Share of undertext cells that also carry overtext.
    pub overlap: f64,
    /// Glyph cell side in pixels.
    pub cell: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            width: 128,
            height: 128,
            // Overtext darkens every band evenly; undertext only shows in the
            // short wavelengths. Class means sit a few noise widths apart so
            // neighbor graphs over the whole page stay connected.
            spectra: [
                vec![0.70, 0.74, 0.77, 0.79, 0.80, 0.81],
                vec![0.60, 0.64, 0.67, 0.69, 0.70, 0.71],
                vec![0.60, 0.66, 0.72, 0.76, 0.79, 0.81],
            ],
            noise: 0.05,
            overlap: 0.3,
            cell: 16,
        }
    }
}

impl SyntheticSpec {
    pub fn bands(&self) -> usize {
        self.spectra[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.bands();
        if d == 0 || self.spectra.iter().any(|s| s.len() != d) {
            return Err(Error::Config("class spectra must share a non-zero length".into()));
        }
        if self.spectra.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("class spectra must lie in [0,1]".into()));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap must lie in [0,1], got {}", self.overlap)));
        }
        if self.cell < 6 || self.width < self.cell || self.height < self.cell {
            return Err(Error::Config(format!(
                "cell size {} needs to be at least 6 and fit a {}x{} frame",
                self.cell, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Draw random strokes into `layer` within the cell at `(cx, cy)`.
fn draw_glyph(layer: &mut [bool], width: usize, cx: usize, cy: usize, cell: usize, half_width: f64, rng: &mut ChaCha8Rng) {
    let margin = 2.0 + half_width;
    let span = cell as f64 - 2.0 * margin;
    let strokes = rng.random_range(2..=4);
    for _ in 0..strokes {
        let mut pt = || [margin + rng.random::<f64>() * span, margin + rng.random::<f64>() * span];
        let (a, b) = (pt(), pt());
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        for py in 0..cell {
            for px in 0..cell {
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let t = if len2 > 0.0 { (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (ex, ey) = (a[0] + t * dx - x, a[1] + t * dy - y);
                if ex * ex + ey * ey <= half_width * half_width {
                    layer[(cy * cell + py) * width + cx * cell + px] = true;
                }
            }
        }
    }
}

/// Render a page and its topmost-class mask. Deterministic in `seed`.
pub fn synth_palimpsest(spec: &SyntheticSpec, seed: u64) -> Result<(SpectralCube, LabelMask)> {
    spec.validate()?;
    let (w, h, d) = (spec.width, spec.height, spec.bands());
    let mut layout = ChaCha8Rng::seed_from_u64(seed);
    let (gx, gy) = (w / spec.cell, h / spec.cell);
    let mut cells: Vec<(usize, usize)> = (0..gy).flat_map(|y| (0..gx).map(move |x| (x, y))).collect();
    cells.shuffle(&mut layout);
    let n_under = cells.len().div_ceil(2);
    let shared = (spec.overlap * n_under as f64).round() as usize;
    let (under_cells, rest) = cells.split_at(n_under);
    let over_cells: Vec<(usize, usize)> =
        under_cells[..shared].iter().chain(rest.iter().take(n_under - shared)).copied().collect();

    let mut under = vec![false; w * h];
    let mut over = vec![false; w * h];
    for &(cx, cy) in under_cells {
        draw_glyph(&mut under, w, cx, cy, spec.cell, 1.0, &mut layout);
    }
    for &(cx, cy) in &over_cells {
        draw_glyph(&mut over, w, cx, cy, spec.cell, 1.5, &mut layout);
    }
    let labels: Vec<u8> = (0..w * h)
        .map(|i| if over[i] { CLASS_OVERTEXT } else if under[i] { CLASS_UNDERTEXT } else { CLASS_PARCHMENT })
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_2015);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(w * h * d);
    for &class in &labels {
        let base = match class {
            CLASS_OVERTEXT => &spec.spectra[1],
            CLASS_UNDERTEXT => &spec.spectra[2],
            _ => &spec.spectra[0],
        };
        for &v in base {
            let noisy = if spec.noise > 0.0 { v + normal.sample(&mut noise_rng) } else { v };
            samples.push(noisy.clamp(0.0, 1.0));
        }
    }
    const WAVELENGTHS: [f64; 6] = [365.0, 450.0, 535.0, 625.0, 735.0, 870.0];
    let bands = (0..d)
        .map(|b| {
            let mut desc = BandDescriptor::new(format!("B{:02}", b + 1));
            desc.wavelength_nm = WAVELENGTHS.get(b).copied();
            desc.illumination = "synthetic".into();
            desc
        })
        .collect();
    let cube = SpectralCube::new(w, h, bands, samples)?;
    let mask = LabelMask::new(w, h, labels)?;
    Ok((cube, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_pixels_equal_their_class_spectrum() {
        let spec = SyntheticSpec { noise: 0.0, ..Default::default() };
        let (cube, mask) = synth_palimpsest(&spec, 3).unwrap();
        for y in 0..cube.height() {
            for x in 0..cube.width() {
                let class = mask.get(x, y).unwrap();
                let expect = &spec.spectra[match class {
                    CLASS_PARCHMENT => 0,
                    CLASS_OVERTEXT => 1,
                    _ => 2,
                }];
                assert_eq!(cube.spectrum(x, y), expect.as_slice());
            }
        }
    }

    #[test]
    fn zero_overlap_keeps_texts_apart() {
        // Strokes stay inside their cell, so no cell may hold both classes.
        let spec = SyntheticSpec { overlap: 0.0, noise: 0.0, ..Default::default() };
        let (_, mask) = synth_palimpsest(&spec, 11).unwrap();
        let cell = spec.cell;
        let mut cell_classes = std::collections::HashMap::<(usize, usize), std::collections::BTreeSet<u8>>::new();
        for y in 0..spec.height {
            for x in 0..spec.width {
                let c = mask.get(x, y).unwrap();
                if c != CLASS_PARCHMENT {
                    cell_classes.entry((x / cell, y / cell)).or_default().insert(c);
                }
            }
        }
        assert!(cell_classes.values().all(|s| s.len() == 1));
        let counts = mask.counts();
        assert!(counts[&CLASS_OVERTEXT] > 0 && counts[&CLASS_UNDERTEXT] > 0);
    }

    #[test]
    fn overlap_puts_both_texts_in_shared_cells() {
        let spec = SyntheticSpec { overlap: 1.0, noise: 0.0, ..Default::default() };
        let (_, mask) = synth_palimpsest(&spec, 5).unwrap();
        let cell = spec.cell;
        let mut both = 0;
        for cy in 0..spec.height / cell {
            for cx in 0..spec.width / cell {
                let mut seen = std::collections::BTreeSet::new();
                for y in cy * cell..(cy + 1) * cell {
                    for x in cx * cell..(cx + 1) * cell {
                        seen.insert(mask.get(x, y).unwrap());
                    }
                }
                if seen.contains(&CLASS_OVERTEXT) && seen.contains(&CLASS_UNDERTEXT) {
                    both += 1;
                }
            }
        }
        assert!(both > 0);
    }

    #[test]
    fn same_seed_same_page() {
        let spec = SyntheticSpec::default();
        let (c1, m1) = synth_palimpsest(&spec, 9).unwrap();
        let (c2, m2) = synth_palimpsest(&spec, 9).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(m1, m2);
        let (c3, _) = synth_palimpsest(&spec, 10).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = SyntheticSpec { noise: -1.0, ..Default::default() };
        assert!(synth_palimpsest(&bad, 0).is_err());
        let mut bad = SyntheticSpec::default();
        bad.spectra[1][0] = 1.5;
        assert!(synth_palimpsest(&bad, 0).is_err());
    }
}
