use serde::{Deserialize, Serialize};

use super::SpectralCube;
use crate::error::{Error, Result};
use crate::linalg::{percentile_sorted, sorted_copy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum NormalizeMode {
    MinMax,
    /// Mean to 0.5, ±3σ to the ends of `[0,1]`, clamped.
    ZScore,
    /// Clip at the given percentiles, then min-max.
    PClip { lo: f64, hi: f64 },
}

/// Re-map one band in place of a copy of `cube`. Constant bands become 0.5.
pub fn normalize_band(cube: &SpectralCube, band: usize, mode: NormalizeMode) -> Result<SpectralCube> {
    cube.check_band(band)?;
    if let NormalizeMode::PClip { lo, hi } = mode {
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(Error::InvalidInput(format!("bad percentile clip ({lo}, {hi})")));
        }
    }
    let plane = cube.band_plane(band)?;
    let mapped = normalize_plane(&plane, mode);
    let mut out = cube.clone();
    out.set_band_plane(band, &mapped);
    Ok(out)
}

pub(crate) fn normalize_plane(plane: &[f64], mode: NormalizeMode) -> Vec<f64> {
    let (min, max) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(max > min) {
        return vec![0.5; plane.len()];
    }
    match mode {
        NormalizeMode::MinMax => affine(plane, min, max),
        NormalizeMode::ZScore => {
            let n = plane.len() as f64;
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            plane
                .iter()
                .map(|&v| (0.5 + (v - mean) / (6.0 * sd)).clamp(0.0, 1.0))
                .collect()
        }
        NormalizeMode::PClip { lo, hi } => {
            let sorted = sorted_copy(plane);
            let a = percentile_sorted(&sorted, lo);
            let b = percentile_sorted(&sorted, hi);
            if !(b > a) {
                return vec![0.5; plane.len()];
            }
            affine(plane, a, b)
        }
    }
}

fn affine(plane: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    plane.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube_io::BandDescriptor;
    use proptest::prelude::*;

    fn line_cube(values: Vec<f64>) -> SpectralCube {
        let w = values.len();
        SpectralCube::from_planes(w, 1, vec![BandDescriptor::new("b")], &[values]).unwrap()
    }

    #[test]
    fn minmax_maps_to_unit_interval() {
        let cube = line_cube(vec![0.2, 0.4, 0.6]);
        let out = normalize_band(&cube, 0, NormalizeMode::MinMax).unwrap();
        let got = out.band_plane(0).unwrap();
        for (g, e) in got.iter().zip([0.0, 0.5, 1.0]) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_band_is_half_under_every_mode() {
        let cube = line_cube(vec![0.3; 5]);
        for mode in [
            NormalizeMode::MinMax,
            NormalizeMode::ZScore,
            NormalizeMode::PClip { lo: 2.0, hi: 98.0 },
        ] {
            let out = normalize_band(&cube, 0, mode).unwrap();
            assert!(out.band_plane(0).unwrap().iter().all(|&v| v == 0.5), "{mode:?}");
        }
    }

    #[test]
    fn percentile_clip_on_hundred_and_one_points() {
        // Percentile p of {0, .01, ..., 1} sits exactly at p/100.
        let values: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let cube = line_cube(values.clone());
        let out = normalize_band(&cube, 0, NormalizeMode::PClip { lo: 2.0, hi: 98.0 }).unwrap();
        for (v, o) in values.iter().zip(out.band_plane(0).unwrap()) {
            if *v <= 0.02 {
                assert!(o.abs() < 1e-12, "{v} -> {o}");
            } else if *v >= 0.98 {
                assert!((o - 1.0).abs() < 1e-12, "{v} -> {o}");
            } else {
                assert!((o - (v - 0.02) / 0.96).abs() < 1e-12, "{v} -> {o}");
            }
        }
    }

    #[test]
    fn zscore_centers_mean_at_half() {
        let cube = line_cube(vec![0.1, 0.2, 0.3]);
        let out = normalize_band(&cube, 0, NormalizeMode::ZScore).unwrap();
        assert!((out.band_plane(0).unwrap()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_band_and_bad_clip_are_rejected() {
        let cube = line_cube(vec![0.1, 0.2]);
        assert!(normalize_band(&cube, 1, NormalizeMode::MinMax).is_err());
        assert!(normalize_band(&cube, 0, NormalizeMode::PClip { lo: 50.0, hi: 50.0 }).is_err());
    }

    proptest! {
        #[test]
        fn minmax_is_idempotent(values in prop::collection::vec(0.0f64..=1.0, 2..40)) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let cube = line_cube(values);
            let once = normalize_band(&cube, 0, NormalizeMode::MinMax).unwrap();
            let twice = normalize_band(&once, 0, NormalizeMode::MinMax).unwrap();
            for (a, b) in once.samples().iter().zip(twice.samples()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
