use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelMask, SpectralCube};
use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// `N × D` pixel spectra with the pixel each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub pixel_index: Vec<(u32, u32)>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, pixel_index: Vec<(u32, u32)>) -> Result<Self> {
        if values.nrows() != pixel_index.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows but {} pixel indices",
                values.nrows(),
                pixel_index.len()
            )));
        }
        Ok(DesignMatrix { values, pixel_index })
    }

    /// Matrix without pixel provenance (indices are synthetic `(i, 0)`).
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let pixel_index = (0..values.nrows() as u32).map(|i| (i, 0)).collect();
        DesignMatrix { values, pixel_index }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let values = self.values.select_rows(rows.iter());
        let pixel_index = rows.iter().map(|&r| self.pixel_index[r]).collect();
        DesignMatrix { values, pixel_index }
    }

    /// Contiguous row block `[start, start + len)`.
    pub fn row_block(&self, start: usize, len: usize) -> DesignMatrix {
        DesignMatrix {
            values: self.values.rows(start, len).into_owned(),
            pixel_index: self.pixel_index[start..start + len].to_vec(),
        }
    }

    /// Label of each row under `mask`.
    pub fn labels_from(&self, mask: &LabelMask) -> Result<Vec<u8>> {
        self.pixel_index
            .iter()
            .map(|&(x, y)| {
                mask.get(x as usize, y as usize).ok_or_else(|| {
                    Error::DimensionMismatch(format!(
                        "pixel ({x},{y}) outside {}x{} label mask",
                        mask.width(),
                        mask.height()
                    ))
                })
            })
            .collect()
    }
}

/// Row-major flattening of the whole frame or a rectangle of it.
pub fn flatten(cube: &SpectralCube, roi: Option<Roi>) -> Result<DesignMatrix> {
    let roi = roi.unwrap_or(Roi { x: 0, y: 0, width: cube.width(), height: cube.height() });
    if roi.width == 0 || roi.height == 0 {
        return Err(Error::InvalidInput("empty region of interest".into()));
    }
    if roi.x + roi.width > cube.width() || roi.y + roi.height > cube.height() {
        return Err(Error::InvalidInput(format!(
            "region {roi:?} exceeds {}x{} frame",
            cube.width(),
            cube.height()
        )));
    }
    let d = cube.band_count();
    let n = roi.width * roi.height;
    let mut pixel_index = Vec::with_capacity(n);
    let mut values = DMatrix::zeros(n, d);
    for y in roi.y..roi.y + roi.height {
        for x in roi.x..roi.x + roi.width {
            let row = pixel_index.len();
            for (b, &v) in cube.spectrum(x, y).iter().enumerate() {
                values[(row, b)] = v;
            }
            pixel_index.push((x as u32, y as u32));
        }
    }
    Ok(DesignMatrix { values, pixel_index })
}

/// Deterministic subsample of `n` rows.
///
/// Without `stratify` the rows are a uniform draw without replacement. With a
/// mask, only rows carrying a nonzero label are eligible and the quota is split
/// as evenly as possible across the classes present (small classes give their
/// unused share to the others). Selected rows keep their original order.
pub fn subsample(
    matrix: &DesignMatrix,
    n: usize,
    seed: u64,
    stratify: Option<&LabelMask>,
) -> Result<DesignMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("subsample size must be at least 1".into()));
    }
    let labels = stratify.map(|m| matrix.labels_from(m)).transpose()?;
    if n >= matrix.rows() {
        return Ok(matrix.clone());
    }
    let mut chosen = match labels {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            draw((0..matrix.rows()).collect(), n, &mut rng)
        }
        Some(labels) => {
            let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
            for (row, &l) in labels.iter().enumerate() {
                if l != 0 {
                    by_class.entry(l).or_default().push(row);
                }
            }
            let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
            let quotas = equal_split(n, &sizes);
            let mut out = Vec::with_capacity(n);
            for ((class, rows), quota) in by_class.into_iter().zip(quotas) {
                let mut rng = ChaCha8Rng::seed_from_u64(class_seed(seed, class));
                out.extend(draw(rows, quota, &mut rng));
            }
            out
        }
    };
    chosen.sort_unstable();
    Ok(matrix.select_rows(&chosen))
}

fn class_seed(seed: u64, class: u8) -> u64 {
    seed ^ (u64::from(class)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Partial Fisher–Yates: `k` distinct items from `pool`.
fn draw(mut pool: Vec<usize>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Split `n` across classes of the given sizes as evenly as capacity allows.
pub(crate) fn equal_split(n: usize, sizes: &[usize]) -> Vec<usize> {
    let mut quotas = vec![0usize; sizes.len()];
    let mut remaining = n.min(sizes.iter().sum());
    loop {
        let open: Vec<usize> = (0..sizes.len()).filter(|&c| quotas[c] < sizes[c]).collect();
        if remaining == 0 || open.is_empty() {
            break;
        }
        let share = remaining / open.len();
        let mut extra = remaining % open.len();
        for &c in &open {
            let want = share + usize::from(extra > 0);
            extra = extra.saturating_sub(1);
            let take = want.min(sizes[c] - quotas[c]);
            quotas[c] += take;
            remaining -= take;
        }
    }
    quotas
}
