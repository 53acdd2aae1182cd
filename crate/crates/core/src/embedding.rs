use nalgebra::DMatrix;

/// `N × q` latent coordinates, one row per input row.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: DMatrix<f64>,
}

impl Embedding {
    pub fn new(values: DMatrix<f64>) -> Self {
        Embedding { values }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.column(c).iter().copied().collect()
    }

    /// Stack row blocks produced by block-wise projection.
    pub fn vstack(blocks: &[Embedding]) -> Embedding {
        let q = blocks.first().map_or(0, Embedding::dims);
        let n: usize = blocks.iter().map(Embedding::rows).sum();
        let mut values = DMatrix::zeros(n, q);
        let mut at = 0;
        for b in blocks {
            values.rows_mut(at, b.rows()).copy_from(&b.values);
            at += b.rows();
        }
        Embedding { values }
    }
}
