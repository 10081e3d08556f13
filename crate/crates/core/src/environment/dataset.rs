use crate::error::{Error, Result};
use crate::nn::DenseMatrix;
use crate::scalar::Scalar;

/// Per-party feature blocks with their shared labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub features: Vec<DenseMatrix<T>>,
    pub labels: DenseMatrix<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn rows(&self) -> usize {
        self.labels.rows()
    }

    /// Concatenates batches row-wise (used to pool rounds).
    pub fn stack(batches: &[&Batch<T>]) -> Result<Self> {
        let Some(first) = batches.first() else {
            return Err(Error::Config("cannot stack zero batches".into()));
        };
        let parties = first.features.len();
        let features = (0..parties)
            .map(|k| {
                let blocks: Vec<_> = batches.iter().map(|b| &b.features[k]).collect();
                DenseMatrix::vconcat(&blocks)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<_> = batches.iter().map(|b| &b.labels).collect();
        Ok(Self {
            features,
            labels: DenseMatrix::vconcat(&labels)?,
        })
    }
}

/// Data collected in one global round: one feature block per SU, shared
/// labels, the first `num_train` rows for training and the rest for testing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDataset<T> {
    round: usize,
    features: Vec<DenseMatrix<T>>,
    labels: DenseMatrix<T>,
    num_train: usize,
    train: Batch<T>,
    test: Batch<T>,
}

impl<T: Scalar> RoundDataset<T> {
    pub fn new(
        round: usize,
        features: Vec<DenseMatrix<T>>,
        labels: DenseMatrix<T>,
        num_train: usize,
    ) -> Result<Self> {
        let rows = labels.rows();
        if let Some(bad) = features.iter().find(|f| f.rows() != rows) {
            return Err(Error::shape("RoundDataset", format!("{rows} rows per block"), bad.rows()));
        }
        if num_train > rows {
            return Err(Error::shape("RoundDataset", format!("at most {rows} train rows"), num_train));
        }
        let part = |range: std::ops::Range<usize>| -> Result<Batch<T>> {
            Ok(Batch {
                features: features
                    .iter()
                    .map(|f| f.select_rows(range.clone()))
                    .collect::<Result<_>>()?,
                labels: labels.select_rows(range)?,
            })
        };
        let train = part(0..num_train)?;
        let test = part(num_train..rows)?;
        Ok(Self {
            round,
            features,
            labels,
            num_train,
            train,
            test,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn features(&self) -> &[DenseMatrix<T>] {
        &self.features
    }

    pub fn labels(&self) -> &DenseMatrix<T> {
        &self.labels
    }

    pub fn num_sus(&self) -> usize {
        self.features.len()
    }

    pub fn num_train(&self) -> usize {
        self.num_train
    }

    pub fn num_test(&self) -> usize {
        self.labels.rows() - self.num_train
    }

    pub fn train(&self) -> &Batch<T> {
        &self.train
    }

    pub fn test(&self) -> &Batch<T> {
        &self.test
    }

    pub fn cast<U: Scalar>(&self) -> RoundDataset<U> {
        RoundDataset::new(
            self.round,
            self.features.iter().map(DenseMatrix::cast).collect(),
            self.labels.cast(),
            self.num_train,
        )
        .expect("casting keeps shapes")
    }

    /// Replaces every feature block with `f(k, block)`.
    pub fn map_features(
        &self,
        mut f: impl FnMut(usize, &DenseMatrix<T>) -> DenseMatrix<T>,
    ) -> Result<Self> {
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(k, b)| f(k, b))
            .collect();
        Self::new(self.round, features, self.labels.clone(), self.num_train)
    }
}

/// Per-column affine standardization with statistics frozen at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl FeatureScaler {
    /// Column means and population standard deviations of `block`. Columns with
    /// (near) zero spread use `fallback_scale[c]` instead.
    pub fn fit(block: &DenseMatrix<f64>, fallback_scale: &[f64]) -> Self {
        assert_eq!(fallback_scale.len(), block.cols());
        let n = block.rows().max(1) as f64;
        let mean: Vec<f64> = block.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; block.cols()];
        for r in 0..block.rows() {
            for (c, v) in block.row(r).iter().enumerate() {
                var[c] += (v - mean[c]).powi(2) / n;
            }
        }
        let scale = var
            .iter()
            .zip(fallback_scale)
            .map(|(&v, &fb)| if v.sqrt() > 1e-9 { v.sqrt() } else { fb })
            .collect();
        Self { mean, scale }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn apply(&self, block: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(block.rows(), block.cols(), |r, c| {
            (block.get(r, c) - self.mean[c]) / self.scale[c]
        })
    }
}
