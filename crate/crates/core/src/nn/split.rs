//! The vertically split network: one feature extractor per sensing party and a
//! head at the fusion center fed with the concatenated embeddings.

use super::{backward, forward, mse_grad, mse_loss, predict, DenseMatrix, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Layer layout of a split model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Layer sizes of every extractor, input first, embedding width last.
    pub extractor: Vec<usize>,
    /// Hidden layer sizes of the head.
    pub head_hidden: Vec<usize>,
    pub num_outputs: usize,
    pub num_parties: usize,
}

impl Architecture {
    /// Extractors `(102, 128, 256, 64, 16)` and head `(16 K, 8, N)`.
    pub fn sensing(num_sus: usize, num_pus: usize) -> Self {
        Self {
            extractor: vec![102, 128, 256, 64, 16],
            head_hidden: vec![8],
            num_outputs: num_pus,
            num_parties: num_sus,
        }
    }

    pub fn embedding_width(&self) -> usize {
        *self.extractor.last().unwrap_or(&0)
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.embedding_width() * self.num_parties];
        sizes.extend_from_slice(&self.head_hidden);
        sizes.push(self.num_outputs);
        sizes
    }
}

/// Head parameters plus one extractor per party.
///
/// The flattened parameter vector lists the head first and then the
/// extractors in party order; within each network layers are visited in
/// order, weights row-major before biases.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel<T> {
    pub head: MlpParams<T>,
    pub extractors: Vec<MlpParams<T>>,
}

/// Gradients share the model layout.
pub type SplitGrads<T> = SplitModel<T>;

/// Seed of party `k` (0 is the head) derived from a model seed.
pub fn party_seed(seed: u64, party: usize) -> u64 {
    seed ^ (party as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl<T: Scalar> SplitModel<T> {
    pub fn new(head: MlpParams<T>, extractors: Vec<MlpParams<T>>) -> Result<Self> {
        if extractors.is_empty() {
            return Err(Error::Config("a split model needs at least one extractor".into()));
        }
        let total: usize = extractors.iter().map(MlpParams::output_size).sum();
        if head.input_size() != total {
            return Err(Error::shape(
                "SplitModel::new",
                format!("head input {total} (sum of embedding widths)"),
                head.input_size(),
            ));
        }
        Ok(Self { head, extractors })
    }

    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let head = super::init_mlp(&arch.head_sizes(), party_seed(seed, 0))?;
        let extractors = (1..=arch.num_parties)
            .map(|k| super::init_mlp(&arch.extractor, party_seed(seed, k)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(head, extractors)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            head: self.head.zeros_like(),
            extractors: self.extractors.iter().map(MlpParams::zeros_like).collect(),
        }
    }

    pub fn num_parties(&self) -> usize {
        self.extractors.len()
    }

    /// Column offset of party `k`'s embedding (1-based party index) in the head input.
    pub fn embedding_offset(&self, k: usize) -> usize {
        self.extractors[..k - 1].iter().map(MlpParams::output_size).sum()
    }

    /// Parameters of party `k`: 0 is the head, `1..=K` the extractors.
    pub fn party(&self, k: usize) -> &MlpParams<T> {
        if k == 0 {
            &self.head
        } else {
            &self.extractors[k - 1]
        }
    }

    pub fn party_mut(&mut self, k: usize) -> &mut MlpParams<T> {
        if k == 0 {
            &mut self.head
        } else {
            &mut self.extractors[k - 1]
        }
    }

    /// Total number of scalar parameters (the length of the flattened model).
    pub fn num_params(&self) -> usize {
        self.head.num_params() + self.extractors.iter().map(MlpParams::num_params).sum::<usize>()
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.head.flatten_into(&mut out);
        for e in &self.extractors {
            e.flatten_into(&mut out);
        }
        out
    }

    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("SplitModel::unflatten", self.num_params(), flat.len()));
        }
        let mut at = self.head.num_params();
        let head = self.head.unflatten(&flat[..at])?;
        let mut extractors = Vec::with_capacity(self.extractors.len());
        for e in &self.extractors {
            let n = e.num_params();
            extractors.push(e.unflatten(&flat[at..at + n])?);
            at += n;
        }
        Ok(Self { head, extractors })
    }

    pub fn max_abs(&self) -> T {
        self.extractors
            .iter()
            .fold(self.head.max_abs(), |m, e| m.max(e.max_abs()))
    }

    pub fn squared_norm(&self) -> T {
        self.head.squared_norm() + self.extractors.iter().map(MlpParams::squared_norm).sum::<T>()
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite() && self.extractors.iter().all(MlpParams::is_finite)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.extractors.len() != other.extractors.len() {
            return Err(Error::shape(
                "SplitModel::axpy",
                self.extractors.len(),
                other.extractors.len(),
            ));
        }
        self.head.axpy(alpha, &other.head)?;
        for (e, g) in self.extractors.iter_mut().zip(&other.extractors) {
            e.axpy(alpha, g)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SplitModel<U> {
        SplitModel {
            head: self.head.cast(),
            extractors: self.extractors.iter().map(MlpParams::cast).collect(),
        }
    }

    fn check_features(&self, features: &[DenseMatrix<T>]) -> Result<()> {
        if features.len() != self.extractors.len() {
            return Err(Error::shape(
                "SplitModel",
                format!("{} feature blocks", self.extractors.len()),
                features.len(),
            ));
        }
        Ok(())
    }

    /// Embeddings of every party for the given feature blocks.
    pub fn embeddings(&self, features: &[DenseMatrix<T>]) -> Result<Vec<DenseMatrix<T>>> {
        self.check_features(features)?;
        self.extractors
            .iter()
            .zip(features)
            .map(|(e, x)| predict(e, x))
            .collect()
    }

    /// Composite prediction: extractors, concatenation, head.
    pub fn predict(&self, features: &[DenseMatrix<T>]) -> Result<DenseMatrix<T>> {
        let embeddings = self.embeddings(features)?;
        let refs: Vec<_> = embeddings.iter().collect();
        predict(&self.head, &DenseMatrix::hconcat(&refs)?)
    }

    pub fn loss(&self, features: &[DenseMatrix<T>], labels: &DenseMatrix<T>) -> Result<T> {
        mse_loss(&self.predict(features)?, labels)
    }

    /// Loss and gradient of the unsplit composite network (ordinary backprop
    /// through head and extractors with fresh embeddings).
    pub fn loss_and_grad(
        &self,
        features: &[DenseMatrix<T>],
        labels: &DenseMatrix<T>,
    ) -> Result<(T, SplitGrads<T>)> {
        self.check_features(features)?;
        let tapes = self
            .extractors
            .iter()
            .zip(features)
            .map(|(e, x)| forward(e, x))
            .collect::<Result<Vec<_>>>()?;
        let outputs: Vec<_> = tapes.iter().map(|t| t.output()).collect();
        let head_in = DenseMatrix::hconcat(&outputs)?;
        let head_tape = forward(&self.head, &head_in)?;
        let loss = mse_loss(head_tape.output(), labels)?;
        let grad_out = mse_grad(head_tape.output(), labels)?;
        let (head_grad, input_grad) = backward(&self.head, &head_tape, &grad_out)?;
        let mut extractor_grads = Vec::with_capacity(self.extractors.len());
        let mut offset = 0;
        for (e, tape) in self.extractors.iter().zip(&tapes) {
            let width = e.output_size();
            let slot = input_grad.column_block(offset, width)?;
            offset += width;
            extractor_grads.push(backward(e, tape, &slot)?.0);
        }
        Ok((
            loss,
            SplitModel {
                head: head_grad,
                extractors: extractor_grads,
            },
        ))
    }
}
