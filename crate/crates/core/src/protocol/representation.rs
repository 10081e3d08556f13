use crate::error::{Error, Result};
use crate::nn::{backward, forward, mse_grad, mse_loss, DenseMatrix, MlpGrads, MlpParams, SplitModel};
use crate::quantize::QuantizerSpec;
use crate::scalar::Scalar;

/// The bundle the fusion center broadcasts at the start of a round: the
/// quantized head model and every party's quantized embedding of its training
/// rows. It stays frozen for all local iterations of the round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRepresentation<T> {
    pub head_q: MlpParams<T>,
    pub embeddings_q: Vec<DenseMatrix<T>>,
    /// Uplink bits of every SU (its quantized embedding).
    pub bits_up: Vec<u64>,
    /// Bits of the quantized head model.
    pub head_bits: u64,
    /// Broadcast bits: the whole bundle sent to each of the K SUs.
    pub bits_down: u64,
}

impl<T: Scalar> ModelRepresentation<T> {
    /// Embeds `train_features` with the current extractors and quantizes the
    /// embeddings and the head.
    pub fn build(
        model: &SplitModel<T>,
        train_features: &[DenseMatrix<T>],
        quantizer: &QuantizerSpec,
    ) -> Result<Self> {
        let embeddings = model.embeddings(train_features)?;
        let mut embeddings_q = Vec::with_capacity(embeddings.len());
        let mut bits_up = Vec::with_capacity(embeddings.len());
        for h in &embeddings {
            let q = quantizer.quantize(h)?;
            bits_up.push(q.bits_cost());
            embeddings_q.push(q.reconstructed);
        }
        let (head_q, head_bits) = quantizer.quantize_mlp(&model.head)?;
        let bundle = head_bits + bits_up.iter().sum::<u64>();
        Ok(Self {
            head_q,
            embeddings_q,
            bits_down: bundle * model.num_parties() as u64,
            bits_up,
            head_bits,
        })
    }

    pub fn num_parties(&self) -> usize {
        self.embeddings_q.len()
    }

    pub fn rows(&self) -> usize {
        self.embeddings_q.first().map_or(0, DenseMatrix::rows)
    }

    pub fn total_uplink(&self) -> u64 {
        self.bits_up.iter().sum()
    }
}

/// Gradient of party `k`'s parameters with the rest of the representation frozen.
///
/// `k = 0` is the head: its own current parameters see the stale quantized
/// embeddings of all parties. `k >= 1` is SU `k`: its fresh embedding of
/// `own_features` replaces slot `k`, the result goes through the quantized head,
/// and the input gradient is chained back through the extractor.
///
/// Returns the loss seen by the party alongside the gradient.
pub fn partial_gradient<T: Scalar>(
    k: usize,
    rep: &ModelRepresentation<T>,
    own_params: &MlpParams<T>,
    own_features: Option<&DenseMatrix<T>>,
    labels: &DenseMatrix<T>,
) -> Result<(T, MlpGrads<T>)> {
    if rep.embeddings_q.is_empty() {
        return Err(Error::Protocol("model representation holds no embeddings".into()));
    }
    if k > rep.num_parties() {
        return Err(Error::Protocol(format!(
            "party {k} does not exist, representation has {} SUs",
            rep.num_parties()
        )));
    }
    if labels.rows() != rep.rows() {
        return Err(Error::shape("partial_gradient", format!("{} label rows", rep.rows()), labels.rows()));
    }
    if k == 0 {
        let refs: Vec<_> = rep.embeddings_q.iter().collect();
        let input = DenseMatrix::hconcat(&refs)?;
        let tape = forward(own_params, &input)?;
        let loss = mse_loss(tape.output(), labels)?;
        let (grads, _) = backward(own_params, &tape, &mse_grad(tape.output(), labels)?)?;
        return Ok((loss, grads));
    }
    let features = own_features.ok_or_else(|| {
        Error::Protocol(format!("party {k} needs its own features to compute a gradient"))
    })?;
    let own_tape = forward(own_params, features)?;
    let slot = k - 1;
    if own_tape.output().shape() != rep.embeddings_q[slot].shape() {
        return Err(Error::shape(
            "partial_gradient",
            format!("{:?} embedding", rep.embeddings_q[slot].shape()),
            format!("{:?}", own_tape.output().shape()),
        ));
    }
    let refs: Vec<_> = rep
        .embeddings_q
        .iter()
        .enumerate()
        .map(|(i, h)| if i == slot { own_tape.output() } else { h })
        .collect();
    let offset: usize = rep.embeddings_q[..slot].iter().map(DenseMatrix::cols).sum();
    let width = rep.embeddings_q[slot].cols();
    let input = DenseMatrix::hconcat(&refs)?;
    let head_tape = forward(&rep.head_q, &input)?;
    let loss = mse_loss(head_tape.output(), labels)?;
    let (_, input_grad) = backward(&rep.head_q, &head_tape, &mse_grad(head_tape.output(), labels)?)?;
    let slot_grad = input_grad.column_block(offset, width)?;
    let (grads, _) = backward(own_params, &own_tape, &slot_grad)?;
    Ok((loss, grads))
}
