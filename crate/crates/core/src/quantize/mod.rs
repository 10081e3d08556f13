//! Quantizers for embeddings and head parameters. Each returns the values the
//! receiver reconstructs together with the exact number of transmitted bits.

mod hex;

use serde::{Deserialize, Serialize};

pub use hex::{index_order, lattice_norm, lattice_point, HexCodebook, MAX_HEX_BITS};

use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, MlpParams};
use crate::scalar::Scalar;

/// Wire width of an unquantized component.
pub const FLOAT_BITS: u32 = 32;
/// Side information of the scalar quantizer: the tensor range `[lo, hi]`.
pub const RANGE_SIDE_BITS: u64 = 2 * FLOAT_BITS as u64;
/// Side information of the lattice quantizer: the codebook scale.
pub const SCALE_SIDE_BITS: u64 = FLOAT_BITS as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    Identity,
    UniformScalar,
    HexLattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerSpec {
    pub kind: QuantizerKind,
    pub bits_per_component: u32,
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        Self::uniform(FLOAT_BITS)
    }
}

impl QuantizerSpec {
    pub fn identity() -> Self {
        Self {
            kind: QuantizerKind::Identity,
            bits_per_component: FLOAT_BITS,
        }
    }

    pub fn uniform(bits: u32) -> Self {
        Self {
            kind: QuantizerKind::UniformScalar,
            bits_per_component: bits,
        }
    }

    pub fn hex(bits: u32) -> Self {
        Self {
            kind: QuantizerKind::HexLattice,
            bits_per_component: bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max = match self.kind {
            QuantizerKind::Identity => return Ok(()),
            QuantizerKind::UniformScalar => FLOAT_BITS,
            QuantizerKind::HexLattice => MAX_HEX_BITS,
        };
        if !(1..=max).contains(&self.bits_per_component) {
            return Err(Error::Config(format!(
                "quantizer.bits_per_component must be in 1..={max} for {:?}, got {}",
                self.kind, self.bits_per_component
            )));
        }
        Ok(())
    }

    /// True when reconstruction is exact.
    pub fn is_lossless(&self) -> bool {
        match self.kind {
            QuantizerKind::Identity => true,
            QuantizerKind::UniformScalar => self.bits_per_component == FLOAT_BITS,
            QuantizerKind::HexLattice => false,
        }
    }

    pub fn quantize<T: Scalar>(&self, x: &DenseMatrix<T>) -> Result<QuantizedTensor<T>> {
        match self.kind {
            QuantizerKind::Identity => Ok(quantize_identity(x)),
            QuantizerKind::UniformScalar => quantize_uniform(x, self.bits_per_component),
            QuantizerKind::HexLattice => quantize_hex(x, self.bits_per_component),
        }
    }

    /// Quantizes every weight matrix and bias vector of `params` as its own tensor.
    pub fn quantize_mlp<T: Scalar>(&self, params: &MlpParams<T>) -> Result<(MlpParams<T>, u64)> {
        let mut out = params.clone();
        let mut bits = 0;
        for w in out.weights.iter_mut() {
            let q = self.quantize(w)?;
            bits += q.bits_cost();
            *w = q.reconstructed;
        }
        for b in out.biases.iter_mut() {
            let v = DenseMatrix::new(1, b.len(), std::mem::take(b))?;
            let q = self.quantize(&v)?;
            bits += q.bits_cost();
            *b = q.reconstructed.into_data();
        }
        Ok((out, bits))
    }
}

/// What the receiver reconstructs and what it cost to send.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor<T> {
    pub reconstructed: DenseMatrix<T>,
    pub payload_bits: u64,
    pub side_info_bits: u64,
}

impl<T> QuantizedTensor<T> {
    pub fn bits_cost(&self) -> u64 {
        self.payload_bits + self.side_info_bits
    }
}

pub fn bits_cost<T>(q: &QuantizedTensor<T>) -> u64 {
    q.bits_cost()
}

/// Raw 32-bit floats, no side information.
pub fn quantize_identity<T: Scalar>(x: &DenseMatrix<T>) -> QuantizedTensor<T> {
    QuantizedTensor {
        reconstructed: x.clone(),
        payload_bits: x.len() as u64 * FLOAT_BITS as u64,
        side_info_bits: 0,
    }
}

/// `b`-bit uniform scalar quantizer over the tensor's own range.
///
/// `[min, max]` is split into `2^b` equal cells and every value is replaced by
/// the center of its cell, so the error never exceeds half a cell. The range
/// travels as two floats of side information. `b = 32` sends raw floats.
pub fn quantize_uniform<T: Scalar>(x: &DenseMatrix<T>, b: u32) -> Result<QuantizedTensor<T>> {
    QuantizerSpec::uniform(b).validate()?;
    if b == FLOAT_BITS {
        return Ok(quantize_identity(x));
    }
    let payload_bits = x.len() as u64 * b as u64;
    let Some((lo, hi)) = x.min_max() else {
        return Ok(QuantizedTensor {
            reconstructed: x.clone(),
            payload_bits,
            side_info_bits: RANGE_SIDE_BITS,
        });
    };
    let reconstructed = if hi > lo {
        let levels = (1u64 << b) as f64;
        let width = (hi - lo) / T::of(levels);
        let top = T::of(levels - 1.0);
        let half = T::of(0.5);
        x.map(|v| {
            let idx = ((v - lo) / width).floor().max(T::zero()).min(top);
            lo + (idx + half) * width
        })
    } else {
        x.clone()
    };
    Ok(QuantizedTensor {
        reconstructed,
        payload_bits,
        side_info_bits: RANGE_SIDE_BITS,
    })
}

/// `b`-bit-per-component hexagonal lattice quantizer.
///
/// Components are paired in storage order (an odd tail is padded with a zero
/// that is dropped again and not billed). The `2^(2b)`-point codebook is scaled
/// so its radius equals the largest pair norm, and each pair is mapped to the
/// nearest scaled codeword. Payload: `2b` bits per pair plus one float scale.
pub fn quantize_hex<T: Scalar>(x: &DenseMatrix<T>, b: u32) -> Result<QuantizedTensor<T>> {
    QuantizerSpec::hex(b).validate()?;
    let book = HexCodebook::cached(b);
    let values: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
    let pairs: Vec<[f64; 2]> = values
        .chunks(2)
        .map(|c| [c[0], c.get(1).copied().unwrap_or(0.0)])
        .collect();
    let max_norm = pairs.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
    let scale = max_norm / book.radius();
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for p in &pairs {
        if scale == 0.0 {
            out.extend_from_slice(&[0.0, 0.0]);
            continue;
        }
        let q = [p[0] / scale, p[1] / scale];
        let (i, j) = book.nearest(q);
        let [cx, cy] = lattice_point(i, j);
        out.extend_from_slice(&[cx * scale, cy * scale]);
    }
    out.truncate(values.len());
    let reconstructed = DenseMatrix::new(x.rows(), x.cols(), out.into_iter().map(T::of).collect())?;
    Ok(QuantizedTensor {
        reconstructed,
        payload_bits: pairs.len() as u64 * 2 * b as u64,
        side_info_bits: SCALE_SIDE_BITS,
    })
}
