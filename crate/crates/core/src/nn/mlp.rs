//! Fully connected networks with ReLU hidden layers and a linear output layer.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights and biases of a dense network.
///
/// `weights[i]` is `layer_sizes[i + 1] x layer_sizes[i]` (out x in), row-major.
/// The same type carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layer_sizes: Vec<usize>,
    pub weights: Vec<DenseMatrix<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Gradients have exactly the parameter layout.
pub type MlpGrads<T> = MlpParams<T>;

/// Per-layer values recorded by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationTape<T> {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<DenseMatrix<T>>,
    /// Affine pre-activations, one per layer.
    pre_activations: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> ActivationTape<T> {
    pub fn input(&self) -> &DenseMatrix<T> {
        &self.activations[0]
    }

    pub fn output(&self) -> &DenseMatrix<T> {
        self.activations.last().expect("tape holds the input")
    }

    pub fn into_output(mut self) -> DenseMatrix<T> {
        self.activations.pop().expect("tape holds the input")
    }

    pub fn pre_activation(&self, layer: usize) -> &DenseMatrix<T> {
        &self.pre_activations[layer]
    }

    pub fn num_layers(&self) -> usize {
        self.pre_activations.len()
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Glorot-uniform weights in `[-sqrt(6/(in+out)), sqrt(6/(in+out))]`, zero biases.
pub fn init_mlp<T: Scalar>(layer_sizes: &[usize], rng_seed: u64) -> Result<MlpParams<T>> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(dist.sample(&mut rng)))
            .collect();
        weights.push(DenseMatrix::new(fan_out, fan_in, data)?);
        biases.push(vec![T::zero(); fan_out]);
    }
    Ok(MlpParams {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
    })
}

impl<T: Scalar> MlpParams<T> {
    /// All-zero parameters (or gradients) with the given layout.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes
                .windows(2)
                .map(|p| DenseMatrix::zeros(p[1], p[0]))
                .collect(),
            biases: layer_sizes[1..].iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    /// Assembles parameters from explicit weights and biases, validating the layout.
    pub fn from_parts(weights: Vec<DenseMatrix<T>>, biases: Vec<Vec<T>>) -> Result<Self> {
        let Some(first) = weights.first() else {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        };
        let mut layer_sizes = vec![first.cols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != layer_sizes[i] || b.len() != w.rows() {
                return Err(Error::shape(
                    "MlpParams::from_parts",
                    format!("layer {i}: {}-input weights, bias of len {}", layer_sizes[i], w.rows()),
                    format!("{}x{} weights, bias of len {}", w.rows(), w.cols(), b.len()),
                ));
            }
            layer_sizes.push(w.rows());
        }
        if weights.len() != biases.len() {
            return Err(Error::shape("MlpParams::from_parts", weights.len(), biases.len()));
        }
        check_sizes(&layer_sizes)?;
        Ok(Self {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes).expect("existing layout is valid")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("at least two sizes")
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Layer by layer: weights row-major, then biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.flatten_into(&mut out);
        out
    }

    pub fn flatten_into(&self, out: &mut Vec<T>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }

    /// Inverse of [`MlpParams::flatten`] for this layout.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("unflatten", self.num_params(), flat.len()));
        }
        let mut out = self.clone();
        let mut at = 0;
        for (w, b) in out.weights.iter_mut().zip(out.biases.iter_mut()) {
            let n = w.len();
            w.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let m = b.len();
            b.copy_from_slice(&flat[at..at + m]);
            at += m;
        }
        Ok(out)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    fn check_layout(&self, other: &Self, op: &'static str) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape(
                op,
                format!("{:?}", self.layer_sizes),
                format!("{:?}", other.layer_sizes),
            ));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_layout(other, "MlpParams::axpy")?;
        for (w, gw) in self.weights.iter_mut().zip(&other.weights) {
            w.axpy(alpha, gw)?;
        }
        for (b, gb) in self.biases.iter_mut().zip(&other.biases) {
            for (v, g) in b.iter_mut().zip(gb) {
                *v += alpha * *g;
            }
        }
        Ok(())
    }

    /// Clamps every parameter into `[-bound, bound]`.
    pub fn clamp(&mut self, bound: T) {
        for v in self.values_mut() {
            *v = v.max(-bound).min(bound);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.data().iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.data_mut().iter_mut().chain(b.iter_mut()))
    }

    pub fn squared_norm(&self) -> T {
        self.values().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.values().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.iter().map(DenseMatrix::cast).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|v| U::of(v.as_f64())).collect())
                .collect(),
        }
    }
}

/// Runs the network on a batch (one sample per row) and records the tape.
pub fn forward<T: Scalar>(
    params: &MlpParams<T>,
    input: &DenseMatrix<T>,
) -> Result<ActivationTape<T>> {
    if input.cols() != params.input_size() {
        return Err(Error::shape(
            "forward",
            format!("{} input columns", params.input_size()),
            input.cols(),
        ));
    }
    let last = params.num_layers() - 1;
    let mut activations = Vec::with_capacity(params.num_layers() + 1);
    let mut pre_activations = Vec::with_capacity(params.num_layers());
    activations.push(input.clone());
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = activations[i].matmul_t(w)?;
        z.add_row(b)?;
        let a = if i == last {
            z.clone()
        } else {
            z.map(|v| v.max(T::zero()))
        };
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(ActivationTape {
        activations,
        pre_activations,
    })
}

/// Forward pass without keeping intermediates.
pub fn predict<T: Scalar>(params: &MlpParams<T>, input: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if input.cols() != params.input_size() {
        return Err(Error::shape(
            "predict",
            format!("{} input columns", params.input_size()),
            input.cols(),
        ));
    }
    let last = params.num_layers() - 1;
    let mut x = input.matmul_t(&params.weights[0])?;
    x.add_row(&params.biases[0])?;
    for i in 1..=last {
        let h = x.map(|v| v.max(T::zero()));
        x = h.matmul_t(&params.weights[i])?;
        x.add_row(&params.biases[i])?;
    }
    Ok(x)
}

/// Reverse-mode gradients of a scalar objective whose gradient with respect to
/// the network output is `output_grad`.
///
/// Returns the parameter gradients and the gradient with respect to the input,
/// which lets a caller chain through a preceding network.
pub fn backward<T: Scalar>(
    params: &MlpParams<T>,
    tape: &ActivationTape<T>,
    output_grad: &DenseMatrix<T>,
) -> Result<(MlpGrads<T>, DenseMatrix<T>)> {
    if tape.num_layers() != params.num_layers() {
        return Err(Error::shape(
            "backward",
            format!("tape with {} layers", params.num_layers()),
            tape.num_layers(),
        ));
    }
    if output_grad.shape() != tape.output().shape() {
        return Err(Error::shape(
            "backward",
            format!("{:?} output gradient", tape.output().shape()),
            format!("{:?}", output_grad.shape()),
        ));
    }
    let n = params.num_layers();
    let mut weights = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    let mut delta = output_grad.clone();
    for i in (0..n).rev() {
        if i != n - 1 {
            let z = tape.pre_activation(i);
            delta = delta.zip_map(z, |d, z| if z > T::zero() { d } else { T::zero() })?;
        }
        let a_in = &tape.activations[i];
        if a_in.cols() != params.weights[i].cols() {
            return Err(Error::shape(
                "backward",
                format!("layer {i} input width {}", params.weights[i].cols()),
                a_in.cols(),
            ));
        }
        weights.push(delta.t_matmul(a_in)?);
        biases.push(delta.column_sums());
        delta = delta.matmul(&params.weights[i])?;
    }
    weights.reverse();
    biases.reverse();
    let grads = MlpParams {
        layer_sizes: params.layer_sizes.clone(),
        weights,
        biases,
    };
    Ok((grads, delta))
}

/// Mean squared error over all `M x d` entries.
pub fn mse_loss<T: Scalar>(pred: &DenseMatrix<T>, labels: &DenseMatrix<T>) -> Result<T> {
    if pred.shape() != labels.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?}", labels.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = pred
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| (p - y) * (p - y))
        .sum();
    Ok(sum / T::of(pred.len() as f64))
}

/// Gradient of [`mse_loss`] with respect to `pred`: `2 (pred - labels) / (M d)`.
pub fn mse_grad<T: Scalar>(pred: &DenseMatrix<T>, labels: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if pred.shape() != labels.shape() {
        return Err(Error::shape(
            "mse_grad",
            format!("{:?}", labels.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let scale = T::of(2.0 / pred.len().max(1) as f64);
    pred.zip_map(labels, |p, y| scale * (p - y))
}

/// One plain gradient step: `params - eta * grads`.
pub fn sgd_step<T: Scalar>(params: &MlpParams<T>, grads: &MlpGrads<T>, eta: T) -> Result<MlpParams<T>> {
    let mut next = params.clone();
    next.axpy(-eta, grads)?;
    Ok(next)
}
