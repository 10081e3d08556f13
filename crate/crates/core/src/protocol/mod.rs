//! The online vertical federated training engine and its CC / LC baselines.
//!
//! One global round of OVFL:
//! 1. every SU embeds its fresh training rows with its current extractor and
//!    quantizes the embedding;
//! 2. the fusion center quantizes its head and broadcasts the bundle
//!    ([`ModelRepresentation`]) to all SUs;
//! 3. every party (head and extractors) runs `E` gradient steps on its own
//!    parameters against that frozen bundle.

mod representation;
mod trace;

use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use representation::{partial_gradient, ModelRepresentation};
pub use trace::{GradientTrace, IterationStats};

use crate::environment::RoundDataset;
use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, MlpGrads, MlpParams, SplitModel};
use crate::quantize::{QuantizerSpec, FLOAT_BITS};
use crate::scalar::Scalar;

/// Iteration pairs sampled per round for the smoothness probe.
pub const SMOOTHNESS_PAIRS_PER_ROUND: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    FullPrecision,
    Quantized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ovfl,
    /// Centralized training on raw features at the fusion center.
    Cc,
    /// OVFL that stops training after `lc_freeze` rounds.
    Lc,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ovfl => "ovfl",
            Algorithm::Cc => "cc",
            Algorithm::Lc => "lc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Local iterations per round, `E`.
    pub local_iters: usize,
    pub eta: f64,
    pub quantizer: QuantizerSpec,
    pub eval_mode: EvalMode,
    /// Optional projection of every parameter onto `[-c, c]` after each step.
    pub weight_clip: Option<f64>,
    pub record_trace: bool,
    /// Seed for sampling iteration pairs in the smoothness probe.
    pub trace_seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            local_iters: 1,
            eta: 1e-4,
            quantizer: QuantizerSpec::default(),
            eval_mode: EvalMode::FullPrecision,
            weight_clip: None,
            record_trace: false,
            trace_seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_iters == 0 {
            return Err(Error::Config("local_iters must be at least 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if let Some(c) = self.weight_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("weight_clip must be positive, got {c}")));
            }
        }
        self.quantizer.validate()
    }
}

/// Metrics of one global round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round number.
    pub round: usize,
    /// Training loss of the model the round started from.
    pub train_loss_pre: f64,
    /// Test loss after the round's updates, on the round's own test rows.
    pub test_loss: f64,
    pub bits_uplink: u64,
    pub bits_downlink: u64,
    pub wall_time: f64,
}

/// Everything recorded over a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rounds: Vec<RoundMetrics>,
    pub trace: Option<GradientTrace>,
}

impl RunLog {
    pub fn learner_losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.train_loss_pre).collect()
    }

    pub fn test_losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.test_loss).collect()
    }
}

/// Model and bookkeeping carried from round to round.
#[derive(Debug, Clone)]
pub struct TrainerState<T> {
    pub model: SplitModel<T>,
    /// Rounds completed so far.
    pub round: usize,
    pub config: ProtocolConfig,
    pub trace: Option<GradientTrace>,
    trace_rng: ChaCha8Rng,
}

impl<T: Scalar> TrainerState<T> {
    pub fn new(model: SplitModel<T>, config: ProtocolConfig) -> Result<Self> {
        config.validate()?;
        let trace = config.record_trace.then(|| {
            let mut t = GradientTrace::new(model.num_params());
            t.observe_model(model.max_abs().as_f64());
            t
        });
        Ok(Self {
            trace_rng: ChaCha8Rng::seed_from_u64(config.trace_seed),
            model,
            round: 0,
            config,
            trace,
        })
    }

    fn eta(&self) -> T {
        T::of(self.config.eta)
    }

    fn apply(&mut self, party: usize, grads: &MlpGrads<T>) -> Result<()> {
        let eta = self.eta();
        let clip = self.config.weight_clip.map(T::of);
        let params = self.model.party_mut(party);
        params.axpy(-eta, grads)?;
        if let Some(c) = clip {
            params.clamp(c);
        }
        Ok(())
    }

    fn check_data(&self, data: &RoundDataset<T>) -> Result<()> {
        if data.num_sus() != self.model.num_parties() {
            return Err(Error::shape(
                "round data",
                format!("{} SU feature blocks", self.model.num_parties()),
                data.num_sus(),
            ));
        }
        for (k, (f, e)) in data.features().iter().zip(&self.model.extractors).enumerate() {
            if f.cols() != e.input_size() {
                return Err(Error::shape(
                    "round data",
                    format!("SU {} features of width {}", k + 1, e.input_size()),
                    f.cols(),
                ));
            }
        }
        if data.labels().cols() != self.model.head.output_size() {
            return Err(Error::shape(
                "round data",
                format!("{} label columns", self.model.head.output_size()),
                data.labels().cols(),
            ));
        }
        if data.num_train() == 0 {
            return Err(Error::Config("a round needs training rows".into()));
        }
        Ok(())
    }

    fn finite(&self, v: T, what: &'static str) -> Result<f64> {
        let v = v.as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Divergence {
                round: self.round + 1,
                what,
            })
        }
    }

    fn finish_round(&mut self, data: &RoundDataset<T>, started: Instant, pre: f64, up: u64, down: u64) -> Result<RoundMetrics> {
        if !self.model.is_finite() {
            return Err(Error::Divergence {
                round: self.round + 1,
                what: "model parameters",
            });
        }
        let test = evaluate(&self.model, data, self.config.eval_mode, &self.config.quantizer)?;
        let test_loss = self.finite(test, "test loss")?;
        if let Some(trace) = self.trace.as_mut() {
            trace.observe_model(self.model.max_abs().as_f64());
        }
        self.round += 1;
        Ok(RoundMetrics {
            round: self.round,
            train_loss_pre: pre,
            test_loss,
            bits_uplink: up,
            bits_downlink: down,
            wall_time: started.elapsed().as_secs_f64(),
        })
    }

    /// Runs one round of `algorithm`.
    pub fn step(&mut self, algorithm: Algorithm, lc_freeze: usize, data: &RoundDataset<T>) -> Result<RoundMetrics> {
        match algorithm {
            Algorithm::Ovfl => ovfl_round(self, data),
            Algorithm::Cc => cc_round(self, data),
            Algorithm::Lc => lc_round(self, data, lc_freeze),
        }
    }
}

/// One OVFL global round with parties updated in index order.
pub fn ovfl_round<T: Scalar>(state: &mut TrainerState<T>, data: &RoundDataset<T>) -> Result<RoundMetrics> {
    let order: Vec<usize> = (0..=state.model.num_parties()).collect();
    ovfl_round_ordered(state, data, &order)
}

/// [`ovfl_round`] with an explicit party update order (a permutation of `0..=K`).
pub fn ovfl_round_ordered<T: Scalar>(
    state: &mut TrainerState<T>,
    data: &RoundDataset<T>,
    order: &[usize],
) -> Result<RoundMetrics> {
    let started = Instant::now();
    state.check_data(data)?;
    let parties = state.model.num_parties();
    let mut seen = order.to_vec();
    seen.sort_unstable();
    if seen != (0..=parties).collect::<Vec<_>>() {
        return Err(Error::Protocol(format!("party order {order:?} is not a permutation of 0..={parties}")));
    }
    let train = data.train();
    let pre = state.model.loss(&train.features, &train.labels)?;
    let pre = state.finite(pre, "training loss")?;

    let quantizer = state.config.quantizer;
    let rep = ModelRepresentation::build(&state.model, &train.features, &quantizer)?;
    let clean = if state.trace.is_some() && !quantizer.is_lossless() {
        Some(ModelRepresentation::build(&state.model, &train.features, &QuantizerSpec::identity())?)
    } else {
        None
    };

    for &k in order {
        let features = (k > 0).then(|| &train.features[k - 1]);
        let mut history: Vec<(Vec<T>, Vec<T>)> = Vec::new();
        for tau in 0..state.config.local_iters {
            let own = state.model.party(k);
            let (_, grads) = partial_gradient(k, &rep, own, features, &train.labels)?;
            if let Some(trace) = state.trace.as_mut() {
                let reference = match &clean {
                    Some(c) => partial_gradient(k, c, own, features, &train.labels)?.1,
                    None => grads.clone(),
                };
                let gap = grads
                    .values()
                    .zip(reference.values())
                    .fold(0.0f64, |m, (a, b)| m.max((*a - *b).abs().as_f64()));
                let stats = IterationStats {
                    round: state.round + 1,
                    tau,
                    party: k,
                    grad_norm: grads.squared_norm().as_f64().sqrt(),
                    quant_gap: gap,
                };
                history.push((own.flatten(), reference.flatten()));
                trace.iterations.push(stats);
            }
            state.apply(k, &grads)?;
        }
        if state.trace.is_some() {
            record_smoothness(state, &history);
        }
    }
    let up = rep.total_uplink();
    state.finish_round(data, started, pre, up, rep.bits_down)
}

fn record_smoothness<T: Scalar>(state: &mut TrainerState<T>, history: &[(Vec<T>, Vec<T>)]) {
    let n = history.len();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    if pairs.len() > SMOOTHNESS_PAIRS_PER_ROUND {
        let picked = index::sample(&mut state.trace_rng, pairs.len(), SMOOTHNESS_PAIRS_PER_ROUND);
        pairs = picked.into_iter().map(|i| pairs[i]).collect();
    }
    let trace = state.trace.as_mut().expect("tracing enabled");
    for (a, b) in pairs {
        let dist = |x: &[T], y: &[T]| -> f64 {
            x.iter()
                .zip(y)
                .map(|(p, q)| (*p - *q).as_f64().powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let dtheta = dist(&history[a].0, &history[b].0);
        if dtheta > 0.0 {
            trace.smoothness_ratios.push(dist(&history[a].1, &history[b].1) / dtheta);
        }
    }
}

/// Centralized baseline: the fusion center receives the raw training features
/// (32-bit floats) and runs `E` full-batch steps on the composite network.
pub fn cc_round<T: Scalar>(state: &mut TrainerState<T>, data: &RoundDataset<T>) -> Result<RoundMetrics> {
    let started = Instant::now();
    state.check_data(data)?;
    let train = data.train();
    let mut pre = None;
    for tau in 0..state.config.local_iters {
        let (loss, grads) = state.model.loss_and_grad(&train.features, &train.labels)?;
        if tau == 0 {
            pre = Some(state.finite(loss, "training loss")?);
        }
        for k in 0..=state.model.num_parties() {
            let g = if k == 0 { &grads.head } else { &grads.extractors[k - 1] };
            if let Some(trace) = state.trace.as_mut() {
                trace.iterations.push(IterationStats {
                    round: state.round + 1,
                    tau,
                    party: k,
                    grad_norm: g.squared_norm().as_f64().sqrt(),
                    quant_gap: 0.0,
                });
            }
            state.apply(k, g)?;
        }
    }
    let up = raw_feature_bits(data);
    state.finish_round(data, started, pre.expect("at least one iteration"), up, 0)
}

/// Bits to ship every SU's raw training rows as 32-bit floats.
pub fn raw_feature_bits<T: Scalar>(data: &RoundDataset<T>) -> u64 {
    data.train()
        .features
        .iter()
        .map(|f| f.len() as u64 * FLOAT_BITS as u64)
        .sum()
}

/// Lazy baseline: OVFL for rounds `1..=freeze_after`, evaluation only afterwards.
pub fn lc_round<T: Scalar>(
    state: &mut TrainerState<T>,
    data: &RoundDataset<T>,
    freeze_after: usize,
) -> Result<RoundMetrics> {
    if freeze_after == 0 {
        return Err(Error::Config("lc_freeze must be at least 1".into()));
    }
    if state.round < freeze_after {
        return ovfl_round(state, data);
    }
    let started = Instant::now();
    state.check_data(data)?;
    let train = data.train();
    let pre = state.model.loss(&train.features, &train.labels)?;
    let pre = state.finite(pre, "training loss")?;
    state.finish_round(data, started, pre, 0, 0)
}

/// Test loss of `model` on the round's test rows. In quantized mode the test
/// embeddings pass through `quantizer` before reaching the head.
pub fn evaluate<T: Scalar>(
    model: &SplitModel<T>,
    data: &RoundDataset<T>,
    mode: EvalMode,
    quantizer: &QuantizerSpec,
) -> Result<T> {
    let test = data.test();
    if test.rows() == 0 {
        return Err(Error::Config("evaluation needs test rows".into()));
    }
    match mode {
        EvalMode::FullPrecision => model.loss(&test.features, &test.labels),
        EvalMode::Quantized => {
            let embeddings = model
                .embeddings(&test.features)?
                .iter()
                .map(|h| quantizer.quantize(h).map(|q| q.reconstructed))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = embeddings.iter().collect();
            let pred = crate::nn::predict(&model.head, &DenseMatrix::hconcat(&refs)?)?;
            crate::nn::mse_loss(&pred, &test.labels)
        }
    }
}

/// Drives a trainer over a sequence of rounds.
pub fn run<'a, T: Scalar>(
    state: &mut TrainerState<T>,
    algorithm: Algorithm,
    lc_freeze: usize,
    rounds: impl IntoIterator<Item = &'a RoundDataset<T>>,
) -> Result<RunLog> {
    let mut log = RunLog::default();
    for data in rounds {
        log.rounds.push(state.step(algorithm, lc_freeze, data)?);
    }
    log.trace = state.trace.clone();
    Ok(log)
}

/// Parameters of every party as seen by [`MlpParams`]; handy for comparisons.
pub fn parties<T: Scalar>(model: &SplitModel<T>) -> impl Iterator<Item = &MlpParams<T>> {
    std::iter::once(&model.head).chain(model.extractors.iter())
}
