//! Regret against a hindsight comparator and empirical probes of the
//! smoothness / boundedness constants.

use serde::{Deserialize, Serialize};

use crate::environment::{Batch, RoundDataset};
use crate::error::{Error, Result};
use crate::nn::{Architecture, SplitModel};
use crate::protocol::RunLog;
use crate::scalar::Scalar;

/// Gradient-norm threshold at which the comparator fit stops early.
pub const HINDSIGHT_GRAD_TOL: f64 = 1e-6;
/// Default checkpoints of the average-regret trend test.
pub const REGRET_CHECKPOINTS: [usize; 4] = [75, 150, 225, 300];

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const MAX_STEP: f64 = 1e3;

/// Training rows of every round stacked into one batch.
///
/// All rounds must hold the same number of training rows, so the mean loss over
/// the stack equals the average of the per-round losses.
pub fn pool_rounds<T: Scalar>(rounds: &[RoundDataset<T>]) -> Result<Batch<T>> {
    let Some(first) = rounds.first() else {
        return Err(Error::Config("pooling needs at least one round".into()));
    };
    if let Some(r) = rounds.iter().find(|r| r.num_train() != first.num_train()) {
        return Err(Error::shape(
            "pool_rounds",
            format!("{} training rows per round", first.num_train()),
            format!("{} in round {}", r.num_train(), r.round()),
        ));
    }
    let batches: Vec<_> = rounds.iter().map(RoundDataset::train).collect();
    Batch::stack(&batches)
}

/// Pooled objective `(1/T) Σ_t F_t` over a batch built by [`pool_rounds`].
pub fn pooled_loss<T: Scalar>(model: &SplitModel<T>, pooled: &Batch<T>) -> Result<f64> {
    Ok(model.loss(&pooled.features, &pooled.labels)?.as_f64())
}

/// Result of a comparator fit.
#[derive(Debug, Clone)]
pub struct HindsightFit<T> {
    pub model: SplitModel<T>,
    pub pooled_loss: f64,
    pub start_loss: f64,
    pub grad_norm: f64,
    /// Gradient evaluations spent.
    pub iterations: usize,
}

/// Fits the fixed comparator from a fresh initialization drawn with `seed`.
pub fn hindsight_optimum<T: Scalar>(
    rounds: &[RoundDataset<T>],
    arch: &Architecture,
    budget: usize,
    seed: u64,
) -> Result<HindsightFit<T>> {
    let pooled = pool_rounds(rounds)?;
    refine_hindsight(&pooled, SplitModel::init(arch, seed)?, budget)
}

/// Full-batch gradient descent on the pooled objective from `start`, with a
/// backtracking (Armijo) step so every accepted step lowers the pooled loss.
/// Stops after `budget` gradient evaluations or when the gradient norm drops
/// below [`HINDSIGHT_GRAD_TOL`].
pub fn refine_hindsight<T: Scalar>(pooled: &Batch<T>, start: SplitModel<T>, budget: usize) -> Result<HindsightFit<T>> {
    if budget == 0 {
        return Err(Error::Config("hindsight budget must be at least 1".into()));
    }
    let mut model = start;
    let mut step = 1.0;
    let mut iterations = 0;
    let (mut loss, mut grads) = model.loss_and_grad(&pooled.features, &pooled.labels)?;
    let start_loss = finite(loss.as_f64(), iterations)?;
    let mut grad_sq = grads.squared_norm().as_f64();
    iterations += 1;
    while iterations < budget && grad_sq.sqrt() >= HINDSIGHT_GRAD_TOL {
        let mut accepted = false;
        while step >= MIN_STEP {
            let mut trial = model.clone();
            trial.axpy(T::of(-step), &grads)?;
            let trial_loss = trial.loss(&pooled.features, &pooled.labels)?.as_f64();
            if trial_loss.is_finite() && trial_loss <= loss.as_f64() - ARMIJO * step * grad_sq {
                model = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(MAX_STEP);
        (loss, grads) = model.loss_and_grad(&pooled.features, &pooled.labels)?;
        finite(loss.as_f64(), iterations)?;
        grad_sq = grads.squared_norm().as_f64();
        iterations += 1;
    }
    Ok(HindsightFit {
        model,
        pooled_loss: loss.as_f64(),
        start_loss,
        grad_norm: grad_sq.sqrt(),
        iterations,
    })
}

fn finite(v: f64, iteration: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            round: iteration,
            what: "hindsight pooled loss",
        })
    }
}

/// Learner and comparator losses per round with the running regret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub learner_loss: Vec<f64>,
    pub comparator_loss: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub average_regret: Vec<f64>,
}

impl RegretRecord {
    /// Builds the running sums from paired per-round losses.
    pub fn from_losses(learner_loss: Vec<f64>, comparator_loss: Vec<f64>) -> Result<Self> {
        if learner_loss.len() != comparator_loss.len() {
            return Err(Error::shape(
                "regret",
                format!("{} comparator losses", learner_loss.len()),
                comparator_loss.len(),
            ));
        }
        let mut cumulative_regret = Vec::with_capacity(learner_loss.len());
        let mut sum = 0.0;
        for (l, c) in learner_loss.iter().zip(&comparator_loss) {
            sum += l - c;
            cumulative_regret.push(sum);
        }
        let average_regret = cumulative_regret
            .iter()
            .enumerate()
            .map(|(t, r)| r / (t + 1) as f64)
            .collect();
        Ok(Self {
            learner_loss,
            comparator_loss,
            cumulative_regret,
            average_regret,
        })
    }

    pub fn len(&self) -> usize {
        self.learner_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learner_loss.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// Average regret at 1-based rounds `checkpoints`.
    pub fn average_at(&self, checkpoints: &[usize]) -> Result<Vec<f64>> {
        checkpoints
            .iter()
            .map(|&c| {
                c.checked_sub(1)
                    .and_then(|i| self.average_regret.get(i).copied())
                    .ok_or_else(|| Error::Config(format!("checkpoint {c} outside 1..={}", self.len())))
            })
            .collect()
    }
}

/// Regret of a run against `comparator`, evaluated on the same training rows
/// the learner saw in each round.
pub fn regret_curve<T: Scalar>(
    log: &RunLog,
    rounds: &[RoundDataset<T>],
    comparator: &SplitModel<T>,
) -> Result<RegretRecord> {
    if rounds.len() < log.rounds.len() {
        return Err(Error::shape("regret_curve", format!("{} rounds of data", log.rounds.len()), rounds.len()));
    }
    let comparator_loss = rounds[..log.rounds.len()]
        .iter()
        .map(|r| Ok(comparator.loss(&r.train().features, &r.train().labels)?.as_f64()))
        .collect::<Result<Vec<_>>>()?;
    RegretRecord::from_losses(log.learner_losses(), comparator_loss)
}

/// True when every value is strictly below the one before it.
pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// Empirical stand-ins for the constants of the regret analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionProbe {
    /// Largest partial-gradient norm.
    pub l_hat: f64,
    /// Largest element gap between quantized and unquantized partial gradients.
    pub rho_hat: f64,
    /// Largest parameter magnitude.
    pub beta_hat: f64,
    /// Number of model parameters.
    pub d: usize,
    /// Largest gradient-variation to parameter-variation ratio.
    pub epsilon_hat: f64,
    /// Iteration pairs behind `epsilon_hat`.
    pub epsilon_pairs: usize,
}

pub fn probe_assumptions(log: &RunLog) -> Result<AssumptionProbe> {
    let trace = log
        .trace
        .as_ref()
        .ok_or_else(|| Error::Config("probes need a run recorded with record_trace = true".into()))?;
    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    Ok(AssumptionProbe {
        l_hat: fold(&mut trace.iterations.iter().map(|s| s.grad_norm)),
        rho_hat: fold(&mut trace.iterations.iter().map(|s| s.quant_gap)),
        beta_hat: trace.max_abs_param,
        d: trace.num_params,
        epsilon_hat: fold(&mut trace.smoothness_ratios.iter().copied()),
        epsilon_pairs: trace.smoothness_ratios.len(),
    })
}
