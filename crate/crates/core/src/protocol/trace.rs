use serde::{Deserialize, Serialize};

/// Gradient statistics of one local iteration of one party.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// 1-based global round.
    pub round: usize,
    pub tau: usize,
    pub party: usize,
    /// Norm of the gradient the party applied.
    pub grad_norm: f64,
    /// Largest element gap between the applied gradient and the gradient the
    /// party would compute from an unquantized representation.
    pub quant_gap: f64,
}

/// Per-iteration record kept when gradient tracing is enabled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientTrace {
    pub iterations: Vec<IterationStats>,
    /// `|G^{tau'} - G^{tau}| / |theta^{tau'} - theta^{tau}|` for sampled iteration
    /// pairs of the same party within a round.
    pub smoothness_ratios: Vec<f64>,
    /// Largest parameter magnitude over every model visited.
    pub max_abs_param: f64,
    /// Length of the flattened model.
    pub num_params: usize,
}

impl GradientTrace {
    pub fn new(num_params: usize) -> Self {
        Self {
            num_params,
            ..Self::default()
        }
    }

    pub fn observe_model(&mut self, max_abs: f64) {
        self.max_abs_param = self.max_abs_param.max(max_abs);
    }
}
