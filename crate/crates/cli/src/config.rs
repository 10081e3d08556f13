//! Run configuration: a TOML document with defaults for every key.

use std::path::{Path, PathBuf};

use ovfl::environment::{default_pu_layout, WorldConfig};
use ovfl::protocol::{Algorithm, EvalMode, ProtocolConfig};
use ovfl::quantize::{QuantizerKind, QuantizerSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Prefix of the output directory of this experiment.
    pub name: String,
    pub algorithm: Algorithm,
    /// Local iterations per round.
    #[serde(alias = "E")]
    pub local_iters: usize,
    pub eta: f64,
    /// Global rounds.
    #[serde(alias = "T")]
    pub rounds: usize,
    pub quantizer: QuantizerSpec,
    pub seeds: Vec<u64>,
    pub lc_freeze: usize,
    pub eval_mode: EvalMode,
    pub weight_clip: Option<f64>,
    pub output_dir: PathBuf,
    /// Write measured wall time; off keeps outputs byte-identical.
    pub wall_clock: bool,
    /// Worker threads for the grid; 0 picks the rayon default.
    pub threads: usize,
    pub world: WorldConfig,
    pub traces: Option<TraceConfig>,
    pub analysis: AnalysisConfig,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            algorithm: Algorithm::Ovfl,
            local_iters: 1,
            eta: 1e-4,
            rounds: 300,
            quantizer: QuantizerSpec::uniform(32),
            seeds: vec![0, 1, 2, 3, 4],
            lc_freeze: 50,
            eval_mode: EvalMode::FullPrecision,
            weight_clip: None,
            output_dir: PathBuf::from("results"),
            wall_clock: false,
            threads: 0,
            world: WorldConfig::default(),
            traces: None,
            analysis: AnalysisConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

/// Replayed SU routes, one CSV file per SU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    /// Directory of `x,y` files, used in file-name order. Relative paths are
    /// resolved against the config file.
    pub dir: Option<PathBuf>,
    /// Name of a route set shipped with the binary.
    pub builtin: Option<String>,
    /// Meters per round, one value per SU or a single shared value.
    pub speeds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub enabled: bool,
    /// Gradient evaluations for the hindsight comparator.
    pub comparator_budget: usize,
    /// Start the comparator from the visited model with the lowest pooled loss.
    pub warm_start: bool,
    pub trace_seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            comparator_budget: 100,
            warm_start: true,
            trace_seed: 0,
        }
    }
}

/// Lists that expand into the Cartesian product of cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub algorithm: Vec<Algorithm>,
    pub quantizer: Vec<QuantizerSpec>,
    #[serde(alias = "E")]
    pub local_iters: Vec<usize>,
    #[serde(alias = "v")]
    pub mobility_rate: Vec<f64>,
    pub num_pus: Vec<usize>,
    pub num_sus: Vec<usize>,
    pub eta: Vec<f64>,
}

impl GridConfig {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// One point of the grid: a config without grid lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub config: RunConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Reads, validates and resolves relative trace paths against the file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = config.traces.as_mut().and_then(|t| t.dir.as_mut()) {
            if dir.is_relative() {
                if let Some(parent) = path.parent() {
                    *dir = parent.join(&*dir);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, msg: String| Err(ConfigError::Invalid(format!("{field} {msg}")));
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1".into());
        }
        if self.local_iters == 0 {
            return bad("local_iters", "must be at least 1".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be a finite value >= 0, got {}", self.eta));
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed".into());
        }
        if self.lc_freeze == 0 {
            return bad("lc_freeze", "must be at least 1".into());
        }
        if let Some(c) = self.weight_clip {
            if c.is_nan() || c <= 0.0 {
                return bad("weight_clip", format!("must be positive, got {c}"));
            }
        }
        if self.analysis.comparator_budget == 0 {
            return bad("analysis.comparator_budget", "must be at least 1".into());
        }
        validate_quantizer(&self.quantizer)?;
        self.world.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(t) = &self.traces {
            if t.dir.is_some() == t.builtin.is_some() {
                return bad("traces", "needs exactly one of `dir` or `builtin`".into());
            }
            if t.speeds.is_empty() || t.speeds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return bad("traces.speeds", "must list finite non-negative speeds".into());
            }
        }
        let g = &self.grid;
        for q in &g.quantizer {
            validate_quantizer(q)?;
        }
        if g.local_iters.contains(&0) {
            return bad("grid.local_iters", "entries must be at least 1".into());
        }
        if g.num_pus.contains(&0) || g.num_sus.contains(&0) {
            return bad("grid", "PU and SU counts must be at least 1".into());
        }
        if g.mobility_rate.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("grid.mobility_rate", "entries must be finite and >= 0".into());
        }
        if g.eta.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("grid.eta", "entries must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            local_iters: self.local_iters,
            eta: self.eta,
            quantizer: self.quantizer,
            eval_mode: self.eval_mode,
            weight_clip: self.weight_clip,
            record_trace: self.analysis.enabled,
            trace_seed: self.analysis.trace_seed,
        }
    }

    /// Expands the grid. CC ignores the quantizer, so CC cells that differ only
    /// in quantizer collapse into one.
    pub fn cells(&self) -> Vec<Cell> {
        fn or<T: Clone>(list: &[T], fallback: T) -> Vec<T> {
            if list.is_empty() {
                vec![fallback]
            } else {
                list.to_vec()
            }
        }
        let g = &self.grid;
        let mut cells: Vec<Cell> = Vec::new();
        for &algorithm in &or(&g.algorithm, self.algorithm) {
            for &quantizer in &or(&g.quantizer, self.quantizer) {
                for &local_iters in &or(&g.local_iters, self.local_iters) {
                    for &v in &or(&g.mobility_rate, self.world.mobility_rate) {
                        for &n in &or(&g.num_pus, self.world.num_pus()) {
                            for &k in &or(&g.num_sus, self.world.num_sus) {
                                for &eta in &or(&g.eta, self.eta) {
                                    let mut c = self.clone();
                                    c.grid = GridConfig::default();
                                    c.algorithm = algorithm;
                                    c.quantizer = if algorithm == Algorithm::Cc {
                                        QuantizerSpec::identity()
                                    } else {
                                        quantizer
                                    };
                                    c.local_iters = local_iters;
                                    c.eta = eta;
                                    c.world.mobility_rate = v;
                                    c.world.num_sus = k;
                                    if n != self.world.num_pus() {
                                        c.world.pu_positions = default_pu_layout(n, c.world.area);
                                    }
                                    let label = cell_label(&c, g);
                                    if !cells.iter().any(|x| x.config == c) {
                                        cells.push(Cell { label, config: c });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

fn validate_quantizer(q: &QuantizerSpec) -> Result<(), ConfigError> {
    q.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
}

/// Short tag such as `u4`, `h2` or `id`.
pub fn quantizer_tag(q: &QuantizerSpec) -> String {
    match q.kind {
        QuantizerKind::Identity => "id".into(),
        QuantizerKind::UniformScalar => format!("u{}", q.bits_per_component),
        QuantizerKind::HexLattice => format!("h{}", q.bits_per_component),
    }
}

fn cell_label(c: &RunConfig, g: &GridConfig) -> String {
    let mut parts = vec![c.algorithm.name().to_string()];
    if c.algorithm != Algorithm::Cc {
        parts.push(quantizer_tag(&c.quantizer));
    }
    if g.local_iters.len() > 1 {
        parts.push(format!("E{}", c.local_iters));
    }
    if g.mobility_rate.len() > 1 {
        parts.push(format!("v{}", c.world.mobility_rate));
    }
    if g.num_pus.len() > 1 {
        parts.push(format!("N{}", c.world.num_pus()));
    }
    if g.num_sus.len() > 1 {
        parts.push(format!("K{}", c.world.num_sus));
    }
    if g.eta.len() > 1 {
        parts.push(format!("eta{}", c.eta));
    }
    parts.join("_")
}
