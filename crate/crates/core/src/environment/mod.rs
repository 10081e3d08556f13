//! Simulated cooperative sensing world: PU/SU geometry, log-distance path loss
//! with a spatially smooth shadowing field, SU mobility, and per-round datasets.

mod dataset;
mod mobility;
mod radio;
mod shadowing;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{Batch, FeatureScaler, RoundDataset};
pub use mobility::{load_trace, parse_trace, step_mobility, SuState, Trace};
pub use radio::{distance, received_power};
pub use shadowing::{ShadowingMap, MAX_SHADOW_MEAN_DB};

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// Number of location columns leading every feature row.
pub const LOCATION_DIMS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Side of the square area in meters.
    pub area: f64,
    pub num_sus: usize,
    /// PU locations in meters; their count is the number of PUs.
    pub pu_positions: Vec<[f64; 2]>,
    /// Transmit power levels a PU picks from, uniformly, per slot.
    pub power_levels: Vec<f64>,
    pub pathloss_exponent: f64,
    pub slots_per_round: usize,
    /// Leading slots used for training; the rest are test samples.
    pub train_slots: usize,
    pub rss_per_slot: usize,
    /// Random-walk distance per round in meters.
    pub mobility_rate: f64,
    /// Standard deviation of the shadowing draw around its local mean, dB.
    pub shadow_noise_std: f64,
    pub shadow_grid: usize,
    /// Distances are clamped below this value, meters.
    pub min_distance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            area: 500.0,
            num_sus: 4,
            pu_positions: default_pu_layout(2, 500.0),
            power_levels: vec![1.0, 2.0, 3.0, 4.0],
            pathloss_exponent: 4.0,
            slots_per_round: 40,
            train_slots: 20,
            rss_per_slot: 100,
            mobility_rate: 1.0,
            shadow_noise_std: 1.0,
            shadow_grid: 10,
            min_distance: 1.0,
        }
    }
}

/// `n` PUs on a circle of radius `area / 4` around the center, the first due west.
pub fn default_pu_layout(n: usize, area: f64) -> Vec<[f64; 2]> {
    let c = area / 2.0;
    if n == 1 {
        return vec![[c, c]];
    }
    (0..n)
        .map(|i| {
            let a = std::f64::consts::PI + std::f64::consts::TAU * i as f64 / n as f64;
            let snap = |v: f64| (v * 1e6).round() / 1e6;
            [snap(c + area / 4.0 * a.cos()), snap(c + area / 4.0 * a.sin())]
        })
        .collect()
}

impl WorldConfig {
    pub fn num_pus(&self) -> usize {
        self.pu_positions.len()
    }

    pub fn feature_dim(&self) -> usize {
        LOCATION_DIMS + self.rss_per_slot
    }

    pub fn test_slots(&self) -> usize {
        self.slots_per_round - self.train_slots
    }

    pub fn with_pus(mut self, n: usize) -> Self {
        self.pu_positions = default_pu_layout(n, self.area);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("world.{field}: {why}")));
        if !(self.area > 0.0 && self.area.is_finite()) {
            return bad("area", format!("must be positive, got {}", self.area));
        }
        if self.num_sus == 0 {
            return bad("num_sus", "must be at least 1".into());
        }
        if self.pu_positions.is_empty() {
            return bad("pu_positions", "need at least one PU".into());
        }
        for p in &self.pu_positions {
            if !(0.0..=self.area).contains(&p[0]) || !(0.0..=self.area).contains(&p[1]) {
                return bad("pu_positions", format!("{p:?} is outside the area"));
            }
        }
        if self.power_levels.is_empty() || self.power_levels.iter().any(|p| !p.is_finite()) {
            return bad("power_levels", "need at least one finite level".into());
        }
        if !self.pathloss_exponent.is_finite() {
            return bad("pathloss_exponent", "must be finite".into());
        }
        if self.train_slots == 0 || self.train_slots >= self.slots_per_round {
            return bad(
                "train_slots",
                format!("need 1 <= train_slots < slots_per_round ({})", self.slots_per_round),
            );
        }
        if self.rss_per_slot == 0 {
            return bad("rss_per_slot", "must be at least 1".into());
        }
        if !(self.mobility_rate >= 0.0 && self.mobility_rate.is_finite()) {
            return bad("mobility_rate", format!("must be >= 0, got {}", self.mobility_rate));
        }
        if !(self.shadow_noise_std >= 0.0 && self.shadow_noise_std.is_finite()) {
            return bad("shadow_noise_std", "must be >= 0".into());
        }
        if self.shadow_grid < 2 {
            return bad("shadow_grid", "must be at least 2".into());
        }
        if self.min_distance.is_nan() || self.min_distance <= 0.0 {
            return bad("min_distance", "must be positive".into());
        }
        Ok(())
    }
}

/// Draws one round of sensing data at the current SU positions.
///
/// Every slot fixes one power level per PU; each SU then records
/// `rss_per_slot` received powers, each with fresh shadowing draws. Rows are
/// `[x, y, rss_1 .. rss_R]`, labels the PU levels of the slot.
pub fn sample_round<R: Rng + ?Sized>(
    world: &WorldConfig,
    shadow: &ShadowingMap,
    state: &SuState,
    round: usize,
    rng: &mut R,
) -> RoundDataset<f64> {
    let n_pu = world.num_pus();
    let dim = world.feature_dim();
    let slots = world.slots_per_round;
    let mut blocks = vec![Vec::with_capacity(slots * dim); state.positions.len()];
    let mut labels = Vec::with_capacity(slots * n_pu);
    let mut draws = vec![0.0; n_pu];
    for _ in 0..slots {
        let levels: Vec<f64> = (0..n_pu)
            .map(|_| world.power_levels[rng.random_range(0..world.power_levels.len())])
            .collect();
        for (block, &pos) in blocks.iter_mut().zip(&state.positions) {
            block.extend_from_slice(&pos);
            for _ in 0..world.rss_per_slot {
                for d in draws.iter_mut() {
                    *d = shadow.sample(pos, rng);
                }
                let (_, total) = received_power(
                    &levels,
                    pos,
                    &world.pu_positions,
                    world.pathloss_exponent,
                    &draws,
                    world.min_distance,
                );
                block.push(total);
            }
        }
        labels.extend_from_slice(&levels);
    }
    let features = blocks
        .into_iter()
        .map(|b| DenseMatrix::new(slots, dim, b).expect("rows sized above"))
        .collect();
    let labels = DenseMatrix::new(slots, n_pu, labels).expect("rows sized above");
    RoundDataset::new(round, features, labels, world.train_slots).expect("consistent shapes")
}

/// Seed of the shadowing field, kept apart from the data stream.
fn shadow_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0F5A_D0E5_CAFE
}

/// The world evolving over rounds; yields raw datasets.
#[derive(Debug, Clone)]
pub struct Environment {
    world: WorldConfig,
    shadow: ShadowingMap,
    state: SuState,
    rng: ChaCha8Rng,
    next_round: usize,
}

impl Environment {
    /// Random initial SU positions and random-walk mobility.
    pub fn new(world: WorldConfig, seed: u64) -> Result<Self> {
        world.validate()?;
        let shadow = ShadowingMap::build(
            shadow_seed(seed),
            world.shadow_grid,
            world.area,
            world.shadow_noise_std,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = SuState::random(world.num_sus, world.area, &mut rng);
        Ok(Self {
            world,
            shadow,
            state,
            rng,
            next_round: 0,
        })
    }

    /// SUs follow the given routes, one per SU.
    pub fn with_traces(world: WorldConfig, traces: Vec<Trace>, seed: u64) -> Result<Self> {
        world.validate()?;
        if traces.len() != world.num_sus {
            return Err(Error::Config(format!(
                "{} traces for {} SUs",
                traces.len(),
                world.num_sus
            )));
        }
        for t in &traces {
            if let Some(p) = t
                .waypoints()
                .iter()
                .find(|p| !(0.0..=world.area).contains(&p[0]) || !(0.0..=world.area).contains(&p[1]))
            {
                return Err(Error::Config(format!("trace waypoint {p:?} is outside the area")));
            }
        }
        let mut env = Self::new(world, seed)?;
        env.state = SuState::from_traces(traces);
        Ok(env)
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    pub fn shadow(&self) -> &ShadowingMap {
        &self.shadow
    }

    pub fn state(&self) -> &SuState {
        &self.state
    }

    /// SUs move at the start of every round except the first.
    pub fn next_round(&mut self) -> RoundDataset<f64> {
        if self.next_round > 0 {
            step_mobility(
                &mut self.state,
                self.world.mobility_rate,
                self.world.area,
                &mut self.rng,
            );
        }
        let round = self.next_round;
        self.next_round += 1;
        sample_round(&self.world, &self.shadow, &self.state, round, &mut self.rng)
    }
}

/// Standardized data stream: every SU standardizes its own features with
/// statistics fitted on its first-round training rows and frozen afterwards.
///
/// Location columns have no spread within a round, so they are scaled by the
/// standard deviation of a uniform coordinate over the area instead.
#[derive(Debug, Clone)]
pub struct SensingStream {
    env: Environment,
    scalers: Option<Vec<FeatureScaler>>,
}

impl SensingStream {
    pub fn new(env: Environment) -> Self {
        Self { env, scalers: None }
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn scalers(&self) -> Option<&[FeatureScaler]> {
        self.scalers.as_deref()
    }

    pub fn next_round(&mut self) -> RoundDataset<f64> {
        let raw = self.env.next_round();
        let world = self.env.world();
        let scalers = self.scalers.get_or_insert_with(|| {
            let mut fallback = vec![world.area / 12f64.sqrt(); LOCATION_DIMS];
            fallback.resize(world.feature_dim(), 1.0);
            raw.train()
                .features
                .iter()
                .map(|b| FeatureScaler::fit(b, &fallback))
                .collect()
        });
        raw.map_features(|k, b| scalers[k].apply(b))
            .expect("standardizing keeps shapes")
    }

    pub fn take_rounds(&mut self, n: usize) -> Vec<RoundDataset<f64>> {
        (0..n).map(|_| self.next_round()).collect()
    }
}
