use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;

use super::radio::distance;
use crate::error::{Error, Result};

/// A waypoint route replayed at constant speed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    waypoints: Vec<[f64; 2]>,
    /// Meters advanced per round.
    speed: f64,
    segment: usize,
    along: f64,
}

impl Trace {
    pub fn new(waypoints: Vec<[f64; 2]>, speed: f64) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Config("a trace needs at least one waypoint".into()));
        }
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::Config(format!("trace speed must be >= 0, got {speed}")));
        }
        Ok(Self {
            waypoints,
            speed,
            segment: 0,
            along: 0.0,
        })
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn position(&self) -> [f64; 2] {
        let a = self.waypoints[self.segment];
        match self.waypoints.get(self.segment + 1) {
            Some(&b) => {
                let len = distance(a, b);
                if len == 0.0 {
                    return a;
                }
                let f = self.along / len;
                [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
            }
            None => a,
        }
    }

    /// Moves `dist` meters along the route, stopping at the final waypoint.
    pub fn advance(&mut self, dist: f64) {
        let mut left = dist;
        while self.segment + 1 < self.waypoints.len() {
            let len = distance(self.waypoints[self.segment], self.waypoints[self.segment + 1]);
            let remaining = len - self.along;
            if left < remaining {
                self.along += left;
                return;
            }
            left -= remaining;
            self.segment += 1;
            self.along = 0.0;
        }
    }

    pub fn finished(&self) -> bool {
        self.segment + 1 >= self.waypoints.len()
    }
}

/// Reads a route file: one `x,y` row (meters) per waypoint, optional header.
pub fn load_trace(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(&text).map_err(|message| Error::Trace {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_trace(text: &str) -> std::result::Result<Vec<[f64; 2]>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 2 {
            return Err(format!("row {}: expected `x,y`, got {} fields", i + 1, record.len()));
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse).collect();
        match parsed {
            Ok(v) => points.push([v[0], v[1]]),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("row {}: {e}", i + 1)),
        }
    }
    if points.is_empty() {
        return Err("no waypoints".into());
    }
    Ok(points)
}

/// Positions of the sensing users, optionally driven by replayed traces.
#[derive(Debug, Clone, PartialEq)]
pub struct SuState {
    pub positions: Vec<[f64; 2]>,
    pub traces: Option<Vec<Trace>>,
}

impl SuState {
    pub fn random<R: Rng + ?Sized>(num_sus: usize, area: f64, rng: &mut R) -> Self {
        let positions = (0..num_sus)
            .map(|_| [rng.random_range(0.0..=area), rng.random_range(0.0..=area)])
            .collect();
        Self {
            positions,
            traces: None,
        }
    }

    pub fn from_traces(traces: Vec<Trace>) -> Self {
        Self {
            positions: traces.iter().map(Trace::position).collect(),
            traces: Some(traces),
        }
    }
}

fn reflect(mut x: f64, area: f64) -> f64 {
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > area {
            x = 2.0 * area - x;
        } else {
            return x;
        }
    }
}

/// Moves every SU for one round.
///
/// Random walk: distance `v` along a uniform heading, reflecting at the area
/// borders. With traces loaded each SU advances along its route at the trace
/// speed instead and `v` is ignored.
pub fn step_mobility<R: Rng + ?Sized>(state: &mut SuState, v: f64, area: f64, rng: &mut R) {
    if let Some(traces) = state.traces.as_mut() {
        for (trace, pos) in traces.iter_mut().zip(state.positions.iter_mut()) {
            let speed = trace.speed();
            trace.advance(speed);
            *pos = trace.position();
        }
        return;
    }
    for pos in &mut state.positions {
        let heading = rng.random_range(0.0..TAU);
        pos[0] = reflect(pos[0] + v * heading.cos(), area);
        pos[1] = reflect(pos[1] + v * heading.sin(), area);
    }
}
