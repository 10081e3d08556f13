//! Executes configs: data generation, training, analysis and CSV output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ovfl::analysis::{pool_rounds, pooled_loss, probe_assumptions, refine_hindsight, regret_curve, AssumptionProbe, RegretRecord};
use ovfl::environment::{load_trace, parse_trace, Environment, SensingStream, Trace};
use ovfl::nn::{Architecture, SplitModel};
use ovfl::protocol::{RunLog, TrainerState};
use ovfl::{Dataset, Model};
use rayon::prelude::*;

use crate::config::{Cell, RunConfig, TraceConfig};
use crate::presets;

pub const RUN_HEADER: [&str; 7] = ["round", "train_loss", "test_loss", "bits_up", "bits_down", "cum_bits", "wall_ms"];

/// A finished run and, when enabled, its regret analysis.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: RunLog,
    pub analysis: Option<AnalysisOutput>,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub regret: RegretRecord,
    pub probe: AssumptionProbe,
    pub comparator_loss: f64,
    /// Pooled loss of every model the learner started a round from.
    pub visited_losses: Vec<f64>,
    pub comparator_iterations: usize,
    pub comparator: Model,
}

impl AnalysisOutput {
    pub fn best_visited_loss(&self) -> f64 {
        self.visited_losses.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn architecture(config: &RunConfig) -> Architecture {
    Architecture::sensing(config.world.num_sus, config.world.num_pus())
}

fn traces(t: &TraceConfig, num_sus: usize) -> Result<Vec<Trace>> {
    let routes: Vec<Vec<[f64; 2]>> = if let Some(name) = &t.builtin {
        let Some(files) = presets::builtin_traces(name) else {
            bail!("unknown builtin trace set `{name}`");
        };
        files
            .iter()
            .map(|text| parse_trace(text).map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?
    } else {
        let dir = t.dir.as_ref().expect("validated: dir or builtin");
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading trace directory {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .with_context(|| format!("reading trace directory {}", dir.display()))?;
        files.retain(|p| p.is_file());
        files.sort();
        files.iter().map(|p| Ok(load_trace(p)?)).collect::<Result<_>>()?
    };
    if routes.len() < num_sus {
        bail!("{} SUs but only {} trace files", num_sus, routes.len());
    }
    if t.speeds.len() != 1 && t.speeds.len() != num_sus {
        bail!("traces.speeds needs 1 or {num_sus} entries, got {}", t.speeds.len());
    }
    routes
        .into_iter()
        .take(num_sus)
        .enumerate()
        .map(|(k, w)| Ok(Trace::new(w, t.speeds[k.min(t.speeds.len() - 1)])?))
        .collect()
}

pub fn environment(config: &RunConfig, seed: u64) -> Result<Environment> {
    let world = config.world.clone();
    Ok(match &config.traces {
        Some(t) => Environment::with_traces(world.clone(), traces(t, world.num_sus)?, seed)?,
        None => Environment::new(world, seed)?,
    })
}

/// Standardized datasets of every round. The stream does not depend on the
/// model, so it can be drawn up front.
pub fn generate_rounds(config: &RunConfig, seed: u64) -> Result<Vec<Dataset>> {
    Ok(SensingStream::new(environment(config, seed)?).take_rounds(config.rounds))
}

/// Trains on `data`, calling `observe` with the model every round starts from.
pub fn train_rounds(
    config: &RunConfig,
    seed: u64,
    data: &[Dataset],
    mut observe: impl FnMut(&Model) -> Result<()>,
) -> Result<(RunLog, Model)> {
    let model = SplitModel::init(&architecture(config), seed)?;
    let mut state = TrainerState::new(model, config.protocol())?;
    let mut log = RunLog::default();
    for d in data {
        observe(&state.model)?;
        log.rounds.push(state.step(config.algorithm, config.lc_freeze, d)?);
    }
    log.trace = state.trace.take();
    Ok((log, state.model))
}

/// Runs one config for one seed.
pub fn run_single(config: &RunConfig, seed: u64) -> Result<RunOutput> {
    let data = generate_rounds(config, seed)?;
    if !config.analysis.enabled {
        let (log, _) = train_rounds(config, seed, &data, |_| Ok(()))?;
        return Ok(RunOutput { log, analysis: None });
    }
    let pooled = pool_rounds(&data)?;
    let mut visited_losses = Vec::with_capacity(data.len());
    let mut best: Option<(f64, Model)> = None;
    let warm = config.analysis.warm_start;
    let (log, _) = train_rounds(config, seed, &data, |m| {
        let l = pooled_loss(m, &pooled)?;
        visited_losses.push(l);
        if warm && best.as_ref().is_none_or(|(b, _)| l < *b) {
            best = Some((l, m.clone()));
        }
        Ok(())
    })?;
    let start = match best {
        Some((_, m)) => m,
        None => SplitModel::init(&architecture(config), seed)?,
    };
    let fit = refine_hindsight(&pooled, start, config.analysis.comparator_budget)?;
    let regret = regret_curve(&log, &data, &fit.model)?;
    let probe = probe_assumptions(&log)?;
    Ok(RunOutput {
        analysis: Some(AnalysisOutput {
            regret,
            probe,
            comparator_loss: fit.pooled_loss,
            visited_losses,
            comparator_iterations: fit.iterations,
            comparator: fit.model,
        }),
        log,
    })
}

/// Per-round CSV with cumulative up+down bits.
pub fn write_run_csv<W: Write>(out: W, log: &RunLog, wall_clock: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(RUN_HEADER)?;
    let mut cum: u64 = 0;
    for r in &log.rounds {
        cum += r.bits_uplink + r.bits_downlink;
        let wall = if wall_clock { r.wall_time * 1e3 } else { 0.0 };
        w.write_record([
            r.round.to_string(),
            r.train_loss_pre.to_string(),
            r.test_loss.to_string(),
            r.bits_uplink.to_string(),
            r.bits_downlink.to_string(),
            cum.to_string(),
            wall.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// What an experiment wrote.
#[derive(Debug, Clone, Default)]
pub struct ExperimentSummary {
    pub dir: PathBuf,
    pub run_files: Vec<PathBuf>,
    pub regret_file: Option<PathBuf>,
    pub probe_file: Option<PathBuf>,
}

/// Every (cell, seed) pair of a config.
pub fn jobs(config: &RunConfig) -> Vec<(Cell, u64)> {
    config
        .cells()
        .into_iter()
        .flat_map(|c| config.seeds.iter().map(move |&s| (c.clone(), s)))
        .collect()
}

/// Runs every cell and seed of `config`, writing CSVs under
/// `output_dir/<name>/`.
pub fn run_experiment(config: &RunConfig, output_dir: &Path) -> Result<ExperimentSummary> {
    Ok(run_experiment_outputs(config, output_dir)?.0)
}

/// Every run of an experiment with its cell and seed, in job order.
pub type ExperimentOutputs = Vec<(Cell, u64, RunOutput)>;

/// [`run_experiment`] that also hands back every run.
pub fn run_experiment_outputs(config: &RunConfig, output_dir: &Path) -> Result<(ExperimentSummary, ExperimentOutputs)> {
    config.validate()?;
    let dir = output_dir.join(&config.name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let jobs = jobs(config);
    let work = || -> Vec<Result<RunOutput>> {
        jobs.par_iter()
            .map(|(cell, seed)| {
                run_single(&cell.config, *seed).with_context(|| format!("cell {} seed {seed}", cell.label))
            })
            .collect()
    };
    let results = if config.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(config.threads).build()?.install(work)
    } else {
        work()
    };
    let mut summary = ExperimentSummary {
        dir: dir.clone(),
        ..Default::default()
    };
    let mut outputs = Vec::with_capacity(jobs.len());
    for ((cell, seed), result) in jobs.into_iter().zip(results) {
        let out = result?;
        let path = dir.join(format!("{}_seed{}.csv", cell.label, seed));
        write_file(&path, |b| write_run_csv(b, &out.log, config.wall_clock))?;
        summary.run_files.push(path);
        outputs.push((cell, seed, out));
    }
    if config.analysis.enabled {
        let regret = dir.join("regret.csv");
        write_file(&regret, |b| write_regret_csv(b, &outputs))?;
        let probes = dir.join("probes.csv");
        write_file(&probes, |b| write_probe_csv(b, &outputs))?;
        summary.regret_file = Some(regret);
        summary.probe_file = Some(probes);
    }
    Ok((summary, outputs))
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn write_regret_csv<W: Write>(out: W, runs: &[(Cell, u64, RunOutput)]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["cell", "seed", "round", "learner_loss", "comparator_loss", "cumulative_regret", "average_regret"])?;
    for (cell, seed, out) in runs {
        let a = out.analysis.as_ref().expect("analysis enabled");
        let r = &a.regret;
        for t in 0..r.len() {
            w.write_record([
                cell.label.clone(),
                seed.to_string(),
                (t + 1).to_string(),
                r.learner_loss[t].to_string(),
                r.comparator_loss[t].to_string(),
                r.cumulative_regret[t].to_string(),
                r.average_regret[t].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_probe_csv<W: Write>(out: W, runs: &[(Cell, u64, RunOutput)]) -> Result<()> {
    let mut w = writer(out);
    w.write_record([
        "cell",
        "seed",
        "l_hat",
        "rho_hat",
        "beta_hat",
        "d",
        "epsilon_hat",
        "epsilon_pairs",
        "comparator_pooled_loss",
        "best_visited_pooled_loss",
        "comparator_iterations",
    ])?;
    for (cell, seed, out) in runs {
        let a = out.analysis.as_ref().expect("analysis enabled");
        let p = &a.probe;
        w.write_record([
            cell.label.clone(),
            seed.to_string(),
            p.l_hat.to_string(),
            p.rho_hat.to_string(),
            p.beta_hat.to_string(),
            p.d.to_string(),
            p.epsilon_hat.to_string(),
            p.epsilon_pairs.to_string(),
            a.comparator_loss.to_string(),
            a.best_visited_loss().to_string(),
            a.comparator_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
