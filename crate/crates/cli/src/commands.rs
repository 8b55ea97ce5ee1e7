//! The work behind each subcommand, kept separate from argument parsing.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use gdb_core::metrics::MetricReport;
use gdb_core::oracles::{girsanov_kl_study, KLRow};
use gdb_core::rng;
use gdb_core::sampling::sample_chain;
use gdb_core::scoremodel::ScoreModelParams;
use gdb_core::synthdata::{generate_trajectories, pairs_from_trajectories};
use gdb_core::training::{self, TrainState, TrainingData};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::formats::{
    encode_checkpoint, encode_trajectories, read_checkpoint, read_file, read_trajectories, write_file, Checkpoint,
    TrajectoryFile,
};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "GDB_SEED";

/// Stream of the model initialiser; batches use the plain seed.
const INIT_STREAM: u64 = 1;

/// Reads a config file (defaults when `None`) and applies `GDB_SEED`.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => String::from_utf8(read_file(p)?).map_err(|_| CliError::Io(format!("{} is not UTF-8", p.display())))?,
        None => String::new(),
    };
    let cfg = RunConfig::from_text(&text)?;
    match std::env::var(SEED_ENV) {
        Ok(raw) => {
            let seed = raw.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}='{raw}' is not a seed")))?;
            Ok(cfg.with_seed(seed))
        }
        Err(_) => Ok(cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenSummary {
    pub records: usize,
    pub skipped: usize,
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<GenSummary, CliError> {
    let generated = generate_trajectories(&cfg.dataset, &cfg.potential)?;
    let file = TrajectoryFile::from_dataset(&generated.dataset, cfg.dataset.n_atoms, cfg.sched.sigma);
    write_file(out, &encode_trajectories(&file)?)?;
    Ok(GenSummary { records: generated.dataset.len(), skipped: generated.skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Pairs,
    Traj,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub log: PathBuf,
}

/// Default loss log location next to the checkpoint.
pub fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".loss.log");
    PathBuf::from(name)
}

/// Trains from scratch and writes the checkpoint. Pair mode trains a single
/// bridge, so its checkpoint records `segments = 1`.
pub fn train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    mode: TrainMode,
    log: Option<&Path>,
) -> Result<TrainSummary, CliError> {
    let file = read_trajectories(data)?;
    let dataset = file.dataset()?;
    if dataset.is_empty() {
        return Err(CliError::Io(format!("{} holds no records", data.display())));
    }
    let (echo, pairs) = match mode {
        TrainMode::Pairs => (cfg.clone().with_segments(1)?, Some(pairs_from_trajectories(&dataset)?)),
        TrainMode::Traj => (cfg.clone(), None),
    };
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| default_log_path(out));
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", log_path.display())))?;

    let params = ScoreModelParams::init(echo.model, &mut rng::stream(echo.train.seed, INIT_STREAM))?;
    let mut state = TrainState::new(params);
    let data_ref = match &pairs {
        Some(p) => TrainingData::Pairs(p),
        None => TrainingData::Trajectories(&dataset),
    };
    let mut write_err = None;
    let result = training::train(&mut state, data_ref, &echo.train, &echo.sched, |step, loss| {
        if write_err.is_none() {
            if let Err(e) = writeln!(log_file, "{step} {loss}") {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(CliError::Io(format!("cannot write {}: {e}", log_path.display())));
    }
    let trace = result?;
    let ckpt = Checkpoint { config: echo, params: state.params };
    write_file(out, &encode_checkpoint(&ckpt))?;
    Ok(TrainSummary {
        steps: trace.len(),
        first_loss: trace.first().copied().unwrap_or(f64::NAN),
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        log: log_path,
    })
}

/// Predicts from the first frame of every input record.
///
/// Without `chain` the output holds one frame per record, the end of the
/// checkpoint's chain (a single bridge when it was trained on pairs).
pub fn sample(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    steps: Option<usize>,
    chain: bool,
) -> Result<usize, CliError> {
    let ckpt = read_checkpoint(checkpoint)?;
    let mut sampler = ckpt.config.sampler();
    if let Some(s) = steps {
        sampler.steps_per_segment = s;
    }
    sampler.validate()?;
    let inputs = read_trajectories(input)?.first_frames();
    if inputs.is_empty() {
        return Err(CliError::Io(format!("{} holds no records", input.display())));
    }
    let results: Vec<_> = inputs.par_iter().map(|z0| sample_chain(&ckpt.params, z0, &sampler)).collect();
    let mut frames = Vec::with_capacity(results.len());
    for r in results {
        let mut f = r?;
        if !chain {
            f = vec![f.pop().expect("chain has frames")];
        }
        frames.push(f);
    }
    let file = TrajectoryFile::from_frames(frames, sampler.sched.sigma)?;
    write_file(out, &encode_trajectories(&file)?)?;
    Ok(file.records.len())
}

/// Compares the last frame of each prediction record with the last frame of
/// the matching reference record.
pub fn eval(pred: &Path, reference: &Path, aligned: bool) -> Result<MetricReport, CliError> {
    let p = read_trajectories(pred)?;
    let r = read_trajectories(reference)?;
    if p.records.len() != r.records.len() {
        return Err(CliError::Io(format!(
            "{} prediction records but {} reference records",
            p.records.len(),
            r.records.len()
        )));
    }
    Ok(MetricReport::evaluate(&p.last_frames(), &r.last_frames(), aligned)?)
}

pub fn format_report(report: &MetricReport, json: bool) -> String {
    if json {
        let map: serde_json::Map<String, serde_json::Value> =
            report.entries().iter().map(|(k, v)| (k.to_string(), serde_json::json!(v))).collect();
        format!("{}\n", serde_json::Value::Object(map))
    } else {
        report.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn format_kl_table(rows: &[KLRow]) -> String {
    let mut out = String::from("# N mean_kl stderr\n");
    for row in rows {
        out.push_str(&format!("{} {} {}\n", row.segments, row.mean_kl, row.stderr));
    }
    out
}

pub fn kl_study(cfg: &RunConfig, out: &Path) -> Result<Vec<KLRow>, CliError> {
    let rows = girsanov_kl_study(&cfg.ou, &cfg.kl, &mut rng::seeded(cfg.train.seed))?;
    write_file(out, format_kl_table(&rows).as_bytes())?;
    Ok(rows)
}
