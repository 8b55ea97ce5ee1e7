//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key is optional, unknown
//! and repeated keys are errors, and all values are validated on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use gdb_core::bridge::BridgeSchedule;
use gdb_core::oracles::{KLStudyConfig, OUSpec};
use gdb_core::sampling::{DriftScaling, SamplerConfig};
use gdb_core::scoremodel::ModelConfig;
use gdb_core::synthdata::{DatasetSpec, PotentialKind, PotentialSpec};
use gdb_core::training::{LambdaSchedule, NoiseSchedule, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sched: BridgeSchedule,
    pub train: TrainConfig,
    pub steps_per_segment: usize,
    pub drift_scaling: DriftScaling,
    pub dataset: DatasetSpec,
    pub potential: PotentialSpec,
    pub model: ModelConfig,
    pub ou: OUSpec,
    pub kl: KLStudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_text("").expect("defaults are valid")
    }
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Config(format!("invalid value '{raw}' for key '{key}'"))),
        }
    }

    fn take_enum<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> Result<T, CliError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(raw) => options.iter().find(|(name, _)| *name == raw).map(|(_, v)| *v).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!("key '{key}' must be one of {}, got '{raw}'", names.join("|")))
            }),
        }
    }
}

const LAMBDA: &[(&str, LambdaSchedule)] =
    &[("constant_one", LambdaSchedule::ConstantOne), ("endpoint_scaled", LambdaSchedule::EndpointScaled)];
const NOISE: &[(&str, NoiseSchedule)] = &[
    ("algorithm_literal", NoiseSchedule::AlgorithmLiteral),
    ("smoothed_initial", NoiseSchedule::SmoothedInitial),
];
const DRIFT: &[(&str, DriftScaling)] =
    &[("sigma_squared", DriftScaling::SigmaSquared), ("literal", DriftScaling::Literal)];
const POTENTIAL: &[(&str, PotentialKind)] =
    &[("harmonic_pairs", PotentialKind::HarmonicPairs), ("zero", PotentialKind::Zero)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], value: T) -> &'static str {
    options.iter().find(|(_, v)| *v == value).map(|(n, _)| *n).expect("every variant is named")
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
        let key = key.trim();
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: key '{key}' repeated", no + 1)));
        }
    }
    Ok(map)
}

fn parse_counts(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Config(format!("invalid segment count list '{raw}'"))))
        .collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut e = Entries { map: parse_lines(text)? };
        let dm = ModelConfig::default();
        let dt = TrainConfig::default();
        let dd = DatasetSpec::default();
        let dp = PotentialSpec::default();
        let dk = KLStudyConfig::default();

        let sigma = e.take("sigma", 0.5)?;
        let horizon = e.take("horizon", 1.0)?;
        let segments = e.take("segments", dd.segments)?;
        let seed = e.take("seed", 0u64)?;
        let sched = BridgeSchedule::new(sigma, horizon, segments)?;

        let train = TrainConfig {
            learning_rate: e.take("learning_rate", dt.learning_rate)?,
            batch_size: e.take("batch_size", dt.batch_size)?,
            steps: e.take("steps", dt.steps)?,
            adam_beta1: e.take("adam_beta1", dt.adam_beta1)?,
            adam_beta2: e.take("adam_beta2", dt.adam_beta2)?,
            adam_eps: e.take("adam_eps", dt.adam_eps)?,
            weight_decay: e.take("weight_decay", dt.weight_decay)?,
            grad_clip: e.take("grad_clip", dt.grad_clip)?,
            lambda_schedule: e.take_enum("lambda_schedule", dt.lambda_schedule, LAMBDA)?,
            noise_schedule: e.take_enum("noise_schedule", dt.noise_schedule, NOISE)?,
            t_clip: e.take("t_clip", 1e-3 * horizon)?,
            seed,
        };
        train.validate(horizon)?;

        let steps_per_segment = e.take("steps_per_segment", 10usize)?;
        let drift_scaling = e.take_enum("drift_scaling", DriftScaling::SigmaSquared, DRIFT)?;

        let dataset = DatasetSpec {
            n_records: e.take("n_records", dd.n_records)?,
            n_atoms: e.take("n_atoms", dd.n_atoms)?,
            segments,
            sim_dt: e.take("sim_dt", dd.sim_dt)?,
            sim_steps_per_segment: e.take("sim_steps_per_segment", dd.sim_steps_per_segment)?,
            sigma,
            seed,
            init_spread: e.take("init_spread", dd.init_spread)?,
        };
        dataset.validate()?;
        let potential = PotentialSpec {
            kind: e.take_enum("potential", dp.kind, POTENTIAL)?,
            k: e.take("k", dp.k)?,
            d0: e.take("d0", dp.d0)?,
        };
        potential.validate()?;

        let model = ModelConfig {
            feature_embed_dim: e.take("feature_embed_dim", dm.feature_embed_dim)?,
            hidden_width: e.take("hidden_width", dm.hidden_width)?,
            n_layers: e.take("n_layers", dm.n_layers)?,
            time_embed_dim: e.take("time_embed_dim", dm.time_embed_dim)?,
            max_atom_types: e.take("max_atom_types", dm.max_atom_types)?,
        };
        model.validate()?;

        let ou = OUSpec::new(e.take("ou_theta", 1.0)?, e.take("ou_sigma", 1.0)?)?;
        let segment_counts = match e.map.remove("kl_segment_counts") {
            Some(raw) => parse_counts(&raw)?,
            None => dk.segment_counts.clone(),
        };
        let kl = KLStudyConfig {
            segment_counts,
            paths_per_estimate: e.take("kl_paths", dk.paths_per_estimate)?,
            euler_steps: e.take("kl_euler_steps", dk.euler_steps)?,
            total_time: e.take("kl_total_time", dk.total_time)?,
            x0: e.take("kl_x0", dk.x0)?,
        };
        kl.validate()?;

        if let Some(key) = e.map.keys().next() {
            return Err(CliError::Config(format!("unknown config key '{key}'")));
        }
        let cfg = Self { sched, train, steps_per_segment, drift_scaling, dataset, potential, model, ou, kl };
        cfg.sampler().validate()?;
        Ok(cfg)
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { steps_per_segment: self.steps_per_segment, drift_scaling: self.drift_scaling, sched: self.sched }
    }

    /// Replaces the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.dataset.seed = seed;
        self
    }

    /// Same configuration with a different segment count.
    pub fn with_segments(mut self, segments: usize) -> Result<Self, CliError> {
        self.sched = BridgeSchedule::new(self.sched.sigma, self.sched.horizon, segments)?;
        self.dataset.segments = segments;
        Ok(self)
    }

    /// Every key with its resolved value, one per line in a fixed order.
    /// Parsing the output gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let d = &self.dataset;
        let m = &self.model;
        let counts: Vec<String> = self.kl.segment_counts.iter().map(|c| c.to_string()).collect();
        let entries: Vec<(&str, String)> = vec![
            ("sigma", self.sched.sigma.to_string()),
            ("horizon", self.sched.horizon.to_string()),
            ("segments", self.sched.segments.to_string()),
            ("seed", t.seed.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("steps", t.steps.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("grad_clip", t.grad_clip.to_string()),
            ("lambda_schedule", name_of(LAMBDA, t.lambda_schedule).into()),
            ("noise_schedule", name_of(NOISE, t.noise_schedule).into()),
            ("t_clip", t.t_clip.to_string()),
            ("steps_per_segment", self.steps_per_segment.to_string()),
            ("drift_scaling", name_of(DRIFT, self.drift_scaling).into()),
            ("n_records", d.n_records.to_string()),
            ("n_atoms", d.n_atoms.to_string()),
            ("sim_dt", d.sim_dt.to_string()),
            ("sim_steps_per_segment", d.sim_steps_per_segment.to_string()),
            ("init_spread", d.init_spread.to_string()),
            ("potential", name_of(POTENTIAL, self.potential.kind).into()),
            ("k", self.potential.k.to_string()),
            ("d0", self.potential.d0.to_string()),
            ("feature_embed_dim", m.feature_embed_dim.to_string()),
            ("hidden_width", m.hidden_width.to_string()),
            ("n_layers", m.n_layers.to_string()),
            ("time_embed_dim", m.time_embed_dim.to_string()),
            ("max_atom_types", m.max_atom_types.to_string()),
            ("ou_theta", self.ou.theta.to_string()),
            ("ou_sigma", self.ou.sigma.to_string()),
            ("kl_segment_counts", counts.join(",")),
            ("kl_paths", self.kl.paths_per_estimate.to_string()),
            ("kl_euler_steps", self.kl.euler_steps.to_string()),
            ("kl_total_time", self.kl.total_time.to_string()),
            ("kl_x0", self.kl.x0.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }
}
