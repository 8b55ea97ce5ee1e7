//! Bridge matching objectives, batch construction, AdamW and the training loop.
//!
//! Pair training regresses the model onto `(z1 − Rᵗ)/(σ²(T − t))` at points
//! `Rᵗ` drawn from the bridge between a data couple. Trajectory training does
//! the same per segment of a chain, with σᵢ in place of σ, the segment start
//! as condition and the global chain time fed to the model.

use rand::Rng;

use crate::bridge::{segment_index, BridgeSchedule};
use crate::error::{Error, Result};
use crate::geom::{GeometricState, Vec3};
use crate::kernels::{com_free_noise, BridgeConfig};
use crate::rng;
use crate::scoremodel::{loss_and_grad, ScoreModelParams, TrainItem};

/// Weighting λ(t) of the matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSchedule {
    ConstantOne,
    /// `(σ²(T − t))²`: the loss becomes `‖(z1 − Rᵗ) − σ²(T − t)·v‖²`.
    EndpointScaled,
}

/// How `Rᵗ` is drawn around the bridge mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSchedule {
    /// Bridge marginal, std `σ√(t(T − t))/T`.
    AlgorithmLiteral,
    /// Bridge from a Gaussian-smoothed start, std `σ√((T − t)/T)`.
    SmoothedInitial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub lambda_schedule: LambdaSchedule,
    pub noise_schedule: NoiseSchedule,
    /// Absolute clip applied to (segment-local) times: `t ∈ [t_clip, T − t_clip]`.
    pub t_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            steps: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 10.0,
            lambda_schedule: LambdaSchedule::EndpointScaled,
            noise_schedule: NoiseSchedule::AlgorithmLiteral,
            t_clip: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..horizon / 2.0).contains(&self.t_clip) {
            return Err(Error::Config(format!(
                "t_clip must lie in [0, T/2), got {} with T={horizon}",
                self.t_clip
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip > 0.0) {
            return Err(Error::Config("adam_eps and grad_clip must be positive, weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Couples `(z0, z1)` sharing atoms and features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pairs: Vec<(GeometricState, GeometricState)>,
}

impl PairDataset {
    pub fn new(pairs: Vec<(GeometricState, GeometricState)>) -> Result<Self> {
        for (k, (a, b)) in pairs.iter().enumerate() {
            if a.n_atoms() != b.n_atoms() || a.features != b.features {
                return Err(Error::Shape(format!("pair {k}: endpoints differ in atoms or features")));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(GeometricState, GeometricState)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `N + 1` ordered frames of one system.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub features: Vec<u32>,
    pub frames: Vec<Vec<Vec3>>,
}

impl TrajectorySample {
    pub fn segments(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    pub fn frame_state(&self, k: usize) -> GeometricState {
        GeometricState { coords: self.frames[k].clone(), features: self.features.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    records: Vec<TrajectorySample>,
}

impl TrajectoryDataset {
    pub fn new(records: Vec<TrajectorySample>) -> Result<Self> {
        let segments = records.first().map(|r| r.segments());
        for (k, rec) in records.iter().enumerate() {
            if rec.frames.len() < 2 {
                return Err(Error::Shape(format!("record {k} has fewer than two frames")));
            }
            if Some(rec.segments()) != segments {
                return Err(Error::Shape(format!("record {k} has a different segment count")));
            }
            if rec.frames.iter().any(|f| f.len() != rec.features.len()) {
                return Err(Error::Shape(format!("record {k}: frames disagree with features")));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[TrajectorySample] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Segment count `N` shared by all records (0 when empty).
    pub fn segments(&self) -> usize {
        self.records.first().map_or(0, |r| r.segments())
    }
}

/// λ(t) for the given bridge (σ, T); `t` is segment-local.
pub fn lambda_weight(t: f64, schedule: LambdaSchedule, cfg: &BridgeConfig) -> f64 {
    match schedule {
        LambdaSchedule::ConstantOne => 1.0,
        LambdaSchedule::EndpointScaled => {
            let s = cfg.sigma * cfg.sigma * (cfg.horizon - t);
            s * s
        }
    }
}

/// Maps a uniform draw on `[0, T)` to the clipped interval `[t_clip, T − t_clip]`.
fn clip_local_time(raw: f64, horizon: f64, t_clip: f64) -> f64 {
    t_clip + raw / horizon * (horizon - 2.0 * t_clip)
}

/// Builds one regression example from its random ingredients.
///
/// `eps` is CoM-free standard noise; `t_model` is the time given to the model
/// and `t_local` the time inside the bridge described by `seg`.
#[allow(clippy::too_many_arguments)]
pub fn make_item(
    z0: &[Vec3],
    z1: &[Vec3],
    features: &[u32],
    t_model: f64,
    t_local: f64,
    seg: &BridgeConfig,
    eps: &[Vec3],
    cfg: &TrainConfig,
) -> TrainItem {
    let horizon = seg.horizon;
    let w1 = t_local / horizon;
    let w0 = (horizon - t_local) / horizon;
    let std = match cfg.noise_schedule {
        NoiseSchedule::AlgorithmLiteral => seg.sigma * (t_local * (horizon - t_local)).sqrt() / horizon,
        NoiseSchedule::SmoothedInitial => seg.sigma * ((horizon - t_local) / horizon).sqrt(),
    };
    let r_t: Vec<Vec3> = z0
        .iter()
        .zip(z1)
        .zip(eps)
        .map(|((a, b), e)| b * w1 + a * w0 + e * std)
        .collect();
    let scale = 1.0 / (seg.sigma * seg.sigma * (horizon - t_local));
    let target = r_t.iter().zip(z1).map(|(r, z)| (z - r) * scale).collect();
    TrainItem {
        r_t,
        condition: z0.to_vec(),
        features: features.to_vec(),
        t: t_model,
        target,
        lambda: lambda_weight(t_local, cfg.lambda_schedule, seg),
    }
}

/// Draws a batch for pair training.
pub fn build_pair_batch<R: Rng + ?Sized>(
    dataset: &PairDataset,
    cfg: &TrainConfig,
    sched: &BridgeSchedule,
    rng: &mut R,
) -> Result<Vec<TrainItem>> {
    if dataset.is_empty() {
        return Err(Error::Input("pair dataset is empty".into()));
    }
    let seg = sched.bridge_config();
    Ok((0..cfg.batch_size)
        .map(|_| {
            let (z0, z1) = &dataset.pairs[rng.random_range(0..dataset.len())];
            let raw = rng.random::<f64>() * seg.horizon;
            let t = clip_local_time(raw, seg.horizon, cfg.t_clip);
            let eps = com_free_noise(z0.n_atoms(), rng);
            make_item(&z0.coords, &z1.coords, &z0.features, t, t, &seg, &eps, cfg)
        })
        .collect())
}

/// Draws a batch for trajectory training: `t ~ U(0, N·T)`, split into a
/// segment and a clipped local time.
pub fn build_traj_batch<R: Rng + ?Sized>(
    dataset: &TrajectoryDataset,
    cfg: &TrainConfig,
    sched: &BridgeSchedule,
    rng: &mut R,
) -> Result<Vec<TrainItem>> {
    if dataset.is_empty() {
        return Err(Error::Input("trajectory dataset is empty".into()));
    }
    if dataset.segments() != sched.segments {
        return Err(Error::Config(format!(
            "dataset has N={} segments but the schedule has N={}",
            dataset.segments(),
            sched.segments
        )));
    }
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let rec = &dataset.records[rng.random_range(0..dataset.len())];
        let raw = rng.random::<f64>() * sched.total_time();
        let st = segment_index(raw, sched)?;
        let local = clip_local_time(st.local, sched.horizon, cfg.t_clip);
        let t_model = st.index as f64 * sched.horizon + local;
        let seg = sched.segment_config(st.index)?;
        let eps = com_free_noise(rec.features.len(), rng);
        batch.push(make_item(
            &rec.frames[st.index],
            &rec.frames[st.index + 1],
            &rec.features,
            t_model,
            local,
            &seg,
            &eps,
            cfg,
        ));
    }
    Ok(batch)
}

/// First and second moment estimates of AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One AdamW step with decoupled weight decay and bias correction.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and moment lengths differ".into()));
    }
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = cfg.learning_rate;
    let decay = 1.0 - lr * cfg.weight_decay;
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] = params[k] * decay - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// Parameters plus optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ScoreModelParams,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(params: ScoreModelParams) -> Self {
        let adam = AdamState::new(params.len());
        Self { params, adam }
    }
}

/// Loss, gradient clipping and one AdamW update for a prepared batch.
pub fn apply_batch(state: &mut TrainState, batch: &[TrainItem], cfg: &TrainConfig) -> Result<f64> {
    let step = state.adam.step as usize;
    let (loss, mut grads) = loss_and_grad(&state.params, batch).map_err(|e| match e {
        Error::NonFinite(what) => Error::Divergence { step, what },
        other => other,
    })?;
    let norm = grads.norm();
    if !norm.is_finite() {
        return Err(Error::Divergence { step, what: format!("gradient norm {norm}") });
    }
    if norm > cfg.grad_clip {
        let s = cfg.grad_clip / norm;
        for g in grads.as_mut_slice() {
            *g *= s;
        }
    }
    adam_update(state.params.as_mut_slice(), grads.as_slice(), &mut state.adam, cfg)?;
    if !state.params.is_finite() {
        return Err(Error::Divergence { step, what: "parameters became non-finite".into() });
    }
    Ok(loss)
}

/// One pair-training step; returns the batch loss before the update.
pub fn train_step_pairs<R: Rng + ?Sized>(
    state: &mut TrainState,
    dataset: &PairDataset,
    cfg: &TrainConfig,
    sched: &BridgeSchedule,
    rng: &mut R,
) -> Result<f64> {
    let batch = build_pair_batch(dataset, cfg, sched, rng)?;
    apply_batch(state, &batch, cfg)
}

/// One trajectory-training step; returns the batch loss before the update.
pub fn train_step_traj<R: Rng + ?Sized>(
    state: &mut TrainState,
    dataset: &TrajectoryDataset,
    cfg: &TrainConfig,
    sched: &BridgeSchedule,
    rng: &mut R,
) -> Result<f64> {
    let batch = build_traj_batch(dataset, cfg, sched, rng)?;
    apply_batch(state, &batch, cfg)
}

/// What a training run regresses on.
#[derive(Debug, Clone, Copy)]
pub enum TrainingData<'a> {
    Pairs(&'a PairDataset),
    Trajectories(&'a TrajectoryDataset),
}

/// Runs `cfg.steps` steps from the seed in `cfg`, calling `on_step(step, loss)`
/// after each one. Returns the loss trace.
pub fn train(
    state: &mut TrainState,
    data: TrainingData<'_>,
    cfg: &TrainConfig,
    sched: &BridgeSchedule,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate(sched.horizon)?;
    let mut rng = rng::seeded(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let loss = match data {
            TrainingData::Pairs(d) => train_step_pairs(state, d, cfg, sched, &mut rng),
            TrainingData::Trajectories(d) => train_step_traj(state, d, cfg, sched, &mut rng),
        }
        .map_err(|e| match e {
            Error::Divergence { what, .. } => Error::Divergence { step, what },
            other => other,
        })?;
        on_step(step, loss);
        trace.push(loss);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn lambda_examples() {
        let b = BridgeConfig { sigma: 1.0, horizon: 1.0 };
        assert_eq!(lambda_weight(0.37, LambdaSchedule::ConstantOne, &b), 1.0);
        assert_eq!(lambda_weight(0.0, LambdaSchedule::EndpointScaled, &b), 1.0);
        // (σ²(T − t))² = 0.1² at t = 0.9
        assert!((lambda_weight(0.9, LambdaSchedule::EndpointScaled, &b) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.5, -1.0, 2.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        adam_update(&mut p, &[0.0; 3], &mut s, &cfg()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step() {
        let c = cfg();
        let g = [0.3, -2.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_update(&mut p, &g, &mut s, &c).unwrap();
        for k in 0..3 {
            let expected = -c.learning_rate * g[k] / (g[k].abs() + c.adam_eps);
            assert!((p[k] - expected).abs() < 1e-9, "{} vs {expected}", p[k]);
        }
    }

    #[test]
    fn adam_decoupled_decay() {
        let c = TrainConfig { weight_decay: 0.1, ..cfg() };
        let mut p = vec![3.0];
        let mut s = AdamState::new(1);
        for step in 1..=5 {
            adam_update(&mut p, &[0.0], &mut s, &c).unwrap();
            let expected = 3.0 * (1.0 - c.learning_rate * 0.1f64).powi(step);
            assert!((p[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate(1.0).is_ok());
        assert!(TrainConfig { t_clip: 0.5, ..cfg() }.validate(1.0).is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..cfg() }.validate(1.0).is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg() }.validate(1.0).is_err());
    }

    #[test]
    fn clipped_times_stay_inside() {
        let c = TrainConfig { t_clip: 0.05, ..cfg() };
        for raw in [0.0, 0.3, 0.999_999_9] {
            let t = clip_local_time(raw, 1.0, c.t_clip);
            assert!((0.05..=0.95).contains(&t));
        }
    }
}
