//! Deterministic Euler integration of the learned drift, for a single bridge
//! and for a chain of bridges.

use crate::bridge::BridgeSchedule;
use crate::error::{Error, Result};
use crate::geom::{GeometricState, Vec3};
use crate::kernels::BridgeConfig;
use crate::scoremodel::ConditionalField;

/// Factor applied to the model output in `dR/dt = s·v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftScaling {
    /// `s = σ²` (σᵢ² on chain segments), the drift of the bridge SDE.
    SigmaSquared,
    /// `s = 1`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps_per_segment: usize,
    pub drift_scaling: DriftScaling,
    pub sched: BridgeSchedule,
}

impl SamplerConfig {
    pub fn new(sched: BridgeSchedule) -> Self {
        Self { steps_per_segment: 10, drift_scaling: DriftScaling::SigmaSquared, sched }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_segment == 0 {
            return Err(Error::Config("steps_per_segment must be at least 1".into()));
        }
        Ok(())
    }
}

/// Integrates one segment from `start` with the condition fixed to `start`.
/// `t_offset` is added to the local time before it reaches the model.
/// `step_base` numbers the steps in divergence errors.
fn integrate_segment<F: ConditionalField + ?Sized>(
    field: &F,
    start: &[Vec3],
    features: &[u32],
    seg: &BridgeConfig,
    t_offset: f64,
    cfg: &SamplerConfig,
    step_base: usize,
) -> Result<Vec<Vec3>> {
    let steps = cfg.steps_per_segment;
    let dt = seg.horizon / steps as f64;
    let scale = match cfg.drift_scaling {
        DriftScaling::SigmaSquared => seg.sigma * seg.sigma,
        DriftScaling::Literal => 1.0,
    };
    let mut state = start.to_vec();
    for k in 0..steps {
        let t = t_offset + k as f64 * dt;
        let v = field.eval(&state, start, features, t)?;
        if v.len() != state.len() {
            return Err(Error::Shape(format!("field returned {} vectors for {} atoms", v.len(), state.len())));
        }
        for (r, d) in state.iter_mut().zip(&v) {
            *r += d * (scale * dt);
        }
        if state.iter().any(|r| !r.iter().all(|c| c.is_finite())) {
            return Err(Error::Divergence { step: step_base + k, what: format!("non-finite state at t={t}") });
        }
    }
    Ok(state)
}

/// Predicts the target state of a single bridge over `[0, T]` with σ.
pub fn sample_bridge<F: ConditionalField + ?Sized>(
    field: &F,
    z0: &GeometricState,
    cfg: &SamplerConfig,
) -> Result<GeometricState> {
    cfg.validate()?;
    let end = integrate_segment(field, &z0.coords, &z0.features, &cfg.sched.bridge_config(), 0.0, cfg, 0)?;
    Ok(z0.with_coords(end))
}

/// Runs the chain and returns `[z0, R¹ᵀ, …, Rᴺᵀ]`.
///
/// Segment `i` uses σᵢ, conditions on its own start state and passes the
/// global time `i·T + t′` to the model.
pub fn sample_chain<F: ConditionalField + ?Sized>(
    field: &F,
    z0: &GeometricState,
    cfg: &SamplerConfig,
) -> Result<Vec<GeometricState>> {
    cfg.validate()?;
    let sched = &cfg.sched;
    let mut frames = Vec::with_capacity(sched.segments + 1);
    frames.push(z0.clone());
    let mut current = z0.coords.clone();
    for i in 0..sched.segments {
        let seg = sched.segment_config(i)?;
        let offset = i as f64 * sched.horizon;
        current = integrate_segment(field, &current, &z0.features, &seg, offset, cfg, i * cfg.steps_per_segment)?;
        frames.push(z0.with_coords(current.clone()));
    }
    Ok(frames)
}
