//! Closed-form Ornstein–Uhlenbeck references, prior-SDE simulation and a
//! Girsanov estimate of the KL between OU bridges and Brownian bridges.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kernels::com_free_noise;
use crate::rng;
use crate::synthdata::{potential_gradient, PotentialSpec};

/// `dX = −θX dt + σ dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OUSpec {
    pub theta: f64,
    pub sigma: f64,
}

impl OUSpec {
    pub fn new(theta: f64, sigma: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::Config(format!("theta must be non-negative, got {theta}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { theta, sigma })
    }

    /// Mean factor `e^{−θ·dt}` and variance of the transition over `dt`.
    pub fn coefficients(&self, dt: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        if self.theta < 1e-10 {
            return (1.0, s2 * dt);
        }
        let decay = (-self.theta * dt).exp();
        let var = s2 * -(-2.0 * self.theta * dt).exp_m1() / (2.0 * self.theta);
        (decay, var)
    }

    /// Bridge drift toward `z1` at time `T` for a scalar coordinate.
    pub fn bridge_drift_1d(&self, x: f64, t: f64, z1: f64, horizon: f64) -> f64 {
        let (decay, var) = self.coefficients(horizon - t);
        -self.theta * x + self.sigma * self.sigma * decay * (z1 - decay * x) / var
    }
}

/// Gaussian transition over `dt`: mean `e^{−θ·dt}·z`, isotropic variance.
pub fn ou_transition(z: &[Vec3], dt: f64, spec: &OUSpec) -> Result<(Vec<Vec3>, f64)> {
    if !(dt >= 0.0) {
        return Err(Error::Ordering { t_to: dt, t_from: 0.0 });
    }
    let (decay, var) = spec.coefficients(dt);
    Ok((z.iter().map(|x| x * decay).collect(), var))
}

/// `−θx + σ²·∂ₓ log p(z1, T | x, t)`.
pub fn ou_bridge_drift(x: &[Vec3], t: f64, z1: &[Vec3], horizon: f64, spec: &OUSpec) -> Result<Vec<Vec3>> {
    if t >= horizon {
        return Err(Error::Singularity { t, horizon });
    }
    if x.len() != z1.len() {
        return Err(Error::Shape("state and endpoint differ in atom count".into()));
    }
    Ok(x
        .iter()
        .zip(z1)
        .map(|(a, b)| Vec3::from_fn(|d, _| spec.bridge_drift_1d(a[d], t, b[d], horizon)))
        .collect())
}

/// Euler–Maruyama path of `dR = −∇V dt + σ dW` with CoM-free increments.
pub fn simulate_prior_sde<R: Rng + ?Sized>(
    potential: &PotentialSpec,
    z0: &[Vec3],
    sigma: f64,
    dt: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec3>>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let noise_scale = sigma * dt.sqrt();
    let mut state = z0.to_vec();
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(state.clone());
    for step in 0..n_steps {
        let grad = potential_gradient(potential, &state)?;
        let eps = com_free_noise(state.len(), rng);
        for ((r, g), e) in state.iter_mut().zip(&grad).zip(&eps) {
            *r += -g * dt + e * noise_scale;
        }
        if state.iter().any(|r| !r.iter().all(|c| c.is_finite())) {
            return Err(Error::Divergence { step, what: "non-finite coordinates in prior SDE".into() });
        }
        path.push(state.clone());
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KLStudyConfig {
    pub segment_counts: Vec<usize>,
    pub paths_per_estimate: usize,
    /// Euler steps per segment.
    pub euler_steps: usize,
    pub total_time: f64,
    /// Fixed scalar start of every OU path.
    pub x0: f64,
}

impl Default for KLStudyConfig {
    fn default() -> Self {
        Self {
            segment_counts: vec![1, 2, 4, 8, 16],
            paths_per_estimate: 2000,
            euler_steps: 200,
            total_time: 1.0,
            x0: 1.0,
        }
    }
}

impl KLStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_counts.is_empty() || self.segment_counts[0] == 0 {
            return Err(Error::Config("segment_counts must be non-empty with counts ≥ 1".into()));
        }
        if self.segment_counts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("segment_counts must be strictly increasing".into()));
        }
        if self.paths_per_estimate < 2 || self.euler_steps == 0 {
            return Err(Error::Config("need at least two paths and one Euler step".into()));
        }
        if !(self.total_time > 0.0 && self.total_time.is_finite()) || !self.x0.is_finite() {
            return Err(Error::Config("total_time must be positive and x0 finite".into()));
        }
        Ok(())
    }
}

/// One row of the KL table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KLRow {
    pub segments: usize,
    /// Mean over segments and paths.
    pub mean_kl: f64,
    /// Standard error of `mean_kl` across paths.
    pub stderr: f64,
    /// Largest per-segment mean over paths.
    pub max_kl: f64,
}

/// KL contribution of every segment of one OU path split into `n` pieces.
fn path_segment_kls<R: Rng + ?Sized>(spec: &OUSpec, cfg: &KLStudyConfig, n: usize, rng: &mut R) -> Vec<f64> {
    let h = cfg.total_time / n as f64;
    let (decay_h, var_h) = spec.coefficients(h);
    let dt = h / cfg.euler_steps as f64;
    let noise = spec.sigma * dt.sqrt();
    let inv_2s2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mut start = cfg.x0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let end = decay_h * start + var_h.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let mut x = start;
        let mut kl = 0.0;
        for k in 0..cfg.euler_steps {
            let t = k as f64 * dt;
            let b_ou = spec.bridge_drift_1d(x, t, end, h);
            let b_bb = (end - x) / (h - t);
            kl += (b_ou - b_bb).powi(2) * inv_2s2 * dt;
            x += b_ou * dt + noise * rng.sample::<f64, _>(StandardNormal);
        }
        out.push(kl);
        start = end;
    }
    out
}

/// Per-segment KL(OU bridge ‖ Brownian bridge) for each segment count.
///
/// Endpoints come from exact OU transitions; the drift-difference integral is
/// accumulated along Euler paths of the OU bridge. Paths draw from separate
/// streams seeded from `rng`, so the table does not depend on the thread count.
pub fn girsanov_kl_study<R: Rng + ?Sized>(spec: &OUSpec, cfg: &KLStudyConfig, rng: &mut R) -> Result<Vec<KLRow>> {
    cfg.validate()?;
    let base: u64 = rng.random();
    let paths = cfg.paths_per_estimate;
    let mut rows = Vec::with_capacity(cfg.segment_counts.len());
    for (ci, &n) in cfg.segment_counts.iter().enumerate() {
        let per_path: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut r = rng::stream(base, ((ci as u64) << 32) | p as u64);
                path_segment_kls(spec, cfg, n, &mut r)
            })
            .collect();
        let path_means: Vec<f64> = per_path.iter().map(|v| v.iter().sum::<f64>() / n as f64).collect();
        let mean = path_means.iter().sum::<f64>() / paths as f64;
        let var = path_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        let max_kl = (0..n)
            .map(|k| per_path.iter().map(|v| v[k]).sum::<f64>() / paths as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(KLRow { segments: n, mean_kl: mean, stderr: (var / paths as f64).sqrt(), max_kl });
    }
    Ok(rows)
}
