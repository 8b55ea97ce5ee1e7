//! Gaussian prior kernels and the closed-form bridge quantities built on them.
//!
//! The prior is scaled Brownian motion `dR = σ dW`, whose transition density
//! from `(z, t)` to `(z', t')` is `N(z, σ²(t'−t)·I)`. Conditioning it on both
//! endpoints gives a Brownian bridge with Gaussian marginals, which is what
//! the training objectives sample from.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geom::{remove_mean, Vec3};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorKernel {
    sigma: f64,
}

impl PriorKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("prior sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `log N(z_to; z_from, σ²(t_to − t_from)·I)` over all `3n` coordinates.
    pub fn log_density(&self, z_to: &[Vec3], t_to: f64, z_from: &[Vec3], t_from: f64) -> Result<f64> {
        if t_to <= t_from {
            return Err(Error::Ordering { t_to, t_from });
        }
        check_same_len(z_to, z_from)?;
        let var = self.sigma * self.sigma * (t_to - t_from);
        let dim = 3.0 * z_to.len() as f64;
        let sq: f64 = z_to.iter().zip(z_from).map(|(a, b)| (a - b).norm_squared()).sum();
        Ok(-0.5 * dim * (LN_2PI + var.ln()) - 0.5 * sq / var)
    }

    /// 1-D transition log-density, used by the grid oracle.
    pub fn log_density_1d(&self, z_to: f64, t_to: f64, z_from: f64, t_from: f64) -> f64 {
        gaussian_log_pdf(z_to, z_from, self.sigma * self.sigma * (t_to - t_from))
    }
}

/// Standalone form of [`PriorKernel::log_density`].
pub fn prior_log_density(
    kernel: &PriorKernel,
    z_to: &[Vec3],
    t_to: f64,
    z_from: &[Vec3],
    t_from: f64,
) -> Result<f64> {
    kernel.log_density(z_to, t_to, z_from, t_from)
}

/// Diffusion coefficient and horizon of a single bridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeConfig {
    pub sigma: f64,
    pub horizon: f64,
}

impl BridgeConfig {
    pub fn new(sigma: f64, horizon: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("bridge horizon must be positive, got {horizon}")));
        }
        Ok(Self { sigma, horizon })
    }
}

/// `∇_{r_t} log p(z1, T | r_t, t) = (z1 − r_t) / (σ²(T − t))`.
pub fn bridge_score_target(r_t: &[Vec3], z1: &[Vec3], t: f64, cfg: &BridgeConfig) -> Result<Vec<Vec3>> {
    if t >= cfg.horizon {
        return Err(Error::Singularity { t, horizon: cfg.horizon });
    }
    if t < 0.0 {
        return Err(Error::Range { t, end: cfg.horizon });
    }
    check_same_len(r_t, z1)?;
    let scale = 1.0 / (cfg.sigma * cfg.sigma * (cfg.horizon - t));
    Ok(r_t.iter().zip(z1).map(|(r, z)| (z - r) * scale).collect())
}

/// Isotropic Gaussian marginal of a bridge at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeMarginal {
    pub mean: Vec<Vec3>,
    pub std: f64,
}

/// Marginal of the Brownian bridge pinned at `z0` (time 0) and `z1` (time `T`).
pub fn bridge_marginal(z0: &[Vec3], z1: &[Vec3], t: f64, cfg: &BridgeConfig) -> Result<BridgeMarginal> {
    let horizon = cfg.horizon;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Range { t, end: horizon });
    }
    check_same_len(z0, z1)?;
    let w1 = t / horizon;
    let w0 = (horizon - t) / horizon;
    let mean = z0.iter().zip(z1).map(|(a, b)| b * w1 + a * w0).collect();
    let std = cfg.sigma * (t * (horizon - t)).sqrt() / horizon;
    Ok(BridgeMarginal { mean, std })
}

/// `n` i.i.d. standard normal 3-vectors, projected onto the CoM-free subspace.
///
/// A single atom has no CoM-free degrees of freedom, so for `n = 1` the
/// projection is skipped and plain isotropic noise is returned.
pub fn com_free_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec3> {
    let mut eps: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            )
        })
        .collect();
    if n > 1 {
        remove_mean(&mut eps);
    }
    eps
}

/// `mean + std·ε'` with `ε'` CoM-free standard noise.
pub fn sample_com_free_gaussian<R: Rng + ?Sized>(mean: &[Vec3], std: f64, rng: &mut R) -> Vec<Vec3> {
    let eps = com_free_noise(mean.len(), rng);
    mean.iter().zip(&eps).map(|(m, e)| m + e * std).collect()
}

/// One draw of `R^t` from the bridge marginal between `z0` and `z1`.
pub fn noised_bridge_sample<R: Rng + ?Sized>(
    z0: &[Vec3],
    z1: &[Vec3],
    t: f64,
    cfg: &BridgeConfig,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    let marginal = bridge_marginal(z0, z1, t, cfg)?;
    Ok(sample_com_free_gaussian(&marginal.mean, marginal.std, rng))
}

pub fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var
}

/// `h(z, t; z0)` and `∂_z log h` tabulated on a 1-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HTransformGrid {
    pub h: Vec<f64>,
    pub grad_log_h: Vec<f64>,
}

/// Uniform grid of `points` nodes on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|k| lo + step * k as f64).collect()
}

/// Default oracle grid: 4001 nodes spanning `8σ√T` beyond the given extremes.
pub fn default_grid(lo_anchor: f64, hi_anchor: f64, sigma: f64, horizon: f64) -> Vec<f64> {
    let pad = 8.0 * sigma * horizon.sqrt();
    uniform_grid(lo_anchor - pad, hi_anchor + pad, 4001)
}

/// Trapezoid rule for samples `f` on `grid`.
pub fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Numerically integrates Doob's `h` for a 1-D bridge targeting `data_conditional`.
///
/// `h(z, t; z0) = ∫ p(z', T | z, t) · q(z' | z0) / p(z', T | z0, 0) dz'`, where
/// `q` is given as density values on `grid`. The gradient of `log h` comes from
/// central differences (one-sided at the grid ends).
pub fn h_transform_grid(
    prior: &PriorKernel,
    data_conditional: &[f64],
    z0: f64,
    t: f64,
    horizon: f64,
    grid: &[f64],
) -> Result<HTransformGrid> {
    if grid.len() < 3 || grid.len() != data_conditional.len() {
        return Err(Error::Shape(format!(
            "grid has {} nodes, density has {}",
            grid.len(),
            data_conditional.len()
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("grid must be strictly increasing".into()));
    }
    if !(0.0..horizon).contains(&t) {
        return Err(Error::Range { t, end: horizon });
    }
    let mass = trapezoid(grid, data_conditional);
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::Input(format!("conditional density integrates to {mass}, not 1")));
    }

    // log of q(z') / p(z', T | z0, 0); zero density stays zero.
    let log_ratio: Vec<f64> = grid
        .iter()
        .zip(data_conditional)
        .map(|(&zp, &q)| {
            if q > 0.0 {
                q.ln() - prior.log_density_1d(zp, horizon, z0, 0.0)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();

    let mut integrand = vec![0.0; grid.len()];
    let h: Vec<f64> = grid
        .iter()
        .map(|&z| {
            for (k, &zp) in grid.iter().enumerate() {
                integrand[k] = (prior.log_density_1d(zp, horizon, z, t) + log_ratio[k]).exp();
            }
            trapezoid(grid, &integrand)
        })
        .collect();
    if let Some(k) = h.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Input(format!(
            "h vanished at z={}; widen the grid or the conditional",
            grid[k]
        )));
    }

    let log_h: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let last = grid.len() - 1;
    let grad_log_h = (0..grid.len())
        .map(|k| {
            let (a, b) = match k {
                0 => (0, 1),
                k if k == last => (last - 1, last),
                k => (k - 1, k + 1),
            };
            (log_h[b] - log_h[a]) / (grid[b] - grid[a])
        })
        .collect();
    Ok(HTransformGrid { h, grad_log_h })
}

fn check_same_len(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} atoms vs {} atoms", a.len(), b.len())));
    }
    Ok(())
}
