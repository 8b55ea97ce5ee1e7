//! Bridge schedules, chain time indexing and Euler–Maruyama bridge simulation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kernels::{com_free_noise, BridgeConfig};

/// σ, the per-segment horizon `T` and the number of chained segments `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSchedule {
    pub sigma: f64,
    pub horizon: f64,
    pub segments: usize,
}

impl BridgeSchedule {
    pub fn new(sigma: f64, horizon: f64, segments: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("T must be positive, got {horizon}")));
        }
        if segments == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        Ok(Self { sigma, horizon, segments })
    }

    /// Single bridge (`N = 1`) with the given σ and `T`.
    pub fn single(sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(sigma, horizon, 1)
    }

    /// Total time spanned by the chain, `N·T`.
    pub fn total_time(&self) -> f64 {
        self.segments as f64 * self.horizon
    }

    /// Bridge parameters of the full-σ bridge.
    pub fn bridge_config(&self) -> BridgeConfig {
        BridgeConfig { sigma: self.sigma, horizon: self.horizon }
    }

    /// Bridge parameters of segment `i`, with σᵢ in place of σ.
    pub fn segment_config(&self, i: usize) -> Result<BridgeConfig> {
        Ok(BridgeConfig { sigma: sigma_for_segment(i, self)?, horizon: self.horizon })
    }
}

/// Position on the chain: segment `i` and the time inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentTime {
    pub index: usize,
    pub local: f64,
}

impl SegmentTime {
    pub fn global(&self, sched: &BridgeSchedule) -> f64 {
        self.index as f64 * sched.horizon + self.local
    }
}

/// `i = ⌊t/T⌋`, `t' = t − i·T` for `t ∈ [0, N·T)`.
pub fn segment_index(t: f64, sched: &BridgeSchedule) -> Result<SegmentTime> {
    let end = sched.total_time();
    if !(0.0..end).contains(&t) {
        return Err(Error::Range { t, end });
    }
    // Rounding in t/T may land on N just below the end of the chain.
    let index = ((t / sched.horizon).floor() as usize).min(sched.segments - 1);
    Ok(SegmentTime { index, local: t - index as f64 * sched.horizon })
}

/// σᵢ = ((N − i)/N)·σ, decaying linearly along the chain.
pub fn sigma_for_segment(i: usize, sched: &BridgeSchedule) -> Result<f64> {
    if i >= sched.segments {
        return Err(Error::Index { index: i, count: sched.segments });
    }
    let n = sched.segments as f64;
    Ok((n - i as f64) / n * sched.sigma)
}

/// Euler–Maruyama path of `dR = (z1 − R)/(T − t) dt + σ dW` started at `z0`.
///
/// Noise increments are CoM-free. Returns `steps + 1` states.
pub fn simulate_bridge_sde<R: Rng + ?Sized>(
    z0: &[Vec3],
    z1: &[Vec3],
    cfg: &BridgeConfig,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec3>>> {
    let noise: Vec<Vec<Vec3>> = (0..steps).map(|_| com_free_noise(z0.len(), rng)).collect();
    simulate_bridge_with_noise(z0, z1, cfg, &noise)
}

/// Same as [`simulate_bridge_sde`] with caller-supplied standard normal increments,
/// one set of `n` vectors per step.
pub fn simulate_bridge_with_noise(
    z0: &[Vec3],
    z1: &[Vec3],
    cfg: &BridgeConfig,
    noise: &[Vec<Vec3>],
) -> Result<Vec<Vec<Vec3>>> {
    let steps = noise.len();
    if steps == 0 {
        return Err(Error::Config("bridge simulation needs at least one step".into()));
    }
    if z0.len() != z1.len() || noise.iter().any(|e| e.len() != z0.len()) {
        return Err(Error::Shape("endpoints and noise must share the atom count".into()));
    }
    let dt = cfg.horizon / steps as f64;
    let noise_scale = cfg.sigma * dt.sqrt();
    let mut path = Vec::with_capacity(steps + 1);
    let mut state = z0.to_vec();
    path.push(state.clone());
    for (k, eps) in noise.iter().enumerate() {
        // Left endpoint: the last evaluation is at T − dt.
        let remaining = cfg.horizon - k as f64 * dt;
        for ((r, z), e) in state.iter_mut().zip(z1).zip(eps) {
            *r += (z - *r) * (dt / remaining) + e * noise_scale;
        }
        path.push(state.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{rmsd, RigidMotion};
    use crate::kernels::bridge_marginal;
    use crate::rng;

    fn sched(sigma: f64, horizon: f64, n: usize) -> BridgeSchedule {
        BridgeSchedule::new(sigma, horizon, n).unwrap()
    }

    #[test]
    fn segment_index_examples() {
        let s = sched(1.0, 1.0, 3);
        assert_eq!(segment_index(0.0, &s).unwrap(), SegmentTime { index: 0, local: 0.0 });
        assert_eq!(segment_index(1.5, &s).unwrap(), SegmentTime { index: 1, local: 0.5 });
        let st = segment_index(3.0 - 1e-9, &s).unwrap();
        assert_eq!(st.index, 2);
        assert!((st.local - (1.0 - 1e-9)).abs() < 1e-15);
        assert!(matches!(segment_index(3.0, &s), Err(Error::Range { .. })));
        assert!(matches!(segment_index(-0.1, &s), Err(Error::Range { .. })));
    }

    #[test]
    fn segment_index_round_trips() {
        let s = sched(0.5, 0.7, 5);
        for k in 0..1000 {
            let t = k as f64 * 3.5 / 1000.0;
            let st = segment_index(t, &s).unwrap();
            assert!((st.global(&s) - t).abs() < 1e-14);
            assert!(st.local >= 0.0 && st.local < s.horizon);
        }
    }

    #[test]
    fn sigma_schedule() {
        let s = sched(0.5, 1.0, 10);
        assert_eq!(sigma_for_segment(0, &s).unwrap(), 0.5);
        assert!((sigma_for_segment(9, &s).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(sigma_for_segment(10, &s), Err(Error::Index { .. })));
        assert_eq!(sigma_for_segment(0, &sched(0.3, 1.0, 1)).unwrap(), 0.3);
        assert!(BridgeSchedule::new(0.0, 1.0, 1).is_err());
        assert!(BridgeSchedule::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn zero_noise_bridge_is_straight_line() {
        let cfg = BridgeConfig { sigma: 0.0, horizon: 1.0 };
        let z0 = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)];
        let z1 = vec![Vec3::new(2.0, -1.0, 0.5), Vec3::new(0.0, 3.0, 1.0)];
        let steps = 10_000;
        let mut r = rng::seeded(1);
        let path = simulate_bridge_sde(&z0, &z1, &cfg, steps, &mut r).unwrap();
        assert_eq!(path.len(), steps + 1);
        assert_eq!(path[0], z0);
        assert!(rmsd(path.last().unwrap(), &z1) < 1e-6);
        let mid = &path[steps / 2];
        for k in 0..2 {
            assert!((mid[k] - (z0[k] + z1[k]) * 0.5).amax() < 1e-9);
        }
    }

    #[test]
    fn equivariant_under_shared_rotated_noise() {
        let mut r = rng::seeded(2);
        let cfg = BridgeConfig::new(0.8, 1.0).unwrap();
        let z0 = com_free_noise(4, &mut r);
        let z1 = com_free_noise(4, &mut r);
        let noise: Vec<Vec<Vec3>> = (0..50).map(|_| com_free_noise(4, &mut r)).collect();
        let g = RigidMotion::random(&mut r, 2.0);
        let path = simulate_bridge_with_noise(&z0, &z1, &cfg, &noise).unwrap();
        let rotated_noise: Vec<Vec<Vec3>> = noise.iter().map(|e| g.apply_vectors(e)).collect();
        let moved =
            simulate_bridge_with_noise(&g.apply_points(&z0), &g.apply_points(&z1), &cfg, &rotated_noise)
                .unwrap();
        for (a, b) in path.iter().zip(&moved) {
            assert!(rmsd(&g.apply_points(a), b) < 1e-12);
        }
    }

    #[test]
    fn mid_time_statistics_match_marginal() {
        let cfg = BridgeConfig::new(1.0, 1.0).unwrap();
        let z0 = [Vec3::new(0.0, 0.0, 0.0)];
        let z1 = [Vec3::new(1.0, -0.5, 2.0)];
        let steps = 1000;
        let paths = 10_000;
        let mut r = rng::seeded(3);
        let mut sum = Vec3::zeros();
        let mut sq = Vec3::zeros();
        for _ in 0..paths {
            let p = simulate_bridge_sde(&z0, &z1, &cfg, steps, &mut r).unwrap();
            let x = p[steps / 2][0];
            sum += x;
            sq += x.component_mul(&x);
        }
        let m = sum / paths as f64;
        let var = sq / paths as f64 - m.component_mul(&m);
        let reference = bridge_marginal(&z0, &z1, 0.5, &cfg).unwrap();
        for d in 0..3 {
            assert!((m[d] - reference.mean[0][d]).abs() < 0.02);
            assert!((var[d].sqrt() - reference.std).abs() < 0.02);
        }
    }

    #[test]
    fn endpoint_error_rate() {
        // The final Euler step cancels the drift exactly, leaving σ√dt noise:
        // halving dt shrinks the endpoint error by √2.
        let cfg = BridgeConfig::new(1.0, 1.0).unwrap();
        let mut r = rng::seeded(4);
        let z0 = com_free_noise(3, &mut r);
        let z1 = com_free_noise(3, &mut r);
        let mean_err = |steps: usize, r: &mut rng::Rng| {
            let total: f64 = (0..1000)
                .map(|_| rmsd(simulate_bridge_sde(&z0, &z1, &cfg, steps, r).unwrap().last().unwrap(), &z1))
                .sum();
            total / 1000.0
        };
        let coarse = mean_err(50, &mut r);
        let fine = mean_err(100, &mut r);
        let ratio = coarse / fine;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.3, "ratio {ratio}");
    }
}
