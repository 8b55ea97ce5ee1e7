//! Synthetic relaxation trajectories driven by a pairwise potential plus
//! CoM-free Brownian noise.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kernels::com_free_noise;
use crate::oracles::simulate_prior_sde;
use crate::rng;
use crate::training::{PairDataset, TrajectoryDataset, TrajectorySample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    /// `V = (k/2)·Σ_{i<j}(‖rᵢ − rⱼ‖ − d0)²`
    HarmonicPairs,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub k: f64,
    pub d0: f64,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self { kind: PotentialKind::HarmonicPairs, k: 5.0, d0: 1.5 }
    }
}

impl PotentialSpec {
    pub fn zero() -> Self {
        Self { kind: PotentialKind::Zero, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("spring constant k must be non-negative, got {}", self.k)));
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::Config(format!("rest length d0 must be positive, got {}", self.d0)));
        }
        Ok(())
    }
}

const MIN_DISTANCE: f64 = 1e-9;

pub fn potential_energy(spec: &PotentialSpec, coords: &[Vec3]) -> f64 {
    match spec.kind {
        PotentialKind::Zero => 0.0,
        PotentialKind::HarmonicPairs => {
            let mut e = 0.0;
            for i in 0..coords.len() {
                for j in i + 1..coords.len() {
                    let d = (coords[i] - coords[j]).norm() - spec.d0;
                    e += d * d;
                }
            }
            0.5 * spec.k * e
        }
    }
}

/// ∇V at every atom. The pair terms cancel in the sum, so the field has zero row-sum.
pub fn potential_gradient(spec: &PotentialSpec, coords: &[Vec3]) -> Result<Vec<Vec3>> {
    let n = coords.len();
    let mut grad = vec![Vec3::zeros(); n];
    match spec.kind {
        PotentialKind::Zero => {}
        PotentialKind::HarmonicPairs => {
            if n < 2 {
                return Err(Error::Input("harmonic pair potential needs at least two atoms".into()));
            }
            for i in 0..n {
                for j in i + 1..n {
                    let diff = coords[i] - coords[j];
                    let d = diff.norm();
                    if d < MIN_DISTANCE {
                        return Err(Error::SingularGradient { i, j });
                    }
                    let g = diff * (spec.k * (d - spec.d0) / d);
                    grad[i] += g;
                    grad[j] -= g;
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub n_records: usize,
    pub n_atoms: usize,
    pub segments: usize,
    pub sim_dt: f64,
    pub sim_steps_per_segment: usize,
    pub sigma: f64,
    pub seed: u64,
    pub init_spread: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_records: 100,
            n_atoms: 5,
            segments: 10,
            sim_dt: 1e-3,
            sim_steps_per_segment: 100,
            sigma: 0.5,
            seed: 0,
            init_spread: 2.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 || self.n_atoms == 0 || self.segments == 0 || self.sim_steps_per_segment == 0 {
            return Err(Error::Config("n_records, n_atoms, N and sim_steps_per_segment must be at least 1".into()));
        }
        if !(self.sim_dt > 0.0 && self.sim_dt.is_finite()) {
            return Err(Error::Config(format!("sim_dt must be positive, got {}", self.sim_dt)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(self.init_spread >= 0.0) {
            return Err(Error::Config("sigma and init_spread must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generated records plus the number skipped after a failed simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub dataset: TrajectoryDataset,
    pub skipped: usize,
}

fn generate_record(spec: &DatasetSpec, potential: &PotentialSpec, index: usize) -> Result<TrajectorySample> {
    let mut r = rng::stream(spec.seed, index as u64);
    let start: Vec<Vec3> = com_free_noise(spec.n_atoms, &mut r).into_iter().map(|x| x * spec.init_spread).collect();
    let steps = spec.segments * spec.sim_steps_per_segment;
    let path = simulate_prior_sde(potential, &start, spec.sigma, spec.sim_dt, steps, &mut r)?;
    let frames = path.into_iter().step_by(spec.sim_steps_per_segment).collect();
    Ok(TrajectorySample { features: vec![0; spec.n_atoms], frames })
}

/// Simulates `n_records` trajectories and keeps `N + 1` evenly strided frames of each.
///
/// Record `k` draws from its own stream, so output does not depend on the
/// thread count. Failed records are dropped with a warning.
pub fn generate_trajectories(spec: &DatasetSpec, potential: &PotentialSpec) -> Result<GeneratedData> {
    spec.validate()?;
    potential.validate()?;
    let results: Vec<Result<TrajectorySample>> =
        (0..spec.n_records).into_par_iter().map(|k| generate_record(spec, potential, k)).collect();
    let mut records = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => records.push(rec),
            Err(e @ (Error::Divergence { .. } | Error::SingularGradient { .. })) => {
                log::warn!("record {k} skipped: {e}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(GeneratedData { dataset: TrajectoryDataset::new(records)?, skipped })
}

/// One `(first frame, last frame)` pair per record.
pub fn pairs_from_trajectories(dataset: &TrajectoryDataset) -> Result<PairDataset> {
    PairDataset::new(
        dataset
            .records()
            .iter()
            .map(|rec| (rec.frame_state(0), rec.frame_state(rec.frames.len() - 1)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{mean, RigidMotion};
    use rand::Rng;

    #[test]
    fn rest_length_and_stretched_pair() {
        let spec = PotentialSpec { kind: PotentialKind::HarmonicPairs, k: 1.0, d0: 1.5 };
        let g = potential_gradient(&spec, &[Vec3::zeros(), Vec3::new(1.5, 0.0, 0.0)]).unwrap();
        assert!(g.iter().all(|v| v.norm() < 1e-15));
        let g = potential_gradient(&spec, &[Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)]).unwrap();
        // descent direction −∇V pulls the atoms together
        assert!((g[0] - Vec3::new(-1.5, 0.0, 0.0)).norm() < 1e-15);
        assert!((g[1] - Vec3::new(1.5, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn coincident_atoms_are_singular() {
        let spec = PotentialSpec::default();
        let err = potential_gradient(&spec, &[Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::zeros()]);
        assert_eq!(err, Err(Error::SingularGradient { i: 0, j: 2 }));
        assert!(potential_gradient(&spec, &[Vec3::zeros()]).is_err());
        assert_eq!(potential_gradient(&PotentialSpec::zero(), &[Vec3::zeros()]).unwrap(), vec![Vec3::zeros()]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = PotentialSpec::default();
        let mut r = rng::seeded(1);
        let h = 1e-6;
        for _ in 0..20 {
            let x: Vec<Vec3> = com_free_noise(4, &mut r).into_iter().map(|p| p * 2.0).collect();
            let g = potential_gradient(&spec, &x).unwrap();
            for a in 0..4 {
                for d in 0..3 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[a][d] += h;
                    xm[a][d] -= h;
                    let fd = (potential_energy(&spec, &xp) - potential_energy(&spec, &xm)) / (2.0 * h);
                    assert!((fd - g[a][d]).abs() <= 1e-6 * g[a][d].abs().max(1.0), "{fd} vs {}", g[a][d]);
                }
            }
        }
    }

    #[test]
    fn gradient_is_equivariant_and_row_sums_vanish() {
        let spec = PotentialSpec::default();
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let x: Vec<Vec3> = (0..5).map(|_| Vec3::new(r.random(), r.random(), r.random()) * 3.0).collect();
            let m = RigidMotion::random(&mut r, 5.0);
            let g = potential_gradient(&spec, &x).unwrap();
            let gm = potential_gradient(&spec, &m.apply_points(&x)).unwrap();
            for (a, b) in m.apply_vectors(&g).iter().zip(&gm) {
                assert!((a - b).amax() < 1e-10);
            }
            assert!(mean(&g).amax() < 1e-12);
        }
    }

    #[test]
    fn records_have_n_plus_one_com_free_frames() {
        let spec = DatasetSpec { n_records: 8, ..DatasetSpec::default() };
        let out = generate_trajectories(&spec, &PotentialSpec::default()).unwrap();
        assert_eq!(out.skipped, 0);
        assert_eq!(out.dataset.len(), 8);
        for rec in out.dataset.records() {
            assert_eq!(rec.frames.len(), 11);
            assert_eq!(rec.features, vec![0; 5]);
            for f in &rec.frames {
                assert!(mean(f).amax() < 1e-10);
            }
        }
        assert_eq!(out, generate_trajectories(&spec, &PotentialSpec::default()).unwrap());
    }

    #[test]
    fn pairs_take_first_and_last_frames() {
        let spec = DatasetSpec { n_records: 100, segments: 3, sim_steps_per_segment: 5, ..DatasetSpec::default() };
        let data = generate_trajectories(&spec, &PotentialSpec::default()).unwrap().dataset;
        let pairs = pairs_from_trajectories(&data).unwrap();
        assert_eq!(pairs.len(), 100);
        for (rec, (a, b)) in data.records().iter().zip(pairs.pairs()) {
            assert_eq!(a.coords, rec.frames[0]);
            assert_eq!(b.coords, rec.frames[3]);
            assert_eq!(a.features, rec.features);
            assert_eq!(b.features, rec.features);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(DatasetSpec { sim_dt: 0.0, ..DatasetSpec::default() }.validate().is_err());
        assert!(DatasetSpec { n_atoms: 0, ..DatasetSpec::default() }.validate().is_err());
        assert!(PotentialSpec { d0: 0.0, ..PotentialSpec::default() }.validate().is_err());
        assert!(PotentialSpec { k: -1.0, ..PotentialSpec::default() }.validate().is_err());
    }
}
