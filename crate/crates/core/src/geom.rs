//! Geometric states, SE(3) actions, centre-of-mass handling and rigid alignment.

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// `n` atoms: Cartesian coordinates in Å plus opaque atom-type ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricState {
    pub coords: Vec<Vec3>,
    pub features: Vec<u32>,
}

impl GeometricState {
    pub fn new(coords: Vec<Vec3>, features: Vec<u32>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Input("a geometric state needs at least one atom".into()));
        }
        if coords.len() != features.len() {
            return Err(Error::Shape(format!(
                "{} coordinates but {} features",
                coords.len(),
                features.len()
            )));
        }
        if coords.iter().any(|r| !r.iter().all(|x| x.is_finite())) {
            return Err(Error::Input("non-finite coordinate".into()));
        }
        Ok(Self { coords, features })
    }

    /// State with every atom typed `0`.
    pub fn untyped(coords: Vec<Vec3>) -> Result<Self> {
        let n = coords.len();
        Self::new(coords, vec![0; n])
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    /// Same features, new coordinates.
    pub fn with_coords(&self, coords: Vec<Vec3>) -> Self {
        debug_assert_eq!(coords.len(), self.features.len());
        Self { coords, features: self.features.clone() }
    }
}

/// A proper rigid motion `r ↦ R·r + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

const ROTATION_TOL: f64 = 1e-12;

impl RigidMotion {
    /// Validates that `rotation` is orthogonal with determinant one.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Input(format!(
                "not a proper rotation (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn rotation(rotation: Matrix3<f64>) -> Self {
        Self { rotation, translation: Vec3::zeros() }
    }

    /// Haar-uniform rotation and Gaussian translation with per-axis std `translation_scale`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, translation_scale: f64) -> Self {
        let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let rotation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q))
            .to_rotation_matrix()
            .into_inner();
        let translation = Vec3::from_fn(|_, _| translation_scale * rng.sample::<f64, _>(StandardNormal));
        Self { rotation, translation }
    }

    /// `outer ∘ inner`: apply `inner` first.
    pub fn compose(outer: &Self, inner: &Self) -> Self {
        Self {
            rotation: outer.rotation * inner.rotation,
            translation: outer.rotation * inner.translation + outer.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply_point(&self, r: &Vec3) -> Vec3 {
        self.rotation * r + self.translation
    }

    /// Rotation only; vectors (differences, fields) do not translate.
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn apply_points(&self, coords: &[Vec3]) -> Vec<Vec3> {
        coords.iter().map(|r| self.apply_point(r)).collect()
    }

    pub fn apply_vectors(&self, field: &[Vec3]) -> Vec<Vec3> {
        field.iter().map(|v| self.apply_vector(v)).collect()
    }
}

/// Mean position of a coordinate set.
pub fn mean(coords: &[Vec3]) -> Vec3 {
    let sum = coords.iter().fold(Vec3::zeros(), |acc, r| acc + r);
    sum / coords.len() as f64
}

/// Subtracts the mean in place.
pub fn remove_mean(coords: &mut [Vec3]) {
    let c = mean(coords);
    for r in coords.iter_mut() {
        *r -= c;
    }
}

pub fn centered(coords: &[Vec3]) -> Vec<Vec3> {
    let mut out = coords.to_vec();
    remove_mean(&mut out);
    out
}

pub fn center_of_mass(state: &GeometricState) -> Vec3 {
    mean(&state.coords)
}

pub fn project_com_free(state: &GeometricState) -> GeometricState {
    state.with_coords(centered(&state.coords))
}

pub fn apply_rigid_motion(state: &GeometricState, motion: &RigidMotion) -> GeometricState {
    state.with_coords(motion.apply_points(&state.coords))
}

/// Applies only the rotational part of `motion`.
pub fn apply_rotation_only(state: &GeometricState, motion: &RigidMotion) -> GeometricState {
    state.with_coords(motion.apply_vectors(&state.coords))
}

/// Root-mean-square deviation without alignment.
pub fn rmsd(a: &[Vec3], b: &[Vec3]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    (ss / a.len() as f64).sqrt()
}

/// Optimal proper rotation taking centred `mobile` onto centred `target`.
///
/// Returns the rotation together with the determinant of the uncorrected
/// SVD solution (negative when a reflection would have been optimal).
pub(crate) fn kabsch_rotation(mobile: &[Vec3], target: &[Vec3]) -> (Matrix3<f64>, f64) {
    let mut h = Matrix3::zeros();
    for (p, q) in mobile.iter().zip(target) {
        h += p * q.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let naive_det = (v * u.transpose()).determinant();
    let d = if naive_det < 0.0 { -1.0 } else { 1.0 };
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    (v * correction * u.transpose(), naive_det)
}

/// Rigidly superimposes `pred` onto `reference` (no reflections).
pub fn kabsch_align(
    pred: &GeometricState,
    reference: &GeometricState,
) -> Result<(GeometricState, RigidMotion)> {
    if pred.n_atoms() != reference.n_atoms() {
        return Err(Error::Shape(format!(
            "cannot align {} atoms onto {} atoms",
            pred.n_atoms(),
            reference.n_atoms()
        )));
    }
    if pred.features != reference.features {
        return Err(Error::Shape("aligned states carry different atom features".into()));
    }
    let pred_com = mean(&pred.coords);
    let ref_com = mean(&reference.coords);
    let p = centered(&pred.coords);
    let q = centered(&reference.coords);
    let (rotation, _) = kabsch_rotation(&p, &q);
    let motion = RigidMotion { rotation, translation: ref_com - rotation * pred_com };
    Ok((apply_rigid_motion(pred, &motion), motion))
}
