//! Equivariant diffusion bridges between geometric states.
//!
//! The crate is organised bottom-up:
//!
//! - [`geom`]: geometric states, rigid motions, CoM handling and Kabsch alignment.
//! - [`kernels`]: Gaussian prior kernels, closed-form bridge marginals and a 1-D
//!   grid oracle for Doob's h-transform.
//! - [`bridge`]: bridge schedules, chain time indexing and Euler–Maruyama bridge paths.
//! - [`scoremodel`]: the equivariant conditional vector field and its exact gradients.
//! - [`training`]: pair and trajectory matching objectives, AdamW, training loops.
//! - [`sampling`]: deterministic drift integration for single bridges and chains.
//! - [`oracles`]: OU references and the Girsanov KL study.
//! - [`synthdata`]: harmonic relaxation trajectories used as synthetic data.
//! - [`metrics`]: C-RMSD, D-MAE, D-RMSE and ADwT.

pub mod bridge;
pub mod error;
pub mod geom;
pub mod kernels;
pub mod metrics;
pub mod oracles;
pub mod rng;
pub mod sampling;
pub mod scoremodel;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use geom::{GeometricState, RigidMotion, Vec3};
