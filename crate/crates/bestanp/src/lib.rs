//! Bias-eliminated closed-form 6-DoF pose estimation for a 2D
//! forward-looking sonar, with supporting geometry, sensor model, two-view
//! triangulation, sonar-only odometry, and a Monte Carlo experiment harness.
//!
//! The core entry point is [`estimator::bestanp`], which takes paired 3D
//! world points and sonar `(distance, azimuth)` measurements and returns a
//! closed-form pose plus a single Gauss-Newton refinement and noise-variance
//! estimates. All randomness in simulation code flows through
//! [`stream::substream`], so every experiment is reproducible from a seed.

pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod odometry;
pub mod sonar;
pub mod stream;
pub mod triangulation;

pub use estimator::{bestanp, bestanp_with, CorrespondenceSet, EstimateReport, EstimatorConfig};
pub use geometry::{Pose, RotationMatrix, RotationVector};
pub use sonar::{FovSpec, NoiseModel, SonarMeasurement};
