//! Cramer-Rao lower bound for the pose under the Gaussian measurement model.
//!
//! The bound is the inverse Fisher information `(J*ᵀJ*)⁻¹`, where `J*` is the
//! whitened measurement Jacobian evaluated at the true pose with the true
//! noise standard deviations. The rotation block lives in the tangent chart
//! at the true rotation, ordered rotation tangent then translation.

use nalgebra::{Matrix6, Vector3};

use super::refine::jacobian_rows;
use super::EstimatorError;
use crate::geometry::Pose;

#[derive(Debug, Clone)]
pub struct CrlbMatrix {
    /// 6x6 symmetric positive-definite covariance bound.
    pub cov_bound: Matrix6<f64>,
}

impl CrlbMatrix {
    /// Square root of the trace of the rotation block (radians).
    pub fn root_trace_rotation(&self) -> f64 {
        self.cov_bound.fixed_view::<3, 3>(0, 0).trace().sqrt()
    }

    /// Square root of the trace of the translation block (meters).
    pub fn root_trace_translation(&self) -> f64 {
        self.cov_bound.fixed_view::<3, 3>(3, 3).trace().sqrt()
    }
}

/// Fisher-information bound at a known true pose with known noise levels.
pub fn compute_crlb(
    world_points: &[Vector3<f64>],
    true_pose: &Pose,
    sigma_d: f64,
    sigma_theta: f64,
) -> Result<CrlbMatrix, EstimatorError> {
    let sigma_d = sigma_d.max(1e-9);
    let sigma_theta = sigma_theta.max(1e-9);
    let mut info = Matrix6::zeros();
    for (i, p) in world_points.iter().enumerate() {
        let rows = jacobian_rows(i, p, true_pose, sigma_d, sigma_theta)?;
        let mut dist = nalgebra::Vector6::zeros();
        dist.fixed_rows_mut::<3>(3).copy_from(&rows.dist_dt);
        let mut azim = nalgebra::Vector6::zeros();
        azim.fixed_rows_mut::<3>(0).copy_from(&rows.azim_ds);
        azim.fixed_rows_mut::<3>(3).copy_from(&rows.azim_dt);
        info += dist * dist.transpose() + azim * azim.transpose();
    }
    let cov = info
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or(EstimatorError::SingularNormalMatrix {
            condition: f64::INFINITY,
        })?;
    Ok(CrlbMatrix {
        cov_bound: (cov + cov.transpose()) * 0.5,
    })
}
