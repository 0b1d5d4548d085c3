//! Bias-eliminated translation estimation from distance measurements.
//!
//! Squaring the range equation `d_i = ‖p_i - t‖ + eps` gives a linear system
//! in `(t, ‖t‖² + sigma_d²)`; solving it in least squares yields both the
//! translation and the distance noise variance. Non-coplanar points make the
//! system full rank.

use nalgebra::{Matrix4, Vector3, Vector4};

use super::{CorrespondenceSet, EstimatorError};

/// Scale-aware rank threshold: smallest singular value of the homogeneous
/// point matrix must exceed 1e-6 times the largest.
const COPLANARITY_RATIO: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TranslationEstimate {
    pub t_hat: Vector3<f64>,
    /// Estimated distance noise variance, clamped at zero.
    pub sigma_d_sq_hat: f64,
    /// Condition number of the linear design matrix.
    pub design_matrix_condition: f64,
}

/// Checks the non-coplanarity invariant: returns the singular-value ratio of
/// the `n x 4` homogeneous point matrix.
pub(crate) fn homogeneous_rank_ratio(points: &[Vector3<f64>]) -> f64 {
    let mut gram = Matrix4::zeros();
    for p in points {
        let h = Vector4::new(p.x, p.y, p.z, 1.0);
        gram += h * h.transpose();
    }
    let eig = gram.symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(0.0f64, f64::max).max(0.0);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    if max == 0.0 {
        0.0
    } else {
        (min / max).sqrt()
    }
}

/// Solves the 4-unknown bias-eliminated least-squares problem and splits the
/// solution into translation and distance-noise variance.
pub fn estimate_translation(
    corr: &CorrespondenceSet,
) -> Result<TranslationEstimate, EstimatorError> {
    let n = corr.len();
    if n < 4 {
        return Err(EstimatorError::TooFewPoints { needed: 4, got: n });
    }
    let ratio = homogeneous_rank_ratio(corr.world_points());
    if ratio <= COPLANARITY_RATIO {
        return Err(EstimatorError::CoplanarPoints {
            condition: if ratio > 0.0 { 1.0 / ratio } else { f64::INFINITY },
        });
    }

    // Normal equations for rows a_i = (-2 p_i^T, 1), b_i = d_i^2 - ‖p_i‖^2.
    let mut normal = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for (p, m) in corr.world_points().iter().zip(corr.measurements()) {
        let a = Vector4::new(-2.0 * p.x, -2.0 * p.y, -2.0 * p.z, 1.0);
        let b = m.distance * m.distance - p.norm_squared();
        normal += a * a.transpose();
        rhs += a * b;
    }

    let eig = normal.symmetric_eigen().eigenvalues;
    let lam_max = eig.iter().cloned().fold(0.0f64, f64::max);
    let lam_min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if lam_min > 0.0 {
        (lam_max / lam_min).sqrt()
    } else {
        f64::INFINITY
    };

    let x = normal
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| normal.try_inverse().map(|inv| inv * rhs))
        .ok_or(EstimatorError::CoplanarPoints { condition })?;

    let t_hat = Vector3::new(x[0], x[1], x[2]);
    let sigma_d_sq_hat = (x[3] - t_hat.norm_squared()).max(0.0);
    Ok(TranslationEstimate {
        t_hat,
        sigma_d_sq_hat,
        design_matrix_condition: condition,
    })
}
