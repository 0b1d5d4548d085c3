//! Gauss-Newton refinement of the maximum-likelihood cost.
//!
//! The rotation is optimized on its tangent space: `R(s) = R0 exp(s^)` with
//! the step taken at `s = 0`. Residual rows alternate distance then azimuth
//! per point, each whitened by its noise standard deviation; the update
//! solves the 6x6 normal equations once per iteration.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};

use super::{CorrespondenceSet, EstimatorError};
use crate::geometry::{so3_exp, Pose, RotationVector};

/// Condition-number cap on the GN normal matrix.
const MAX_NORMAL_CONDITION: f64 = 1e12;

/// Relative azimuth-denominator guard: `|h_i| > 1e-9 ‖u_i‖`.
const DENOMINATOR_GUARD: f64 = 1e-9;

/// Residual, Jacobian, and step of the last GN iteration.
#[derive(Debug, Clone)]
pub struct GnWorkspace {
    /// Whitened residual, rows alternating distance then azimuth per point.
    pub residual: DVector<f64>,
    /// Whitened 2n x 6 Jacobian, columns ordered rotation tangent then
    /// translation.
    pub jacobian: DMatrix<f64>,
    /// Solved 6-vector update (rotation tangent stacked with translation).
    pub step: Vector6<f64>,
}

/// One whitened Jacobian row pair for a single point.
pub(super) struct RowPair {
    pub dist_dt: Vector3<f64>,
    pub azim_ds: Vector3<f64>,
    pub azim_dt: Vector3<f64>,
}

/// Jacobian blocks at the current pose. Distance rows have a zero rotation
/// block; azimuth rows come from the quotient rule, where the tangent-space
/// derivative of `aᵀ exp(s^) b` at `s = 0` reduces to a cross product.
pub(super) fn jacobian_rows(
    index: usize,
    world_point: &Vector3<f64>,
    pose: &Pose,
    sigma_d: f64,
    sigma_theta: f64,
) -> Result<RowPair, EstimatorError> {
    let u = world_point - pose.translation;
    let norm_u = u.norm();
    let r = pose.rotation.matrix();
    let a = r.transpose() * u; // sonar-frame point
    let h = a.x;
    let g = a.y;
    if h.abs() <= DENOMINATOR_GUARD * norm_u {
        return Err(EstimatorError::AzimuthDenominatorVanishes { index });
    }
    let h2 = h * h;
    // d f_theta / d s = (c x m) / h^2 with c = (g, -h, 0), m = R^T u.
    let c = Vector3::new(g, -h, 0.0);
    let azim_ds = c.cross(&a) / h2 / sigma_theta;
    // d f_theta / d t = R (h e2 - g e1) / h^2.
    let azim_dt = (r * Vector3::new(-g, h, 0.0)) / h2 / sigma_theta;
    let dist_dt = u / norm_u / sigma_d;
    Ok(RowPair {
        dist_dt,
        azim_ds,
        azim_dt,
    })
}

fn build_system(
    corr: &CorrespondenceSet,
    pose: &Pose,
    sigma_d: f64,
    sigma_theta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), EstimatorError> {
    let n = corr.len();
    let mut residual = DVector::zeros(2 * n);
    let mut jacobian = DMatrix::zeros(2 * n, 6);
    for (i, (p, m)) in corr
        .world_points()
        .iter()
        .zip(corr.measurements())
        .enumerate()
    {
        let rows = jacobian_rows(i, p, pose, sigma_d, sigma_theta)?;
        let u = p - pose.translation;
        let a = pose.rotation.matrix().transpose() * u;
        let f_d = m.distance - u.norm();
        let f_theta = m.azimuth_tangent - a.y / a.x;
        residual[2 * i] = f_d / sigma_d;
        residual[2 * i + 1] = f_theta / sigma_theta;
        for k in 0..3 {
            jacobian[(2 * i, 3 + k)] = rows.dist_dt[k];
            jacobian[(2 * i + 1, k)] = rows.azim_ds[k];
            jacobian[(2 * i + 1, 3 + k)] = rows.azim_dt[k];
        }
    }
    Ok((residual, jacobian))
}

fn solve_normal(
    jacobian: &DMatrix<f64>,
    residual: &DVector<f64>,
) -> Result<Vector6<f64>, EstimatorError> {
    let jt = jacobian.transpose();
    let normal: Matrix6<f64> = Matrix6::from_iterator((&jt * jacobian).iter().cloned());
    let rhs: Vector6<f64> = Vector6::from_iterator((&jt * residual).iter().cloned());

    let eig = normal.symmetric_eigen().eigenvalues;
    let lam_max = eig.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let lam_min = eig.iter().cloned().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    let condition = if lam_min > 0.0 {
        lam_max / lam_min
    } else {
        f64::INFINITY
    };
    if condition > MAX_NORMAL_CONDITION {
        return Err(EstimatorError::SingularNormalMatrix { condition });
    }
    let solved = normal
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| normal.try_inverse().map(|inv| inv * rhs))
        .ok_or(EstimatorError::SingularNormalMatrix { condition })?;
    Ok(-solved)
}

/// Runs `iterations` Gauss-Newton steps starting at `pose0`.
///
/// The step is always applied, without damping or line search; the returned
/// workspace holds the last iteration's residual, Jacobian, and step.
pub fn gn_refine(
    corr: &CorrespondenceSet,
    pose0: &Pose,
    sigma_d: f64,
    sigma_theta: f64,
    iterations: usize,
) -> Result<(Pose, GnWorkspace), EstimatorError> {
    assert!(iterations >= 1, "gn_refine requires at least one iteration");
    let sigma_d = sigma_d.max(1e-6);
    let sigma_theta = sigma_theta.max(1e-6);

    let mut pose = *pose0;
    let mut workspace = None;
    for _ in 0..iterations {
        let (residual, jacobian) = build_system(corr, &pose, sigma_d, sigma_theta)?;
        let step = solve_normal(&jacobian, &residual)?;
        let s = RotationVector(Vector3::new(step[0], step[1], step[2]));
        let dt = Vector3::new(step[3], step[4], step[5]);
        pose = Pose::new(pose.rotation * so3_exp(&s), pose.translation + dt);
        workspace = Some(GnWorkspace {
            residual,
            jacobian,
            step,
        });
    }
    Ok((pose, workspace.expect("iterations >= 1")))
}

/// Whitened maximum-likelihood objective `(1/n) Σ (f_d²/σ_d² + f_θ²/σ_θ²)`.
pub fn ml_cost(
    corr: &CorrespondenceSet,
    pose: &Pose,
    sigma_d: f64,
    sigma_theta: f64,
) -> Result<f64, EstimatorError> {
    let sigma_d = sigma_d.max(1e-6);
    let sigma_theta = sigma_theta.max(1e-6);
    let mut total = 0.0;
    for (i, (p, m)) in corr
        .world_points()
        .iter()
        .zip(corr.measurements())
        .enumerate()
    {
        let u = p - pose.translation;
        let a = pose.rotation.matrix().transpose() * u;
        if a.x.abs() <= DENOMINATOR_GUARD * u.norm() {
            return Err(EstimatorError::AzimuthDenominatorVanishes { index: i });
        }
        let f_d = (m.distance - u.norm()) / sigma_d;
        let f_theta = (m.azimuth_tangent - a.y / a.x) / sigma_theta;
        total += f_d * f_d + f_theta * f_theta;
    }
    Ok(total / corr.len() as f64)
}
