//! Azimuth-noise variance estimation and bias-eliminated rotation recovery.
//!
//! The azimuth constraint `tan(theta_i) r1 (p_i - t) - r2 (p_i - t) = 0`
//! makes the stacked 6-vector `r = [r1 r2]` a null vector of the noise-free
//! Gram matrix `Q* = B*ᵀB*/n`. With noisy tangents the Gram matrix picks up
//! a bias `sigma_theta² S` which is estimated and subtracted before taking
//! the smallest eigenvector.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::{CorrespondenceSet, EstimatorError, SignFixRule};
use crate::geometry::{project_to_so3, RotationMatrix};

/// Relative eigenvalue threshold below which the Gram matrix is treated as
/// exactly singular (zero-noise collapse).
const Q_SINGULAR_RATIO: f64 = 1e-14;

/// Relative eigengap below which the smallest-eigenvector direction is
/// ambiguous.
const EIGENGAP_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RotationEstimate {
    /// Stacked first two rows of `Rᵀ`, before SO(3) completion; `‖r‖² = 2`.
    pub r_hat: Vector6<f64>,
    pub r_be: RotationMatrix,
    pub sigma_theta_sq_hat: f64,
    /// Smallest eigenvalue of the corrected Gram matrix.
    pub smallest_eigenvalue: f64,
}

struct GramMatrices {
    q: Matrix6<f64>,
    s: Matrix6<f64>,
}

fn build_gram(corr: &CorrespondenceSet, t_hat: &Vector3<f64>) -> GramMatrices {
    let n = corr.len() as f64;
    let mut q = Matrix6::zeros();
    let mut s_block = Matrix3::zeros();
    for (p, m) in corr.world_points().iter().zip(corr.measurements()) {
        let u = p - t_hat;
        let mut row = Vector6::zeros();
        row.fixed_rows_mut::<3>(0).copy_from(&(m.azimuth_tangent * u));
        row.fixed_rows_mut::<3>(3).copy_from(&(-u));
        q += row * row.transpose();
        s_block += u * u.transpose();
    }
    q /= n;
    s_block /= n;
    let mut s = Matrix6::zeros();
    s.fixed_view_mut::<3, 3>(0, 0).copy_from(&s_block);
    GramMatrices { q, s }
}

/// Estimates the azimuth-tangent noise variance as `1 / lambda_max(Q⁻¹S)`.
///
/// When the Gram matrix is numerically singular the data is (near)
/// noise-free and the variance collapses to zero.
pub fn estimate_sigma_theta(
    corr: &CorrespondenceSet,
    t_hat: &Vector3<f64>,
) -> Result<f64, EstimatorError> {
    if corr.len() < 6 {
        return Err(EstimatorError::TooFewPoints {
            needed: 6,
            got: corr.len(),
        });
    }
    let GramMatrices { q, s } = build_gram(corr, t_hat);
    let trace = q.trace();
    let eig = q.symmetric_eigen().eigenvalues;
    let lam_min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if lam_min <= Q_SINGULAR_RATIO * trace {
        // Q has an exact null vector only when the azimuth equations are
        // consistent, i.e. the measurements carry no noise.
        return Ok(0.0);
    }
    let q_inv = q.try_inverse().ok_or_else(|| EstimatorError::DegenerateQ {
        reason: "Gram matrix is not invertible".into(),
    })?;
    let eigs = (q_inv * s).complex_eigenvalues();
    let mut lam_max = f64::NEG_INFINITY;
    for lam in eigs.iter() {
        if lam.re > lam_max {
            if lam.im.abs() > 1e-9 * lam.re.abs().max(1.0) {
                return Err(EstimatorError::DegenerateQ {
                    reason: format!("complex eigenvalue {lam} in Q^-1 S"),
                });
            }
            lam_max = lam.re;
        }
    }
    if !lam_max.is_finite() || lam_max <= 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 / lam_max).max(0.0))
}

fn fix_sign(
    corr: &CorrespondenceSet,
    t_hat: &Vector3<f64>,
    r: &mut Vector6<f64>,
    rule: SignFixRule,
) -> Result<(), EstimatorError> {
    let r1 = Vector3::new(r[0], r[1], r[2]);
    let vote = |p: &Vector3<f64>, cos_sign: f64| -> i64 {
        let predicted = r1.dot(&(p - t_hat));
        if predicted == 0.0 {
            0
        } else if predicted.signum() == cos_sign.signum() {
            1
        } else {
            -1
        }
    };
    let tally: i64 = match rule {
        SignFixRule::MajorityVote => corr
            .world_points()
            .iter()
            .zip(corr.measurements())
            .map(|(p, m)| vote(p, m.cos_sign))
            .sum(),
        SignFixRule::FirstPoint => vote(&corr.world_points()[0], corr.measurements()[0].cos_sign),
    };
    if tally == 0 {
        return Err(EstimatorError::SignVoteTie);
    }
    if tally < 0 {
        *r = -*r;
    }
    Ok(())
}

/// Recovers the rotation from azimuth tangents and the estimated translation.
///
/// `sigma_theta_sq` scales the bias-correction matrix; passing zero disables
/// the correction (ablation path).
pub fn estimate_rotation(
    corr: &CorrespondenceSet,
    t_hat: &Vector3<f64>,
    sigma_theta_sq: f64,
    sign_fix: SignFixRule,
) -> Result<RotationEstimate, EstimatorError> {
    if corr.len() < 6 {
        return Err(EstimatorError::TooFewPoints {
            needed: 6,
            got: corr.len(),
        });
    }
    let GramMatrices { q, s } = build_gram(corr, t_hat);
    let q_be = q - sigma_theta_sq * s;

    let eig = q_be.symmetric_eigen();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lam0 = eig.eigenvalues[order[0]];
    let lam1 = eig.eigenvalues[order[1]];
    if (lam1 - lam0).abs() < EIGENGAP_RATIO * q.trace() {
        return Err(EstimatorError::EigengapDegenerate);
    }
    let v: Vector6<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let mut r_hat = 2f64.sqrt() * v;
    fix_sign(corr, t_hat, &mut r_hat, sign_fix)?;

    let r1 = Vector3::new(r_hat[0], r_hat[1], r_hat[2]);
    let r2 = Vector3::new(r_hat[3], r_hat[4], r_hat[5]);
    let r3 = r1.cross(&r2);
    // r_i are rows of R^T, hence columns of R.
    let raw = Matrix3::from_columns(&[r1, r2, r3]);
    let r_be = project_to_so3(&raw)?;

    Ok(RotationEstimate {
        r_hat,
        r_be,
        sigma_theta_sq_hat: sigma_theta_sq,
        smallest_eigenvalue: lam0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_error, so3_exp, Pose, RotationVector};
    use crate::sonar::{project_ideal, FovSpec, SphericalCoords};
    use crate::stream::substream;
    use rand::Rng;

    fn scene(
        n: usize,
        pose: &Pose,
        seed: u64,
    ) -> (Vec<Vector3<f64>>, Vec<crate::sonar::SonarMeasurement>) {
        let mut rng = substream(seed, &[0]);
        let fov = FovSpec::default_sonar();
        let mut points = Vec::with_capacity(n);
        let mut meas = Vec::with_capacity(n);
        while points.len() < n {
            let s = SphericalCoords {
                distance: 0.5 + rng.gen::<f64>() * (fov.max_distance - 0.5),
                azimuth: (rng.gen::<f64>() * 2.0 - 1.0) * fov.azimuth_halfwidth,
                elevation: (rng.gen::<f64>() * 2.0 - 1.0) * fov.elevation_halfwidth,
            };
            let w = pose.transform_point(&crate::sonar::cartesian_of(&s));
            let (m, _) = project_ideal(pose, &w).unwrap();
            points.push(w);
            meas.push(m);
        }
        (points, meas)
    }

    #[test]
    fn noise_free_identity_rotation() {
        let pose = Pose::identity();
        let (points, meas) = scene(20, &pose, 3);
        let corr = CorrespondenceSet::new(points, meas).unwrap();
        let est = estimate_rotation(
            &corr,
            &pose.translation,
            0.0,
            SignFixRule::MajorityVote,
        )
        .unwrap();
        assert!(geodesic_error(&est.r_be, &pose.rotation).unwrap() < 1e-8);
        assert!((est.r_hat.norm_squared() - 2.0).abs() < 1e-9);
    }

    // Rank-5 null-space oracle: with noise-free data the stacked true rows
    // annihilate every constraint row, and the recovered vector matches.
    #[test]
    fn noise_free_random_rotation_matches_null_space() {
        let rot = so3_exp(&RotationVector(Vector3::new(
            3f64.to_radians(),
            5f64.to_radians(),
            25f64.to_radians(),
        )));
        let pose = Pose::new(rot, Vector3::new(0.4, -0.3, 0.2));
        let (points, meas) = scene(30, &pose, 7);
        let corr = CorrespondenceSet::new(points.clone(), meas.clone()).unwrap();

        let rt = pose.rotation.transpose();
        let r_true = Vector6::new(
            rt.matrix()[(0, 0)],
            rt.matrix()[(0, 1)],
            rt.matrix()[(0, 2)],
            rt.matrix()[(1, 0)],
            rt.matrix()[(1, 1)],
            rt.matrix()[(1, 2)],
        );
        for (p, m) in points.iter().zip(&meas) {
            let u = p - pose.translation;
            let residual = m.azimuth_tangent * r_true.fixed_rows::<3>(0).dot(&u)
                - r_true.fixed_rows::<3>(3).dot(&u);
            assert!(residual.abs() < 1e-10);
        }

        let est = estimate_rotation(
            &corr,
            &pose.translation,
            0.0,
            SignFixRule::MajorityVote,
        )
        .unwrap();
        assert!(geodesic_error(&est.r_be, &pose.rotation).unwrap() < 1e-8);
        assert!((est.r_hat - r_true).norm() < 1e-7);
    }

    #[test]
    fn noise_free_sigma_theta_collapses_to_zero() {
        let pose = Pose::new(
            so3_exp(&RotationVector(Vector3::new(0.05, -0.02, 0.3))),
            Vector3::new(0.5, 0.1, -0.2),
        );
        let (points, meas) = scene(50, &pose, 11);
        let corr = CorrespondenceSet::new(points, meas).unwrap();
        let sigma_sq = estimate_sigma_theta(&corr, &pose.translation).unwrap();
        assert!(sigma_sq <= 1e-10, "sigma_sq = {sigma_sq}");
    }

    #[test]
    fn first_point_rule_matches_majority_on_clean_data() {
        let pose = Pose::new(
            so3_exp(&RotationVector(Vector3::new(0.0, 0.0, 0.4))),
            Vector3::new(0.2, 0.0, 0.0),
        );
        let (points, meas) = scene(12, &pose, 19);
        let corr = CorrespondenceSet::new(points, meas).unwrap();
        let a = estimate_rotation(&corr, &pose.translation, 0.0, SignFixRule::MajorityVote)
            .unwrap();
        let b = estimate_rotation(&corr, &pose.translation, 0.0, SignFixRule::FirstPoint)
            .unwrap();
        assert!((a.r_hat - b.r_hat).norm() < 1e-12);
    }

    #[test]
    fn too_few_points_rejected() {
        let pose = Pose::identity();
        let (points, meas) = scene(5, &pose, 23);
        let corr = CorrespondenceSet::new(points, meas).unwrap();
        assert!(matches!(
            estimate_sigma_theta(&corr, &pose.translation),
            Err(EstimatorError::TooFewPoints { needed: 6, got: 5 })
        ));
    }
}
