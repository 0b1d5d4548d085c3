//! SO(3)/SE(3) primitives shared by the rest of the crate: exponential and
//! logarithm maps, SVD projection onto SO(3), and geodesic rotation error.
//!
//! Rotations near angle π are outside the supported envelope; `so3_log`
//! reports [`GeometryError::AngleAtPi`] instead of returning a value there.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Angle threshold below which Rodrigues coefficients switch to their
/// second-order Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// Rotation angle is within 1e-9 of π; the canonical chart is ambiguous.
    #[error("rotation angle within 1e-9 of pi; logarithm is not well defined")]
    AngleAtPi,
    /// Input matrix to the SO(3) projection is (numerically) rank deficient.
    #[error("matrix is rank deficient (sigma_min = {sigma_min:.3e}); cannot project onto SO(3)")]
    RankDeficient { sigma_min: f64 },
    /// Matrix failed the orthonormality or determinant check.
    #[error("matrix is not a rotation (orthonormality defect {defect:.3e})")]
    NotARotation { defect: f64 },
}

/// A 3x3 orthonormal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Validates orthonormality (`RᵀR = I`) and `det = +1` to 1e-9 Frobenius.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let defect = (m.transpose() * m - Matrix3::identity()).norm();
        let det_defect = (m.determinant() - 1.0).abs();
        if defect > 1e-9 || det_defect > 1e-9 {
            return Err(GeometryError::NotARotation {
                defect: defect.max(det_defect),
            });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix that is known to be a valid rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for RotationMatrix {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// An axis-angle vector in the canonical chart `‖s‖ < π`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationVector(pub Vector3<f64>);

impl RotationVector {
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// Rigid transform mapping sonar-frame coordinates into the world frame:
/// `w = R s + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Applies the forward transform: sonar frame to world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt.0 * self.translation),
        }
    }

    /// `self ∘ rhs`, i.e. apply `rhs` first.
    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.0 * rhs.translation + self.translation,
        }
    }
}

/// The "hat" operator: maps a 3-vector to its skew-symmetric matrix.
pub fn hat(s: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -s.z, s.y, s.z, 0.0, -s.x, -s.y, s.x, 0.0)
}

/// Rodrigues closed form of the matrix exponential on so(3).
///
/// Total on finite inputs; below `‖s‖ = 1e-8` the sinc-like coefficients use
/// their Taylor expansions to avoid 0/0.
pub fn so3_exp(s: &RotationVector) -> RotationMatrix {
    let angle = s.angle();
    let k = hat(&s.0);
    let (a, b) = if angle < SMALL_ANGLE {
        let a2 = angle * angle;
        (1.0 - a2 / 6.0, 0.5 - a2 / 24.0)
    } else {
        (
            angle.sin() / angle,
            (1.0 - angle.cos()) / (angle * angle),
        )
    };
    RotationMatrix(Matrix3::identity() + a * k + b * (k * k))
}

/// Logarithm map back to the canonical chart.
///
/// Errors with [`GeometryError::AngleAtPi`] when the rotation angle is within
/// 1e-9 of π.
pub fn so3_log(r: &RotationMatrix) -> Result<RotationVector, GeometryError> {
    let m = r.matrix();
    let cos_angle = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos_angle.acos();
    if std::f64::consts::PI - angle < 1e-9 {
        return Err(GeometryError::AngleAtPi);
    }
    let axis_raw = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let scale = if angle < SMALL_ANGLE {
        // axis_raw = 2 sin(angle) * axis; sin(a)/a Taylor inverse
        0.5 * (1.0 + angle * angle / 6.0)
    } else {
        angle / (2.0 * angle.sin())
    };
    Ok(RotationVector(scale * axis_raw))
}

/// Frobenius-nearest rotation to an arbitrary full-rank 3x3 matrix, via SVD:
/// `U diag(1, 1, det(UVᵀ)) Vᵀ`.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<RotationMatrix, GeometryError> {
    let svd = m.svd(true, true);
    let sigma_min = svd.singular_values[2];
    if sigma_min <= 1e-12 {
        return Err(GeometryError::RankDeficient { sigma_min });
    }
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let det_sign = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det_sign)) * v_t;
    Ok(RotationMatrix(r))
}

/// Geodesic distance `‖Log(Raᵀ Rb)‖` in radians.
pub fn geodesic_error(ra: &RotationMatrix, rb: &RotationMatrix) -> Result<f64, GeometryError> {
    let rel = ra.transpose() * *rb;
    Ok(so3_log(&rel)?.angle())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_rotvec(rng: &mut StdRng, max_angle: f64) -> RotationVector {
        let axis = Vector3::new(
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        )
        .normalize();
        let angle = rng.gen::<f64>() * max_angle;
        RotationVector(axis * angle)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = so3_exp(&RotationVector(Vector3::zeros()));
        assert_abs_diff_eq!(r.matrix(), &Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn exp_quarter_turn_about_z_maps_x_to_y() {
        let r = so3_exp(&RotationVector(Vector3::new(0.0, 0.0, FRAC_PI_2)));
        let y = r * Vector3::x();
        assert_abs_diff_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn log_identity_is_zero() {
        let s = so3_log(&RotationMatrix::identity()).unwrap();
        assert_eq!(s.0, Vector3::zeros());
    }

    #[test]
    fn log_quarter_turn() {
        let r = so3_exp(&RotationVector(Vector3::new(0.0, 0.0, FRAC_PI_2)));
        let s = so3_log(&r).unwrap();
        assert_abs_diff_eq!(s.0, Vector3::new(0.0, 0.0, FRAC_PI_2), epsilon = 1e-12);
    }

    #[test]
    fn log_near_pi_errors() {
        let r = so3_exp(&RotationVector(Vector3::new(PI - 1e-12, 0.0, 0.0)));
        assert_eq!(so3_log(&r), Err(GeometryError::AngleAtPi));
    }

    // Round-trip oracle: exp then log recovers the input vector.
    #[test]
    fn exp_log_round_trip() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = random_rotvec(&mut rng, 3.0);
            let back = so3_log(&so3_exp(&s)).unwrap();
            assert_abs_diff_eq!(back.0, s.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn round_trip_fixed_small_norm() {
        let s = RotationVector(Vector3::new(0.1, -0.2, 0.2).normalize() * 0.3);
        let back = so3_log(&so3_exp(&s)).unwrap();
        assert_abs_diff_eq!(back.0, s.0, epsilon = 1e-10);
    }

    #[test]
    fn projection_is_idempotent_on_rotations() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let r = so3_exp(&random_rotvec(&mut rng, 3.0));
            let p = project_to_so3(r.matrix()).unwrap();
            assert_abs_diff_eq!(p.matrix(), r.matrix(), epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_removes_scaling() {
        let p = project_to_so3(&(2.0 * Matrix3::identity())).unwrap();
        assert_abs_diff_eq!(p.matrix(), &Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn projection_fixes_negative_determinant() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let p = project_to_so3(&m).unwrap();
        assert!((p.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_rank_deficient() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        assert!(matches!(
            project_to_so3(&m),
            Err(GeometryError::RankDeficient { .. })
        ));
    }

    // Brute-force nearest-rotation oracle: the projection of a perturbed
    // rotation must beat every random candidate in Frobenius distance.
    #[test]
    fn projection_is_frobenius_nearest() {
        let mut rng = StdRng::seed_from_u64(23);
        let r = so3_exp(&random_rotvec(&mut rng, 2.0));
        let mut e = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                e[(i, j)] = rng.gen::<f64>() - 0.5;
            }
        }
        let m = r.matrix() + 1e-3 * e.normalize();
        let p = project_to_so3(&m).unwrap();
        assert!(geodesic_error(&p, &r).unwrap() < 2e-3);
        let best = (m - p.matrix()).norm();
        for _ in 0..10_000 {
            let cand = so3_exp(&RotationVector(
                so3_log(&p).unwrap().0
                    + 1e-2
                        * Vector3::new(
                            rng.gen::<f64>() - 0.5,
                            rng.gen::<f64>() - 0.5,
                            rng.gen::<f64>() - 0.5,
                        ),
            ));
            assert!((m - cand.matrix()).norm() >= best - 1e-12);
        }
    }

    // Trace-formula oracle for the geodesic distance.
    #[test]
    fn geodesic_matches_trace_formula() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..200 {
            let ra = so3_exp(&random_rotvec(&mut rng, 3.0));
            let rb = so3_exp(&random_rotvec(&mut rng, 3.0));
            let rel = ra.transpose() * rb;
            let angle = ((rel.matrix().trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos();
            if PI - angle < 1e-6 {
                continue;
            }
            let g = geodesic_error(&ra, &rb).unwrap();
            assert_abs_diff_eq!(g, angle, epsilon = 1e-9);
            assert_abs_diff_eq!(g, geodesic_error(&rb, &ra).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn geodesic_trivial_cases() {
        let r = so3_exp(&RotationVector(Vector3::new(0.2, -0.1, 0.4)));
        assert_eq!(geodesic_error(&r, &r).unwrap(), 0.0);
        let q = so3_exp(&RotationVector(Vector3::new(0.0, 0.0, FRAC_PI_2)));
        assert_abs_diff_eq!(
            geodesic_error(&RotationMatrix::identity(), &q).unwrap(),
            FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn geodesic_triangle_inequality() {
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..200 {
            let ra = so3_exp(&random_rotvec(&mut rng, 1.0));
            let rb = so3_exp(&random_rotvec(&mut rng, 1.0));
            let rc = so3_exp(&random_rotvec(&mut rng, 1.0));
            let ab = geodesic_error(&ra, &rb).unwrap();
            let bc = geodesic_error(&rb, &rc).unwrap();
            let ac = geodesic_error(&ra, &rc).unwrap();
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn prop_exp_log_round_trip(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            angle in 1e-12f64..3.0,
        ) {
            let v = Vector3::new(x, y, z);
            prop_assume!(v.norm() > 1e-6);
            let s = RotationVector(v.normalize() * angle);
            let back = so3_log(&so3_exp(&s)).unwrap();
            prop_assert!((back.0 - s.0).norm() < 1e-9);
        }

        #[test]
        fn prop_exp_output_is_valid_rotation(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0,
        ) {
            let r = so3_exp(&RotationVector(Vector3::new(x, y, z)));
            prop_assert!(RotationMatrix::new(*r.matrix()).is_ok());
        }
    }
}
