//! Heavier triangulation checks against independent oracles: a brute-force
//! four-residual nonlinear least-squares reference, the baseline-growth
//! error trend, and the reprojection gate's inlier/outlier separation.

use bestanp::geometry::{so3_exp, Pose, RotationVector};
use bestanp::sonar::{in_fov, to_sonar_frame, FovSpec, SonarMeasurement};
use bestanp::stream::substream;
use bestanp::triangulation::{gate_point, triangulate_two_view, TwoViewObservation};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn yaw_pose(yaw: f64, translation: Vector3<f64>) -> Pose {
    Pose::new(so3_exp(&RotationVector(Vector3::new(0.0, 0.0, yaw))), translation)
}

fn noisy_measurement(
    pose: &Pose,
    point: &Vector3<f64>,
    sigma: f64,
    rng: &mut impl Rng,
) -> SonarMeasurement {
    let s = to_sonar_frame(pose, point);
    let normal = Normal::new(0.0, sigma).unwrap();
    SonarMeasurement {
        distance: s.norm() + normal.sample(rng),
        azimuth_tangent: s.y / s.x + normal.sample(rng),
        cos_sign: 1.0,
    }
}

/// Draws a point inside both view frusta.
fn common_point(pa: &Pose, pb: &Pose, fov: &FovSpec, rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let d = 0.8 + rng.gen::<f64>() * (fov.max_distance - 1.0);
        let az = (rng.gen::<f64>() * 2.0 - 1.0) * fov.azimuth_halfwidth;
        let el = (rng.gen::<f64>() * 2.0 - 1.0) * fov.elevation_halfwidth;
        let s = Vector3::new(
            d * el.cos() * az.cos(),
            d * el.cos() * az.sin(),
            d * el.sin(),
        );
        let w = pa.transform_point(&s);
        if in_fov(pa, &w, fov) && in_fov(pb, &w, fov) {
            return w;
        }
    }
}

/// Sum of the four squared residuals: both distance errors plus both scaled
/// azimuth-plane errors.
fn four_residual_cost(obs: &TwoViewObservation, p: &Vector3<f64>) -> f64 {
    let mut cost = 0.0;
    for (pose, meas) in [(&obs.pose_a, &obs.meas_a), (&obs.pose_b, &obs.meas_b)] {
        let u = p - pose.translation;
        let s = to_sonar_frame(pose, p);
        let scale = (1.0 + meas.azimuth_tangent * meas.azimuth_tangent).sqrt();
        let f_d = meas.distance - u.norm();
        let f_a = (s.y - meas.azimuth_tangent * s.x) / scale;
        cost += f_d * f_d + f_a * f_a;
    }
    cost
}

/// Brute-force reference: start on view A's range/azimuth arc at many
/// elevations and run a damped least-squares descent from each, keeping the
/// lowest-cost result.
fn brute_force_optimum(obs: &TwoViewObservation) -> Vector3<f64> {
    let mut best: Option<(Vector3<f64>, f64)> = None;
    for k in 0..41 {
        let phi = -1.2 + 2.4 * k as f64 / 40.0;
        let theta = obs.meas_a.azimuth();
        let d = obs.meas_a.distance;
        let start = obs.pose_a.transform_point(&Vector3::new(
            d * phi.cos() * theta.cos(),
            d * phi.cos() * theta.sin(),
            d * phi.sin(),
        ));
        let mut p = start;
        let mut lambda = 1e-3;
        for _ in 0..200 {
            let mut jtj = nalgebra::Matrix3::zeros();
            let mut jtf = nalgebra::Vector3::zeros();
            for (pose, meas) in [(&obs.pose_a, &obs.meas_a), (&obs.pose_b, &obs.meas_b)] {
                let u = p - pose.translation;
                let range = u.norm();
                let s = to_sonar_frame(pose, &p);
                if range < 1e-9 || s.x.abs() < 1e-6 {
                    break;
                }
                let scale = (1.0 + meas.azimuth_tangent * meas.azimuth_tangent).sqrt();
                let f_d = meas.distance - range;
                let j_d = -(u / range);
                jtj += j_d * j_d.transpose();
                jtf += j_d * f_d;
                let f_a = (s.y - meas.azimuth_tangent * s.x) / scale;
                let j_a = pose.rotation.matrix()
                    * nalgebra::Vector3::new(-meas.azimuth_tangent, 1.0, 0.0)
                    / scale;
                jtj += j_a * j_a.transpose();
                jtf += j_a * f_a;
            }
            let c0 = four_residual_cost(obs, &p);
            let m = jtj + nalgebra::Matrix3::identity() * (lambda * jtj.trace().max(1e-12));
            let Some(delta) = m.cholesky().map(|ch| ch.solve(&(-jtf))) else {
                break;
            };
            let cand = p + delta;
            if four_residual_cost(obs, &cand) < c0 {
                p = cand;
                lambda = (lambda * 0.3).max(1e-12);
                if delta.norm() < 1e-13 {
                    break;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e8 {
                    break;
                }
            }
        }
        let c = four_residual_cost(obs, &p);
        if best.map_or(true, |(_, bc)| c < bc) {
            best = Some((p, c));
        }
    }
    best.unwrap().0
}

/// At paper noise, the line-constrained solver's error stays within 3x the
/// brute-force four-residual optimum's error, in median over trials.
#[test]
fn noisy_triangulation_within_three_times_brute_force() {
    let fov = FovSpec::default_sonar();
    let pa = yaw_pose(0.0, Vector3::zeros());
    let pb = yaw_pose(0.5, Vector3::new(0.3, 0.8, 0.1));
    let mut rng = substream(61, &[0]);
    let sigma = 1e-3;
    let mut errs = Vec::new();
    let mut ref_errs = Vec::new();
    for _ in 0..200 {
        let p = common_point(&pa, &pb, &fov, &mut rng);
        let obs = TwoViewObservation {
            pose_a: pa,
            pose_b: pb,
            meas_a: noisy_measurement(&pa, &p, sigma, &mut rng),
            meas_b: noisy_measurement(&pb, &p, sigma, &mut rng),
        };
        let Ok(tri) = triangulate_two_view(&obs) else {
            continue;
        };
        errs.push((tri.point - p).norm());
        ref_errs.push((brute_force_optimum(&obs) - p).norm());
    }
    assert!(errs.len() >= 180, "too many rejections: {}", errs.len());
    errs.sort_by(f64::total_cmp);
    ref_errs.sort_by(f64::total_cmp);
    let med = errs[errs.len() / 2];
    let ref_med = ref_errs[ref_errs.len() / 2];
    assert!(
        med <= 3.0 * ref_med,
        "median error {med:.2e} vs brute-force {ref_med:.2e}"
    );
}

/// Median triangulation error is non-increasing as the relative yaw grows
/// from 5 to 45 degrees at fixed noise.
#[test]
fn error_decreases_with_baseline_yaw() {
    let fov = FovSpec::default_sonar();
    let sigma = 1e-3;
    let mut medians = Vec::new();
    for (i, yaw_deg) in [5.0f64, 15.0, 25.0, 35.0, 45.0].iter().enumerate() {
        let pa = yaw_pose(0.0, Vector3::zeros());
        let pb = yaw_pose(
            yaw_deg.to_radians(),
            Vector3::new(0.2, 0.6, 0.05),
        );
        let mut rng = substream(62, &[i as u64]);
        let mut errs = Vec::new();
        for _ in 0..500 {
            let p = common_point(&pa, &pb, &fov, &mut rng);
            let obs = TwoViewObservation {
                pose_a: pa,
                pose_b: pb,
                meas_a: noisy_measurement(&pa, &p, sigma, &mut rng),
                meas_b: noisy_measurement(&pb, &p, sigma, &mut rng),
            };
            if let Ok(tri) = triangulate_two_view(&obs) {
                errs.push((tri.point - p).norm());
            }
        }
        errs.sort_by(f64::total_cmp);
        medians.push(errs[errs.len() / 2]);
    }
    for w in medians.windows(2) {
        assert!(
            w[1] <= w[0] * 1.05,
            "median errors not decreasing: {medians:?}"
        );
    }
    assert!(
        *medians.last().unwrap() < medians[0],
        "no overall improvement: {medians:?}"
    );
}

/// With the default 3-sigma reprojection gate, at least 95% of honest noisy
/// points pass and at most 5% of 10-sigma-corrupted points pass.
#[test]
fn gate_separates_inliers_from_corrupted_points() {
    let fov = FovSpec::default_sonar();
    let pa = yaw_pose(0.0, Vector3::zeros());
    let pb = yaw_pose(0.5, Vector3::new(0.3, 0.8, 0.1));
    let (sigma_d, sigma_theta) = (1e-3, 1e-3);
    let mut rng = substream(63, &[0]);
    let mut inlier_pass = 0usize;
    let mut inlier_total = 0usize;
    let mut corrupt_pass = 0usize;
    let mut corrupt_total = 0usize;
    for trial in 0..1000 {
        let p = common_point(&pa, &pb, &fov, &mut rng);
        let mut obs = TwoViewObservation {
            pose_a: pa,
            pose_b: pb,
            meas_a: noisy_measurement(&pa, &p, sigma_d, &mut rng),
            meas_b: noisy_measurement(&pb, &p, sigma_d, &mut rng),
        };
        let corrupted = trial % 2 == 1;
        if corrupted {
            // 10-sigma gross error on one view's measurements.
            let sign = if trial % 4 == 1 { 1.0 } else { -1.0 };
            obs.meas_b.distance += sign * 10.0 * sigma_d;
            obs.meas_b.azimuth_tangent += sign * 10.0 * sigma_theta;
        }
        let Ok(tri) = triangulate_two_view(&obs) else {
            if corrupted {
                corrupt_total += 1;
            }
            continue;
        };
        // Default gate from the noise model: 3x the per-axis standard
        // deviation implied by (sigma_d, sigma_theta * d).
        let d = 0.5 * (obs.meas_a.distance + obs.meas_b.distance);
        let lateral = sigma_theta * d;
        let gate = 3.0 * (sigma_d * sigma_d + lateral * lateral).sqrt();
        let passed = gate_point(&tri, gate);
        if corrupted {
            corrupt_total += 1;
            corrupt_pass += passed as usize;
        } else {
            inlier_total += 1;
            inlier_pass += passed as usize;
        }
    }
    let inlier_rate = inlier_pass as f64 / inlier_total as f64;
    let corrupt_rate = corrupt_pass as f64 / corrupt_total as f64;
    assert!(inlier_rate >= 0.95, "inlier pass rate {inlier_rate:.3}");
    assert!(corrupt_rate <= 0.05, "corrupt pass rate {corrupt_rate:.3}");
}
