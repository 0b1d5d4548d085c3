//! Sonar-only odometry: initialization from noisy provided poses, then
//! alternating pose tracking against the map and two-view triangulation of
//! newly co-visible points, with reprojection-gated map insertion and
//! ATE/RPE evaluation.
//!
//! Data association is oracle-based: synthetic point ids stand in for the
//! manual association used with real imagery.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::estimator::{bestanp, CorrespondenceSet};
use crate::geometry::{geodesic_error, so3_exp, Pose, RotationVector};
use crate::sonar::{
    apply_noise, cartesian_of, in_fov, project_ideal, to_sonar_frame, FovSpec, NoiseModel,
    SonarMeasurement,
    SphericalCoords,
};
use crate::stream::substream;
use crate::triangulation::{gate_point, triangulate_two_view, TwoViewObservation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdometryError {
    #[error("trajectories have different lengths ({truth} vs {estimate})")]
    LengthMismatch { truth: usize, estimate: usize },
    #[error("invalid trajectory parameters: {0}")]
    BadParams(String),
    #[error("fewer than {needed} gated map points visible at frame {frame}")]
    TrackingLost { frame: usize, needed: usize },
    #[error("scene density tuning failed to reach the target in-view count")]
    DegenerateScene,
}

/// Time-stamped pose sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Self, OdometryError> {
        if poses.len() != timestamps.len() {
            return Err(OdometryError::LengthMismatch {
                truth: poses.len(),
                estimate: timestamps.len(),
            });
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OdometryError::BadParams(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { poses, timestamps })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// One reconstructed landmark.
#[derive(Debug, Clone)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub observation_count: usize,
    pub last_reprojection_residual: f64,
    /// Consecutive tracked frames in which this point exceeded the gate;
    /// persistent offenders are dropped from the map.
    pub consecutive_misses: usize,
}

/// Landmark store keyed by synthetic point id.
#[derive(Debug, Clone, Default)]
pub struct MapStore {
    pub points: HashMap<usize, MapPoint>,
}

/// ATE/RPE summary; translations in meters, rotations in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryErrors {
    pub ate_t: f64,
    pub ate_r: f64,
    pub rpe_t: f64,
    pub rpe_r: f64,
}

#[derive(Debug, Clone)]
pub struct OdometryConfig {
    /// Number of leading frames whose (noisy) poses are provided.
    pub init_frames: usize,
    pub init_sigma_rot: f64,
    pub init_sigma_trans: f64,
    pub min_track_points: usize,
    /// Reprojection gate; `None` derives a per-point 3-sigma threshold from
    /// the noise model.
    pub gate_threshold: Option<f64>,
    pub fov: FovSpec,
    pub noise: NoiseModel,
}

impl OdometryConfig {
    pub fn simulation_default(noise: NoiseModel) -> Self {
        Self {
            init_frames: 2,
            init_sigma_rot: 2e-3,
            init_sigma_trans: 2e-3,
            min_track_points: 6,
            gate_threshold: None,
            fov: FovSpec::default_sonar(),
            noise,
        }
    }

    fn gate_for(&self, distance: f64) -> f64 {
        match self.gate_threshold {
            Some(t) => t,
            None => {
                let lateral = self.noise.sigma_theta * distance;
                // Floored so the zero-noise gate still accepts round-off
                // sized residuals.
                (3.0 * (self.noise.sigma_d.powi(2) + lateral * lateral).sqrt()).max(1e-9)
            }
        }
    }
}

/// Per-frame diagnostics of an odometry run.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame: usize,
    pub pose: Pose,
    pub ml_cost: f64,
    pub n_points: usize,
}

/// Complete output of [`run_odometry`].
#[derive(Debug, Clone)]
pub struct OdometryRun {
    pub estimate: Trajectory,
    pub map: MapStore,
    pub errors: TrajectoryErrors,
    pub frames: Vec<FrameRecord>,
    pub total_frames: usize,
    /// Frame index at which tracking was lost, if the run did not complete.
    pub lost_at: Option<usize>,
}

/// Reference trajectory shapes.
#[derive(Debug, Clone)]
pub enum TrajectoryShape {
    /// Lissajous figure `scale * (sin t, sin t cos t)` over one period.
    EightShaped { scale: f64, frames: usize },
    /// Constant-radius arc over one revolution.
    Circle { radius: f64, frames: usize },
    /// Externally supplied pose list.
    FromFile {
        poses: Vec<Pose>,
        timestamps: Vec<f64>,
    },
}

fn heading_pose(position: Vector3<f64>, forward: Vector3<f64>) -> Result<Pose, OdometryError> {
    let speed = forward.norm();
    if speed < 1e-12 {
        return Err(OdometryError::BadParams("zero velocity on trajectory".into()));
    }
    let x = forward / speed;
    let up = Vector3::z();
    let y_raw = up.cross(&x);
    if y_raw.norm() < 1e-9 {
        return Err(OdometryError::BadParams(
            "trajectory heading is vertical".into(),
        ));
    }
    let y = y_raw.normalize();
    let z = x.cross(&y);
    let r = nalgebra::Matrix3::from_columns(&[x, y, z]);
    Ok(Pose::new(
        crate::geometry::RotationMatrix::from_matrix_unchecked(r),
        position,
    ))
}

/// Builds a reference trajectory with the sonar x-axis along the velocity.
pub fn generate_trajectory(shape: &TrajectoryShape) -> Result<Trajectory, OdometryError> {
    const DT: f64 = 0.1;
    match shape {
        TrajectoryShape::EightShaped { scale, frames } => {
            if *scale <= 0.0 || *frames < 3 {
                return Err(OdometryError::BadParams(
                    "eight-shaped needs scale > 0 and frames >= 3".into(),
                ));
            }
            let n = *frames;
            let mut poses = Vec::with_capacity(n);
            let mut ts = Vec::with_capacity(n);
            for k in 0..n {
                let t = 2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64;
                let pos = Vector3::new(scale * t.sin(), scale * t.sin() * t.cos(), 0.0);
                let vel = Vector3::new(scale * t.cos(), scale * (2.0 * t).cos(), 0.0);
                poses.push(heading_pose(pos, vel)?);
                ts.push(k as f64 * DT);
            }
            Trajectory::new(poses, ts)
        }
        TrajectoryShape::Circle { radius, frames } => {
            if *radius <= 0.0 || *frames < 3 {
                return Err(OdometryError::BadParams(
                    "circle needs radius > 0 and frames >= 3".into(),
                ));
            }
            let n = *frames;
            let mut poses = Vec::with_capacity(n);
            let mut ts = Vec::with_capacity(n);
            for k in 0..n {
                let t = 2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64;
                let pos = Vector3::new(radius * t.cos(), radius * t.sin(), 0.0);
                let vel = Vector3::new(-t.sin(), t.cos(), 0.0);
                poses.push(heading_pose(pos, vel)?);
                ts.push(k as f64 * DT);
            }
            Trajectory::new(poses, ts)
        }
        TrajectoryShape::FromFile { poses, timestamps } => {
            Trajectory::new(poses.clone(), timestamps.clone())
        }
    }
}

/// Scatters scene points inside the union of the trajectory's view frusta,
/// tuning the count until the median in-view points per frame lands in
/// `[45, 55]`.
pub fn generate_scene_for_trajectory(
    truth: &Trajectory,
    fov: &FovSpec,
    seed: u64,
) -> Result<Vec<Vector3<f64>>, OdometryError> {
    let mut count = 600usize;
    for attempt in 0..20u64 {
        let mut rng = substream(seed, &[90, attempt]);
        let points: Vec<Vector3<f64>> = (0..count)
            .map(|_| {
                let pose = &truth.poses[rng.gen_range(0..truth.len())];
                let s = SphericalCoords {
                    distance: 0.5 + rng.gen::<f64>() * (fov.max_distance - 0.5),
                    azimuth: (rng.gen::<f64>() * 2.0 - 1.0) * fov.azimuth_halfwidth,
                    elevation: (rng.gen::<f64>() * 2.0 - 1.0) * fov.elevation_halfwidth,
                };
                pose.transform_point(&cartesian_of(&s))
            })
            .collect();
        let mut counts: Vec<usize> = truth
            .poses
            .iter()
            .map(|pose| points.iter().filter(|p| in_fov(pose, p, fov)).count())
            .collect();
        counts.sort_unstable();
        let median = counts[counts.len() / 2];
        if (45..=55).contains(&median) {
            return Ok(points);
        }
        if median == 0 {
            count *= 4;
        } else {
            count = ((count as f64) * 50.0 / median as f64).round().max(8.0) as usize;
        }
    }
    Err(OdometryError::DegenerateScene)
}

fn perturb_pose<R: Rng>(pose: &Pose, sigma_rot: f64, sigma_trans: f64, rng: &mut R) -> Pose {
    let ds = Vector3::new(
        sigma_rot * rng.sample::<f64, _>(StandardNormal),
        sigma_rot * rng.sample::<f64, _>(StandardNormal),
        sigma_rot * rng.sample::<f64, _>(StandardNormal),
    );
    let dt = Vector3::new(
        sigma_trans * rng.sample::<f64, _>(StandardNormal),
        sigma_trans * rng.sample::<f64, _>(StandardNormal),
        sigma_trans * rng.sample::<f64, _>(StandardNormal),
    );
    // Body-frame perturbation keeps the pipeline equivariant under a rigid
    // transform of scene and trajectory together.
    Pose::new(
        pose.rotation * so3_exp(&RotationVector(ds)),
        pose.translation + pose.rotation.matrix() * dt,
    )
}

fn measure(
    truth_pose: &Pose,
    point: &Vector3<f64>,
    noise: &NoiseModel,
    frame: usize,
    id: usize,
) -> Option<SonarMeasurement> {
    let (ideal, _) = project_ideal(truth_pose, point).ok()?;
    let mut stream = substream(noise.seed, &[frame as u64, id as u64]);
    Some(apply_noise(&ideal, noise, &mut stream))
}

/// Predicted one-sigma elevation error, in meters, above which a
/// triangulated point's z is treated as unobservable and the point is
/// flattened toward the reference plane.
const Z_SENSITIVITY_LIMIT: f64 = 0.03;

/// Flattening substitutes an error bounded by range times the sine of the
/// elevation band; beyond this bound, in meters, the landmark hurts more
/// than it helps and is skipped.
const MAX_FLATTEN_OFFSET: f64 = 0.15;

/// Runs the alternating track-and-triangulate pipeline over the whole
/// trajectory. On tracking loss the run terminates and errors are computed
/// on the completed prefix.
pub fn run_odometry(
    scene_points: &[Vector3<f64>],
    truth: &Trajectory,
    cfg: &OdometryConfig,
) -> Result<OdometryRun, OdometryError> {
    if cfg.init_frames < 2 {
        return Err(OdometryError::BadParams("init_frames must be >= 2".into()));
    }
    if cfg.min_track_points < 6 {
        return Err(OdometryError::BadParams(
            "min_track_points must be >= 6".into(),
        ));
    }
    if truth.len() <= cfg.init_frames {
        return Err(OdometryError::BadParams(
            "trajectory shorter than initialization".into(),
        ));
    }

    let total = truth.len();
    let visible_at = |frame: usize| -> Vec<usize> {
        scene_points
            .iter()
            .enumerate()
            .filter(|(_, p)| in_fov(&truth.poses[frame], p, &cfg.fov))
            .map(|(id, _)| id)
            .collect()
    };

    // Median inter-frame motion of the reference, for the abnormal-jump rule.
    let mut motions: Vec<f64> = truth
        .poses
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).norm())
        .collect();
    motions.sort_by(f64::total_cmp);
    let median_motion = motions[motions.len() / 2];

    let mut est_poses: Vec<Pose> = Vec::with_capacity(total);
    let mut frames: Vec<FrameRecord> = Vec::with_capacity(total);
    for k in 0..cfg.init_frames {
        let mut rng = substream(cfg.noise.seed, &[u64::MAX, k as u64]);
        let pose = perturb_pose(
            &truth.poses[k],
            cfg.init_sigma_rot,
            cfg.init_sigma_trans,
            &mut rng,
        );
        est_poses.push(pose);
        frames.push(FrameRecord {
            frame: k,
            pose,
            ml_cost: 0.0,
            n_points: 0,
        });
    }

    let mut map = MapStore::default();
    let init_plane = est_poses[0];
    let triangulate_pair = |map: &mut MapStore,
                                frame_a: usize,
                                frame_b: usize,
                                pose_a: &Pose,
                                pose_b: &Pose| {
        let vis_a = visible_at(frame_a);
        for id in visible_at(frame_b) {
            if map.points.contains_key(&id) || !vis_a.contains(&id) {
                continue;
            }
            let (Some(ma), Some(mb)) = (
                measure(&truth.poses[frame_a], &scene_points[id], &cfg.noise, frame_a, id),
                measure(&truth.poses[frame_b], &scene_points[id], &cfg.noise, frame_b, id),
            ) else {
                continue;
            };
            let obs = TwoViewObservation {
                pose_a: *pose_a,
                pose_b: *pose_b,
                meas_a: ma,
                meas_b: mb,
            };
            let Ok(tri) = triangulate_two_view(&obs) else {
                continue;
            };
            // Predicted standard error of the recovered z via finite
            // differences of the whole solver against its four measurement
            // inputs. The curvature-based gain alone misses the dominant
            // term: azimuth noise displaces the azimuth-plane intersection
            // line sideways by sigma_theta * d / sin(relative yaw), and near
            // tangency the range minimization converts that into a large
            // elevation shift.
            // The perturbations are one noise sigma, not infinitesimal: near
            // tangency the z response grows like the square root of the
            // input, so an infinitesimal slope would flatter the geometry.
            let z_sensitivity = |obs: &TwoViewObservation| -> f64 {
                let z0 = tri.point.z;
                let mut var = 0.0;
                for which in 0..4 {
                    let mut worst: f64 = 0.0;
                    for sign in [1.0, -1.0] {
                        let mut pert = obs.clone();
                        match which {
                            0 => pert.meas_a.distance += sign * cfg.noise.sigma_d,
                            1 => pert.meas_b.distance += sign * cfg.noise.sigma_d,
                            2 => pert.meas_a.azimuth_tangent += sign * cfg.noise.sigma_theta,
                            _ => pert.meas_b.azimuth_tangent += sign * cfg.noise.sigma_theta,
                        }
                        match triangulate_two_view(&pert) {
                            Ok(t) => worst = worst.max((t.point.z - z0).abs()),
                            Err(_) => return f64::INFINITY,
                        }
                    }
                    var += worst * worst;
                }
                var.sqrt()
            };
            // A recovered elevation outside the sensor's elevation band is
            // geometrically impossible (the point would not have been
            // imaged); it means the noise pushed the distance minimum into
            // a spurious basin far along the line. Such points are treated
            // as elevation-unobservable rather than trusted.
            let in_band = |pose: &Pose| {
                let s = to_sonar_frame(pose, &tri.point);
                s.z.abs() <= (s.x * s.x + s.y * s.y).sqrt() * cfg.fov.elevation_halfwidth.tan()
                    + 3.0 * cfg.noise.sigma_d
            };
            let flat =
                z_sensitivity(&obs) > Z_SENSITIVITY_LIMIT || !in_band(pose_a) || !in_band(pose_b);
            let mut pos = tri.point;
            if flat {
                // When z is unobservable the solver returns the
                // zero-elevation representative of the flat set. That
                // representative preserves the measured range, which
                // inflates the horizontal radius by d(1 - cos(elevation)):
                // a small but strictly positive bias that the pose fit
                // would otherwise absorb by diving off the plane frame
                // after frame. Shrinking the ray by the mean of
                // cos(elevation) over the sensor's band makes the stored
                // radius unbiased. The z left behind is wrong by up to
                // d*sin(band), but a near-zero-elevation landmark exerts
                // almost no pull on the pose's z axis, so the points whose
                // elevation was observable keep the vertical anchored.
                let beta = cfg.fov.elevation_halfwidth.max(1e-9);
                // Flattening substitutes an error bounded by d*sin(band);
                // with a wide band that is worse than having no landmark.
                let d_far = ma.distance.max(mb.distance);
                if d_far * beta.sin() > MAX_FLATTEN_OFFSET {
                    continue;
                }
                let shrink = beta.sin() / beta;
                pos = pose_a.translation + (pos - pose_a.translation) * shrink;
                // Re-anchor the vertical offset to the zero-elevation plane
                // of the first provided pose rather than the current one.
                // The current pose carries the accumulated vertical drift,
                // and flattening into its plane feeds that drift straight
                // back into the map; the initial plane is the one vertical
                // reference the whole run shares. The offset is clamped to
                // the sensor's elevation band rather than zeroed: a point
                // cannot have been imaged from outside the band, and an
                // exactly coplanar map would degenerate the squared-range
                // translation solve. Expressed through the initial pose's
                // axes so a rigid transform of the problem moves the plane
                // along with it.
                // The vertical offset is pinned by rotating the ray, not by
                // editing z: the measured range and azimuth from the
                // inserting pose are preserved exactly (the map must stay
                // range-consistent or the estimator's variance estimates
                // inflate), while the point's height above the plane is set
                // to the clamped triangulated offset.
                let band = d_far * beta.sin();
                let n0 = init_plane.rotation.matrix().column(2).into_owned();
                let raw = n0.dot(&(tri.point - init_plane.translation));
                let target = raw.clamp(-band, band) - n0.dot(&(pose_a.translation - init_plane.translation));
                let u = pos - pose_a.translation;
                let r = u.norm();
                let u_h = u - n0 * n0.dot(&u);
                let rise = target.clamp(-0.9 * r, 0.9 * r);
                let horiz = (r * r - rise * rise).sqrt();
                if u_h.norm() > 1e-9 {
                    pos = pose_a.translation + u_h.normalize() * horiz + n0 * rise;
                }
            }
            let gate = cfg.gate_for(0.5 * (ma.distance + mb.distance));
            if gate_point(&tri, gate) {
                map.points.insert(
                    id,
                    MapPoint {
                        position: pos,
                        observation_count: 2,
                        last_reprojection_residual: tri.residual_reprojection,
                        consecutive_misses: 0,
                    },
                );
            }
        }
    };

    // Initial map from the first frame pair, then from each further pair of
    // initialization frames so the handoff starts with fresh co-visible
    // points.
    for k in 1..cfg.init_frames {
        let (pa, pb) = (est_poses[k - 1], est_poses[k]);
        triangulate_pair(&mut map, k - 1, k, &pa, &pb);
    }

    let mut lost_at = None;
    for k in cfg.init_frames..total {
        let visible = visible_at(k);
        let tracked: Vec<usize> = visible
            .iter()
            .cloned()
            .filter(|id| map.points.contains_key(id))
            .collect();
        if tracked.len() < cfg.min_track_points {
            lost_at = Some(k);
            break;
        }

        let mut world = Vec::with_capacity(tracked.len());
        let mut meas = Vec::with_capacity(tracked.len());
        let mut kept_ids = Vec::with_capacity(tracked.len());
        for &id in &tracked {
            let Some(m) = measure(&truth.poses[k], &scene_points[id], &cfg.noise, k, id) else {
                continue;
            };
            world.push(map.points[&id].position);
            meas.push(m);
            kept_ids.push(id);
            map.points.get_mut(&id).unwrap().observation_count += 1;
        }
        if world.len() < cfg.min_track_points {
            lost_at = Some(k);
            break;
        }
        // Two-pass robust fit: estimate on everything, gate residuals at
        // 3.5 robust sigmas (map points carry triangulation error well above
        // the measurement noise, so the scale is estimated from the data),
        // then re-estimate on the inliers.
        let fit = |world: Vec<Vector3<f64>>, meas: Vec<SonarMeasurement>| {
            CorrespondenceSet::new(world, meas)
                .ok()
                .and_then(|c| bestanp(&c).ok())
        };
        let Some(first) = fit(world.clone(), meas.clone()) else {
            lost_at = Some(k);
            break;
        };
        let residual = |pose: &Pose, p: &Vector3<f64>, m: &SonarMeasurement| -> (f64, f64) {
            let s = to_sonar_frame(pose, p);
            let d_hat = s.norm();
            (
                (m.distance - d_hat).abs(),
                (m.azimuth_tangent - s.y / s.x).abs() * d_hat,
            )
        };
        let res: Vec<(f64, f64)> = world
            .iter()
            .zip(&meas)
            .map(|(p, m)| residual(&first.pose_gn, p, m))
            .collect();
        let robust_scale = |vals: &mut Vec<f64>, floor: f64| -> f64 {
            vals.sort_by(f64::total_cmp);
            (1.4826 * vals[vals.len() / 2]).max(floor).max(1e-12)
        };
        let mut dvals: Vec<f64> = res.iter().map(|r| r.0).collect();
        let mut avals: Vec<f64> = res.iter().map(|r| r.1).collect();
        let sd = robust_scale(&mut dvals, cfg.noise.sigma_d);
        let sa = robust_scale(&mut avals, cfg.noise.sigma_theta);
        let keep: Vec<bool> = res
            .iter()
            .map(|&(rd, ra)| rd <= 3.5 * sd && ra <= 3.5 * sa)
            .collect();
        let mut in_world = Vec::with_capacity(world.len());
        let mut in_meas = Vec::with_capacity(meas.len());
        for i in 0..world.len() {
            if keep[i] {
                in_world.push(world[i]);
                in_meas.push(meas[i]);
            }
        }
        if in_world.len() < cfg.min_track_points {
            lost_at = Some(k);
            break;
        }
        let n_points = in_world.len();
        let report = match fit(in_world, in_meas) {
            Some(r) => r,
            None => {
                lost_at = Some(k);
                break;
            }
        };
        // Map error dominates sensor noise here, so the estimator's internal
        // variance estimates are unreliable (the distance variance often
        // clamps at zero, which makes its GN whitening divide by the floor).
        // Refine the closed-form pose with the robust residual scales
        // measured against this map instead.
        let closed_form = Pose::new(report.r_be.r_be, report.t_be.t_hat);
        let pose = crate::estimator::gn_refine(
            &CorrespondenceSet::new(
                kept_ids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| keep[*i])
                    .map(|(i, _)| world[i])
                    .collect(),
                kept_ids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| keep[*i])
                    .map(|(i, _)| meas[i])
                    .collect(),
            )
            .unwrap(),
            &closed_form,
            sd,
            sa / meas.iter().map(|m| m.distance).sum::<f64>() * meas.len() as f64,
            2,
        )
        .map(|(p, _)| p)
        .unwrap_or(closed_form);
        for (i, &id) in kept_ids.iter().enumerate() {
            let (rd, ra) = residual(&pose, &world[i], &meas[i]);
            // Pruning compares against triangulation-scale error, not raw
            // measurement noise: an honest landmark carries several times
            // the sensor sigma and must not be culled for it.
            let gate = 3.0 * cfg.gate_for(meas[i].distance);
            let mp = map.points.get_mut(&id).unwrap();
            mp.last_reprojection_residual = rd.max(ra);
            if rd.max(ra) > gate {
                mp.consecutive_misses += 1;
            } else {
                mp.consecutive_misses = 0;
            }
            // A landmark that disagrees with the fit on consecutive frames
            // carries a bad triangulation; keeping it drags later poses.
            if mp.consecutive_misses >= 2 {
                map.points.remove(&id);
            }
        }
        let jump = (pose.translation - est_poses[k - 1].translation).norm();
        if jump > 10.0 * median_motion.max(1e-9) {
            lost_at = Some(k);
            break;
        }
        est_poses.push(pose);
        frames.push(FrameRecord {
            frame: k,
            pose,
            ml_cost: report.ml_cost_final,
            n_points,
        });

        let prev = est_poses[k - 1];
        triangulate_pair(&mut map, k - 1, k, &prev, &pose);
    }

    let m = est_poses.len();
    let truth_prefix = Trajectory {
        poses: truth.poses[..m].to_vec(),
        timestamps: truth.timestamps[..m].to_vec(),
    };
    let estimate = Trajectory {
        poses: est_poses,
        timestamps: truth.timestamps[..m].to_vec(),
    };
    let (ate_t, ate_r) = compute_ate(&truth_prefix, &estimate)?;
    let (rpe_t, rpe_r) = compute_rpe(&truth_prefix, &estimate, 1)?;

    Ok(OdometryRun {
        estimate,
        map,
        errors: TrajectoryErrors {
            ate_t,
            ate_r,
            rpe_t,
            rpe_r,
        },
        frames,
        total_frames: total,
        lost_at,
    })
}

/// Absolute trajectory error: RMS translation (m) and rotation (degrees).
/// No global alignment; the trajectories share the world frame.
pub fn compute_ate(
    truth: &Trajectory,
    estimate: &Trajectory,
) -> Result<(f64, f64), OdometryError> {
    if truth.len() != estimate.len() {
        return Err(OdometryError::LengthMismatch {
            truth: truth.len(),
            estimate: estimate.len(),
        });
    }
    let n = truth.len() as f64;
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    for (a, b) in truth.poses.iter().zip(&estimate.poses) {
        sum_t += (a.translation - b.translation).norm_squared();
        let ang = geodesic_error(&a.rotation, &b.rotation)
            .map_err(|e| OdometryError::BadParams(e.to_string()))?;
        sum_r += ang * ang;
    }
    Ok(((sum_t / n).sqrt(), (sum_r / n).sqrt().to_degrees()))
}

/// Relative pose error over a frame offset `delta`: RMS translation (m) and
/// rotation (degrees) of the relative-motion discrepancy.
pub fn compute_rpe(
    truth: &Trajectory,
    estimate: &Trajectory,
    delta: usize,
) -> Result<(f64, f64), OdometryError> {
    if truth.len() != estimate.len() {
        return Err(OdometryError::LengthMismatch {
            truth: truth.len(),
            estimate: estimate.len(),
        });
    }
    if truth.len() < delta + 1 {
        return Err(OdometryError::BadParams(
            "trajectory shorter than RPE offset".into(),
        ));
    }
    let count = (truth.len() - delta) as f64;
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    for k in 0..truth.len() - delta {
        let rel_truth = truth.poses[k].inverse().compose(&truth.poses[k + delta]);
        let rel_est = estimate.poses[k]
            .inverse()
            .compose(&estimate.poses[k + delta]);
        let err = rel_truth.inverse().compose(&rel_est);
        sum_t += err.translation.norm_squared();
        let ang = geodesic_error(&crate::geometry::RotationMatrix::identity(), &err.rotation)
            .map_err(|e| OdometryError::BadParams(e.to_string()))?;
        sum_r += ang * ang;
    }
    Ok(((sum_t / count).sqrt(), (sum_r / count).sqrt().to_degrees()))
}
