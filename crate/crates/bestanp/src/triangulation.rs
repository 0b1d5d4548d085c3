//! Two-view 3D point recovery from distance and azimuth measurements under a
//! known relative pose.
//!
//! Each view's azimuth constrains the point to a plane through the sonar
//! origin and each distance constrains it to a sphere. The two azimuth planes
//! intersect in a line; the returned point lies on that line at the parameter
//! minimizing the sum of the two squared distance residuals. The scalar
//! minimization is done by a dense scan with golden-section refinement plus
//! the closed-form sphere/line intersections, which keeps noise-free cases
//! exact. The mirror ambiguity about the zero-elevation plane shows up as a
//! second cost minimum on the line and is reported through `near_tie`.

use nalgebra::{Matrix2, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::Pose;
use crate::sonar::{reprojection_error, to_sonar_frame, ImagePoint, SonarMeasurement};

/// Minimum angle between the two azimuth plane normals.
const MIN_PLANE_ANGLE: f64 = 1e-3;

/// Minimum baseline between the two sonar origins.
const MIN_BASELINE: f64 = 1e-6;

/// Relative cost gap below which the mirror solution is flagged as a near-tie.
const NEAR_TIE_RATIO: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("azimuth planes are (near) parallel: angle {angle:.3e} rad")]
    ParallelPlanes { angle: f64 },
    #[error("baseline between views is too short ({baseline:.3e} m)")]
    DegenerateBaseline { baseline: f64 },
    #[error("minimizer lies behind both sonars")]
    NoForwardSolution,
}

/// A pair of posed observations of the same 3D point.
#[derive(Debug, Clone)]
pub struct TwoViewObservation {
    pub pose_a: Pose,
    pub pose_b: Pose,
    pub meas_a: SonarMeasurement,
    pub meas_b: SonarMeasurement,
}

/// Triangulated point with its fit residuals.
#[derive(Debug, Clone)]
pub struct TriangulatedPoint {
    pub point: Vector3<f64>,
    /// RMS of the two distance residuals.
    pub residual_distance: f64,
    /// Larger of the two per-view reprojection errors.
    pub residual_reprojection: f64,
    /// Set when a distinct second minimum on the line (the elevation mirror)
    /// came within 10% of the selected cost.
    pub near_tie: bool,
    /// Error amplification along the line: the predicted shift of the
    /// minimizer per unit of distance noise, from the cost curvature at the
    /// solution. Multiplied by the measurement noise it predicts the standard
    /// error along the weakly constrained direction; it diverges in the
    /// planar-tangency geometry where the distance spheres graze the line.
    pub weak_direction_gain: f64,
}

fn azimuth_plane_normal(pose: &Pose, meas: &SonarMeasurement) -> Vector3<f64> {
    // tan(theta) x - y = 0 in the sonar frame => world normal R (e2 - tan e1),
    // flipped sign is irrelevant for the plane.
    pose.rotation.matrix() * Vector3::new(-meas.azimuth_tangent, 1.0, 0.0)
}

fn distance_cost(p: &Vector3<f64>, obs: &TwoViewObservation) -> f64 {
    let ra = obs.meas_a.distance - (p - obs.pose_a.translation).norm();
    let rb = obs.meas_b.distance - (p - obs.pose_b.translation).norm();
    ra * ra + rb * rb
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = 0.618_033_988_749_894_9;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Candidate line parameters: refined local minima of the scanned distance
/// cost plus the closed-form sphere/line intersections and perpendicular
/// feet. The sphere roots make noise-free recovery exact; the feet keep the
/// planar tangency case (sphere grazing the line) exact as well.
fn candidate_lambdas(
    obs: &TwoViewObservation,
    p0: &Vector3<f64>,
    direction: &Vector3<f64>,
) -> Vec<f64> {
    let reach = 2.0 * obs.meas_a.distance.max(obs.meas_b.distance);
    let cost = |lambda: f64| distance_cost(&(p0 + lambda * direction), obs);
    let steps = 400usize;
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let lambda = -reach + 2.0 * reach * k as f64 / steps as f64;
        samples.push((lambda, cost(lambda)));
    }
    let step = 2.0 * reach / steps as f64;
    let mut lambdas = Vec::new();
    for k in 1..steps {
        if samples[k].1 <= samples[k - 1].1 && samples[k].1 <= samples[k + 1].1 {
            lambdas.push(golden_section(
                &cost,
                samples[k].0 - step,
                samples[k].0 + step,
                1e-12,
            ));
        }
    }
    for (t, d) in [
        (obs.pose_a.translation, obs.meas_a.distance),
        (obs.pose_b.translation, obs.meas_b.distance),
    ] {
        let foot = direction.dot(&(t - p0));
        lambdas.push(foot);
        let rho_sq = (p0 + foot * direction - t).norm_squared();
        let disc = d * d - rho_sq;
        if disc > 0.0 {
            let h = disc.sqrt();
            lambdas.push(foot - h);
            lambdas.push(foot + h);
        }
    }
    lambdas
}

/// Recovers the 3D point seen by both views.
pub fn triangulate_two_view(
    obs: &TwoViewObservation,
) -> Result<TriangulatedPoint, TriangulationError> {
    let baseline = (obs.pose_a.translation - obs.pose_b.translation).norm();
    if baseline <= MIN_BASELINE {
        return Err(TriangulationError::DegenerateBaseline { baseline });
    }
    let na = azimuth_plane_normal(&obs.pose_a, &obs.meas_a).normalize();
    let nb = azimuth_plane_normal(&obs.pose_b, &obs.meas_b).normalize();
    let cross = na.cross(&nb);
    let angle = cross.norm().clamp(-1.0, 1.0).asin();
    if angle <= MIN_PLANE_ANGLE {
        return Err(TriangulationError::ParallelPlanes { angle });
    }
    let direction = cross.normalize();

    // Anchor point on the intersection line: solve the two plane equations
    // in the subspace spanned by the normals, nearest the midpoint of the
    // two sonar centers.
    let mid = 0.5 * (obs.pose_a.translation + obs.pose_b.translation);
    let da = na.dot(&(obs.pose_a.translation - mid));
    let db = nb.dot(&(obs.pose_b.translation - mid));
    // p0 = mid + alpha*na + beta*nb with na.(p0 - ta) = 0, nb.(p0 - tb) = 0.
    let dot = na.dot(&nb);
    let gram = Matrix2::new(1.0, dot, dot, 1.0);
    let rhs = Vector2::new(da, db);
    let coeffs = gram
        .try_inverse()
        .ok_or(TriangulationError::ParallelPlanes { angle })?
        * rhs;
    let p0 = mid + coeffs[0] * na + coeffs[1] * nb;

    let cost = |lambda: f64| distance_cost(&(p0 + lambda * direction), obs);
    let lambdas = candidate_lambdas(obs, &p0, &direction);
    let best_cost = lambdas
        .iter()
        .map(|&l| cost(l))
        .fold(f64::INFINITY, f64::min);

    // A point behind both sonars can fit the residuals exactly for small
    // baselines; such candidates are rejected rather than reflected.
    let forward = |p: &Vector3<f64>| {
        to_sonar_frame(&obs.pose_a, p).x > 0.0 || to_sonar_frame(&obs.pose_b, p).x > 0.0
    };
    let elevation = |p: &Vector3<f64>| {
        to_sonar_frame(&obs.pose_a, p).z.abs() + to_sonar_frame(&obs.pose_b, p).z.abs()
    };

    // The distance cost can be flat along the line near tangency, so minima
    // whose costs differ by no more than the fit residual itself are
    // statistically interchangeable. Among those, take the one closest to
    // the zero-elevation plane: the conventional representative of the flat
    // set. With clean geometry the band collapses to the plain minimum.
    let tie_band = 2.0 * best_cost + 1e-28;
    let mut selected: Option<(f64, Vector3<f64>)> = None;
    for &lambda in &lambdas {
        if cost(lambda) > tie_band {
            continue;
        }
        let p = p0 + lambda * direction;
        if !forward(&p) {
            continue;
        }
        if selected.map_or(true, |(_, sp)| elevation(&p) < elevation(&sp)) {
            selected = Some((lambda, p));
        }
    }
    let Some((lambda_star, point)) = selected else {
        return Err(TriangulationError::NoForwardSolution);
    };

    let scale = obs.meas_a.distance.max(obs.meas_b.distance);
    let near_tie = lambdas.iter().any(|&l| {
        (l - lambda_star).abs() > 1e-3 * scale
            && (cost(l) - best_cost) <= NEAR_TIE_RATIO * best_cost.max(1e-12)
    });

    // Curvature probe: half the second difference of the cost approximates
    // the Gauss-Newton information along the line; its inverse square root
    // is the minimizer shift per unit of distance noise. The window is wide
    // enough to see through the quartic flat spot of the tangency geometry.
    let w = 0.02 * scale;
    let c0 = cost(lambda_star);
    let side = (cost(lambda_star + w) - c0).min(cost(lambda_star - w) - c0);
    let curvature = (2.0 * side / (w * w)).max(0.0);
    let weak_direction_gain = if curvature > 1e-18 {
        (2.0 / curvature).sqrt()
    } else {
        f64::INFINITY
    };

    let residual_distance = (distance_cost(&point, obs) / 2.0).sqrt();
    let image_a = ImagePoint {
        x: obs.meas_a.distance * obs.meas_a.azimuth().cos(),
        y: obs.meas_a.distance * obs.meas_a.azimuth().sin(),
    };
    let image_b = ImagePoint {
        x: obs.meas_b.distance * obs.meas_b.azimuth().cos(),
        y: obs.meas_b.distance * obs.meas_b.azimuth().sin(),
    };
    let reproj_a = reprojection_error(&obs.pose_a, &point, &image_a).unwrap_or(f64::INFINITY);
    let reproj_b = reprojection_error(&obs.pose_b, &point, &image_b).unwrap_or(f64::INFINITY);

    Ok(TriangulatedPoint {
        point,
        residual_distance,
        residual_reprojection: reproj_a.max(reproj_b),
        near_tie,
        weak_direction_gain,
    })
}

/// Accepts the point iff its reprojection residual is within the threshold.
pub fn gate_point(p: &TriangulatedPoint, threshold: f64) -> bool {
    p.residual_reprojection <= threshold
}
