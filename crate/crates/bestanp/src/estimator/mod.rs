//! Bi-step closed-form sonar pose estimation.
//!
//! The pipeline decouples the six-degree pose: distance measurements alone
//! determine the translation (range-based localization with a bias-eliminated
//! linear solve that also yields the distance noise variance), and azimuth
//! tangents together with the estimated translation determine the rotation
//! (eigendecomposition of a bias-corrected Gram matrix, sign fix, cross
//! product completion, SO(3) projection). A single Gauss-Newton step on the
//! whitened maximum-likelihood cost refines the result.

mod crlb;
mod refine;
mod rotation;
mod translation;

pub use crlb::{compute_crlb, CrlbMatrix};
pub use refine::{gn_refine, ml_cost, GnWorkspace};
pub use rotation::{estimate_rotation, estimate_sigma_theta, RotationEstimate};
pub use translation::{estimate_translation, TranslationEstimate};

pub(crate) use translation::homogeneous_rank_ratio;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{GeometryError, Pose};
use crate::sonar::SonarMeasurement;

/// Variance floor applied before any whitening division.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("world points and measurements have different lengths ({points} vs {measurements})")]
    MismatchedLengths { points: usize, measurements: usize },
    #[error("world points are (near) coplanar: homogeneous condition {condition:.3e}")]
    CoplanarPoints { condition: f64 },
    #[error("azimuth Gram matrix is degenerate: {reason}")]
    DegenerateQ { reason: String },
    #[error("two smallest eigenvalues of the corrected Gram matrix are numerically equal")]
    EigengapDegenerate,
    #[error("cosine sign vote split exactly; rotation sign is ambiguous")]
    SignVoteTie,
    #[error("normal matrix is singular or too ill-conditioned (condition {condition:.3e})")]
    SingularNormalMatrix { condition: f64 },
    #[error("azimuth denominator vanishes for point {index}")]
    AzimuthDenominatorVanishes { index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl EstimatorError {
    /// Pipeline stage the error belongs to, for diagnostics.
    pub fn stage(&self) -> &'static str {
        match self {
            Self::TooFewPoints { .. }
            | Self::MismatchedLengths { .. }
            | Self::CoplanarPoints { .. } => "translation",
            Self::DegenerateQ { .. } | Self::EigengapDegenerate | Self::SignVoteTie => "rotation",
            Self::SingularNormalMatrix { .. } | Self::AzimuthDenominatorVanishes { .. } => {
                "gauss-newton"
            }
            Self::Geometry(_) => "geometry",
        }
    }
}

/// Paired world points and sonar measurements, the estimator input.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    world_points: Vec<Vector3<f64>>,
    measurements: Vec<SonarMeasurement>,
}

impl CorrespondenceSet {
    pub fn new(
        world_points: Vec<Vector3<f64>>,
        measurements: Vec<SonarMeasurement>,
    ) -> Result<Self, EstimatorError> {
        if world_points.len() != measurements.len() {
            return Err(EstimatorError::MismatchedLengths {
                points: world_points.len(),
                measurements: measurements.len(),
            });
        }
        Ok(Self {
            world_points,
            measurements,
        })
    }

    pub fn len(&self) -> usize {
        self.world_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.world_points.is_empty()
    }

    pub fn world_points(&self) -> &[Vector3<f64>] {
        &self.world_points
    }

    pub fn measurements(&self) -> &[SonarMeasurement] {
        &self.measurements
    }
}

/// How the sign of the rotation eigenvector is resolved.
///
/// The default votes over all points; `FirstPoint` reproduces the
/// single-measurement rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignFixRule {
    #[default]
    MajorityVote,
    FirstPoint,
}

/// Tunable pipeline switches. Defaults match the published algorithm: one
/// GN iteration, bias correction on, majority-vote sign fix.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorConfig {
    pub gn_iterations: usize,
    pub sign_fix: SignFixRule,
    pub bias_correction: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            gn_iterations: 1,
            sign_fix: SignFixRule::MajorityVote,
            bias_correction: true,
        }
    }
}

/// Full pipeline output with per-stage estimates and diagnostics.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub t_be: TranslationEstimate,
    pub r_be: RotationEstimate,
    pub pose_gn: Pose,
    pub ml_cost_initial: f64,
    pub ml_cost_final: f64,
    pub gn_iterations: usize,
    /// Whether the accepted GN step decreased the ML cost. Pure GN is always
    /// applied; this flag lets a harness spot pathological trials.
    pub cost_decreased: bool,
}

impl EstimateReport {
    /// Estimated distance noise standard deviation, floored for whitening.
    pub fn sigma_d(&self) -> f64 {
        self.t_be.sigma_d_sq_hat.max(VARIANCE_FLOOR).sqrt()
    }

    /// Estimated azimuth-tangent noise standard deviation, floored.
    pub fn sigma_theta(&self) -> f64 {
        self.r_be.sigma_theta_sq_hat.max(VARIANCE_FLOOR).sqrt()
    }
}

/// Runs the full pipeline with default configuration.
pub fn bestanp(corr: &CorrespondenceSet) -> Result<EstimateReport, EstimatorError> {
    bestanp_with(corr, &EstimatorConfig::default())
}

/// Runs the full pipeline: translation, noise variances, bias-corrected
/// rotation, and GN refinement.
pub fn bestanp_with(
    corr: &CorrespondenceSet,
    config: &EstimatorConfig,
) -> Result<EstimateReport, EstimatorError> {
    if corr.len() < 6 {
        return Err(EstimatorError::TooFewPoints {
            needed: 6,
            got: corr.len(),
        });
    }

    let t_be = estimate_translation(corr)?;
    let sigma_theta_sq = estimate_sigma_theta(corr, &t_be.t_hat)?;
    let correction = if config.bias_correction {
        sigma_theta_sq
    } else {
        0.0
    };
    let r_be = estimate_rotation(corr, &t_be.t_hat, correction, config.sign_fix)
        .map(|mut r| {
            r.sigma_theta_sq_hat = sigma_theta_sq;
            r
        })?;

    let pose0 = Pose::new(r_be.r_be, t_be.t_hat);
    let sigma_d = t_be.sigma_d_sq_hat.max(VARIANCE_FLOOR).sqrt();
    let sigma_theta = sigma_theta_sq.max(VARIANCE_FLOOR).sqrt();

    let ml_cost_initial = ml_cost(corr, &pose0, sigma_d, sigma_theta)?;
    let (pose_gn, _ws) = gn_refine(corr, &pose0, sigma_d, sigma_theta, config.gn_iterations)?;
    let ml_cost_final = ml_cost(corr, &pose_gn, sigma_d, sigma_theta)?;

    Ok(EstimateReport {
        t_be,
        r_be,
        pose_gn,
        ml_cost_initial,
        ml_cost_final,
        gn_iterations: config.gn_iterations,
        cost_decreased: ml_cost_final <= ml_cost_initial + 1e-12,
    })
}
