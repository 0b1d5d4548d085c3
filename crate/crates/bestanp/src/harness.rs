//! Monte Carlo experiment engine: noise, point-count, FOV, noise-mechanism
//! and GN-iteration sweeps plus timing runs, with per-trial random substreams
//! so results are reproducible and order-independent under parallelism.

use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimator::{
    bestanp_with, compute_crlb, CorrespondenceSet, EstimatorConfig,
};
use crate::geometry::{geodesic_error, so3_exp, GeometryError, Pose, RotationVector};
use crate::sonar::{
    apply_noise, cartesian_of, project_ideal, FovSpec, NoiseMechanism, NoiseModel,
    SonarMeasurement, SphericalCoords,
};
use crate::stream::substream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("scene generation stayed coplanar-degenerate after 100 attempts")]
    DegenerateScene,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which experiment parameter the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Joint noise level: `sigma_d = sigma_theta = value`.
    Noise,
    /// Correspondence count `n = value`.
    PointCount,
    /// Aperture scale: azimuth half-width `3*value` degrees, elevation
    /// half-width `value` degrees.
    Fov,
    /// Joint noise level, with the mechanism taken from `base_noise`; run the
    /// sweep once per mechanism to compare them.
    NoiseMechanism,
    /// Gauss-Newton iteration count `value`.
    GnIterations,
    /// Correspondence count, when only `mean_runtime` is of interest.
    Timing,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sweep_kind: SweepKind,
    pub sweep_values: Vec<f64>,
    pub trials: usize,
    pub base_noise: NoiseModel,
    pub base_n: usize,
    pub fov: FovSpec,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials < 1 {
            return Err(HarnessError::BadConfig("trials must be >= 1".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(HarnessError::BadConfig("sweep_values is empty".into()));
        }
        if self.sweep_values.windows(2).any(|w| w[1] < w[0]) {
            return Err(HarnessError::BadConfig(
                "sweep_values must be sorted ascending".into(),
            ));
        }
        Ok(())
    }
}

/// One aggregated sweep row. `rmse_r` and `crlb_r` are in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub rmse_t: f64,
    pub rmse_r: f64,
    pub crlb_t: f64,
    pub crlb_r: f64,
    pub mean_runtime: f64,
    pub failure_count: usize,
}

/// Samples `n` world points uniformly in `(d, theta, phi)` over the FOV box
/// in the sonar frame of `pose`, resampling coplanar-degenerate batches.
pub fn generate_scene<R: Rng>(
    n: usize,
    fov: &FovSpec,
    pose: &Pose,
    stream: &mut R,
) -> Result<Vec<Vector3<f64>>, HarnessError> {
    assert!(n >= 1, "generate_scene needs n >= 1");
    for _ in 0..100 {
        let points: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                let s = SphericalCoords {
                    distance: 0.5 + stream.gen::<f64>() * (fov.max_distance - 0.5),
                    azimuth: (stream.gen::<f64>() * 2.0 - 1.0) * fov.azimuth_halfwidth,
                    elevation: (stream.gen::<f64>() * 2.0 - 1.0) * fov.elevation_halfwidth,
                };
                pose.transform_point(&cartesian_of(&s))
            })
            .collect();
        if n < 4 || crate::estimator::homogeneous_rank_ratio(&points) > 1e-6 {
            return Ok(points);
        }
    }
    Err(HarnessError::DegenerateScene)
}

/// Root-mean-square pose errors over a trial batch: translation in meters,
/// rotation as the RMS geodesic angle in radians.
pub fn rmse(estimates: &[Pose], truth: &Pose) -> Result<(f64, f64), GeometryError> {
    assert!(!estimates.is_empty(), "rmse needs at least one estimate");
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    for est in estimates {
        sum_t += (est.translation - truth.translation).norm_squared();
        let ang = geodesic_error(&truth.rotation, &est.rotation)?;
        sum_r += ang * ang;
    }
    let t = estimates.len() as f64;
    Ok(((sum_t / t).sqrt(), (sum_r / t).sqrt()))
}

/// Draws a random pose: rotation from a uniform axis and a uniform angle in
/// `[0, pi/4]`, translation uniform in the `[-2, 2]` meter box.
pub fn sample_pose<R: Rng>(stream: &mut R) -> Pose {
    let axis = loop {
        let v = Vector3::new(
            stream.gen::<f64>() * 2.0 - 1.0,
            stream.gen::<f64>() * 2.0 - 1.0,
            stream.gen::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = stream.gen::<f64>() * std::f64::consts::FRAC_PI_4;
    let t = Vector3::new(
        stream.gen::<f64>() * 4.0 - 2.0,
        stream.gen::<f64>() * 4.0 - 2.0,
        stream.gen::<f64>() * 4.0 - 2.0,
    );
    Pose::new(so3_exp(&RotationVector(axis * angle)), t)
}

struct TrialSettings {
    n: usize,
    noise: NoiseModel,
    fov: FovSpec,
    estimator: EstimatorConfig,
}

fn settings_for(cfg: &ExperimentConfig, value: f64) -> TrialSettings {
    let mut s = TrialSettings {
        n: cfg.base_n,
        noise: cfg.base_noise.clone(),
        fov: cfg.fov.clone(),
        estimator: EstimatorConfig::default(),
    };
    match cfg.sweep_kind {
        SweepKind::Noise | SweepKind::NoiseMechanism => {
            s.noise.sigma_d = value;
            s.noise.sigma_theta = value;
        }
        SweepKind::PointCount | SweepKind::Timing => {
            s.n = value.round().max(1.0) as usize;
        }
        SweepKind::Fov => {
            s.fov.azimuth_halfwidth = (3.0 * value).to_radians();
            s.fov.elevation_halfwidth = value.to_radians();
        }
        SweepKind::GnIterations => {
            s.estimator.gn_iterations = value.round().max(1.0) as usize;
        }
    }
    s
}

struct TrialOutcome {
    err_t_sq: f64,
    err_r_sq: f64,
    crlb_t: f64,
    crlb_r: f64,
    runtime: f64,
}

fn run_trial(
    cfg: &ExperimentConfig,
    settings: &TrialSettings,
    sweep_index: usize,
    trial: usize,
) -> Option<TrialOutcome> {
    let mut stream = substream(cfg.seed, &[sweep_index as u64, trial as u64]);
    let pose = sample_pose(&mut stream);
    let points = generate_scene(settings.n, &settings.fov, &pose, &mut stream).ok()?;
    let mut meas: Vec<SonarMeasurement> = Vec::with_capacity(points.len());
    for p in &points {
        let (ideal, _) = project_ideal(&pose, p).ok()?;
        meas.push(apply_noise(&ideal, &settings.noise, &mut stream));
    }
    let corr = CorrespondenceSet::new(points.clone(), meas).ok()?;
    let start = Instant::now();
    let report = bestanp_with(&corr, &settings.estimator).ok()?;
    let runtime = start.elapsed().as_secs_f64();
    let err_t = (report.pose_gn.translation - pose.translation).norm();
    let err_r = geodesic_error(&pose.rotation, &report.pose_gn.rotation).ok()?;
    let crlb = compute_crlb(
        &points,
        &pose,
        settings.noise.sigma_d,
        settings.noise.sigma_theta,
    )
    .ok()?;
    Some(TrialOutcome {
        err_t_sq: err_t * err_t,
        err_r_sq: err_r * err_r,
        crlb_t: crlb.root_trace_translation(),
        crlb_r: crlb.root_trace_rotation(),
        runtime,
    })
}

/// Runs every sweep value for `cfg.trials` independent trials. Trials hitting
/// estimator errors are excluded from the averages and counted as failures.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, HarnessError> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.sweep_values.len());
    for (si, &value) in cfg.sweep_values.iter().enumerate() {
        let settings = settings_for(cfg, value);
        let outcomes: Vec<Option<TrialOutcome>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| run_trial(cfg, &settings, si, trial))
            .collect();
        let failures = outcomes.iter().filter(|o| o.is_none()).count();
        let ok: Vec<&TrialOutcome> = outcomes.iter().flatten().collect();
        let row = if ok.is_empty() {
            ResultRow {
                sweep_value: value,
                rmse_t: f64::NAN,
                rmse_r: f64::NAN,
                crlb_t: f64::NAN,
                crlb_r: f64::NAN,
                mean_runtime: f64::NAN,
                failure_count: failures,
            }
        } else {
            let m = ok.len() as f64;
            ResultRow {
                sweep_value: value,
                rmse_t: (ok.iter().map(|o| o.err_t_sq).sum::<f64>() / m).sqrt(),
                rmse_r: (ok.iter().map(|o| o.err_r_sq).sum::<f64>() / m).sqrt(),
                crlb_t: ok.iter().map(|o| o.crlb_t).sum::<f64>() / m,
                crlb_r: ok.iter().map(|o| o.crlb_r).sum::<f64>() / m,
                mean_runtime: ok.iter().map(|o| o.runtime).sum::<f64>() / m,
                failure_count: failures,
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Mean single-estimate wall-clock time at each point count, excluding data
/// generation, as median-of-means over the repetitions.
pub fn run_timing(n_values: &[usize], repetitions: usize) -> Vec<(usize, f64)> {
    let reps = repetitions.max(100);
    let chunks = 10usize;
    let per_chunk = reps.div_ceil(chunks);
    n_values
        .iter()
        .map(|&n| {
            let mut stream = substream(0xBEE5, &[n as u64]);
            let pose = sample_pose(&mut stream);
            let fov = FovSpec::default_sonar();
            let points = generate_scene(n, &fov, &pose, &mut stream).expect("scene");
            let noise = NoiseModel {
                sigma_d: 1e-3,
                sigma_theta: 1e-3,
                mechanism: NoiseMechanism::OnTangent,
                seed: 1,
            };
            let meas: Vec<SonarMeasurement> = points
                .iter()
                .map(|p| {
                    let (ideal, _) = project_ideal(&pose, p).unwrap();
                    apply_noise(&ideal, &noise, &mut stream)
                })
                .collect();
            let corr = CorrespondenceSet::new(points, meas).unwrap();
            let config = EstimatorConfig::default();
            // Warm-up pass before the measured repetitions.
            let _ = bestanp_with(&corr, &config);
            let mut chunk_means: Vec<f64> = (0..chunks)
                .map(|_| {
                    let start = Instant::now();
                    for _ in 0..per_chunk {
                        let _ = bestanp_with(&corr, &config);
                    }
                    start.elapsed().as_secs_f64() / per_chunk as f64
                })
                .collect();
            chunk_means.sort_by(f64::total_cmp);
            (n, chunk_means[chunks / 2])
        })
        .collect()
}
