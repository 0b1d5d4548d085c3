//! Subcommand implementations. Each returns `Ok(())` or a [`CliError`]
//! carrying the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::json;

use bestanp::estimator::{bestanp as run_bestanp, compute_crlb, CorrespondenceSet};
use bestanp::geometry::{geodesic_error, so3_log, Pose};
use bestanp::harness::{
    generate_scene, run_sweep, run_timing, sample_pose, ExperimentConfig, ResultRow, SweepKind,
};
use bestanp::odometry::{
    generate_scene_for_trajectory, generate_trajectory, run_odometry, OdometryConfig,
    TrajectoryShape,
};
use bestanp::sonar::{
    apply_noise, project_ideal, reprojection_error, FovSpec, ImagePoint, NoiseMechanism,
    NoiseModel,
};
use bestanp::stream::substream;

use crate::schema::{
    sha256_hex, unix_now, write_with_manifest, CorrespondenceFile, MeasurementRecord, RunManifest,
    TruthRecord, SCHEMA_VERSION,
};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn estimator(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn sweep_exhausted(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }

    pub fn tracking_lost(message: impl Into<String>) -> Self {
        Self {
            code: 5,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(format!("io error: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismName {
    #[default]
    OnTangent,
    OnAngle,
}

impl MechanismName {
    fn mechanism(self) -> NoiseMechanism {
        match self {
            Self::OnTangent => NoiseMechanism::OnTangent,
            Self::OnAngle => NoiseMechanism::OnAngle,
        }
    }
}

/// FOV in file/flag units: half-widths in degrees, distance in meters.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct FovFile {
    pub max_distance: f64,
    pub azimuth_halfwidth_deg: f64,
    pub elevation_halfwidth_deg: f64,
}

impl Default for FovFile {
    fn default() -> Self {
        Self {
            max_distance: 6.0,
            azimuth_halfwidth_deg: 30.0,
            elevation_halfwidth_deg: 10.0,
        }
    }
}

impl FovFile {
    fn spec(&self) -> FovSpec {
        FovSpec {
            max_distance: self.max_distance,
            azimuth_halfwidth: self.azimuth_halfwidth_deg.to_radians(),
            elevation_halfwidth: self.elevation_halfwidth_deg.to_radians(),
        }
    }
}

fn read_input(path: &Path) -> Result<(CorrespondenceFile, String), CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let file: CorrespondenceFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::input(format!("cannot parse {}: {e}", path.display())))?;
    file.validate().map_err(CliError::input)?;
    Ok((file, sha256_hex(&bytes)))
}

fn manifest(
    seed: Option<u64>,
    input_sha256: Option<String>,
    config: serde_json::Value,
    started: f64,
) -> RunManifest {
    RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        input_sha256,
        config,
        started_unix_s: started,
        finished_unix_s: unix_now(),
    }
}

#[derive(Serialize)]
struct TruthErrors {
    geodesic_rad: f64,
    translation_m: f64,
}

#[derive(Serialize)]
struct EstimateOutput {
    schema_version: u32,
    rotation_vector: [f64; 3],
    translation: [f64; 3],
    sigma_d_hat: f64,
    sigma_theta_hat: f64,
    ml_cost_initial: f64,
    ml_cost_final: f64,
    cost_decreased: bool,
    /// Average reprojection error against the measured image points, meters.
    are_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth_errors: Option<TruthErrors>,
}

fn average_reprojection_error(
    pose: &Pose,
    points: &[Vector3<f64>],
    file: &CorrespondenceFile,
) -> f64 {
    let mut sum_sq = 0.0;
    for (p, m) in points.iter().zip(&file.measurements) {
        let image = ImagePoint {
            x: m.d * m.theta.cos(),
            y: m.d * m.theta.sin(),
        };
        match reprojection_error(pose, p, &image) {
            Ok(e) => sum_sq += e * e,
            Err(_) => return f64::NAN,
        }
    }
    sum_sq.sqrt() / points.len() as f64
}

pub fn cmd_estimate(
    input: &Path,
    out: Option<&Path>,
    format: Option<OutputFormat>,
) -> Result<(), CliError> {
    let started = unix_now();
    let (file, input_hash) = read_input(input)?;
    let corr = CorrespondenceSet::new(file.world_points(), file.sonar_measurements())
        .map_err(|e| CliError::estimator(format!("[{}] {e}", e.stage())))?;
    let report =
        run_bestanp(&corr).map_err(|e| CliError::estimator(format!("[{}] {e}", e.stage())))?;
    let rotation_vector = so3_log(&report.pose_gn.rotation)
        .map_err(|e| CliError::estimator(format!("[geometry] {e}")))?;

    let truth_errors = match &file.truth {
        Some(truth) => {
            let pose = truth.pose();
            let geodesic = geodesic_error(&pose.rotation, &report.pose_gn.rotation)
                .map_err(|e| CliError::estimator(format!("[geometry] {e}")))?;
            Some(TruthErrors {
                geodesic_rad: geodesic,
                translation_m: (pose.translation - report.pose_gn.translation).norm(),
            })
        }
        None => None,
    };

    let output = EstimateOutput {
        schema_version: SCHEMA_VERSION,
        rotation_vector: rotation_vector.0.into(),
        translation: report.pose_gn.translation.into(),
        sigma_d_hat: report.sigma_d(),
        sigma_theta_hat: report.sigma_theta(),
        ml_cost_initial: report.ml_cost_initial,
        ml_cost_final: report.ml_cost_final,
        cost_decreased: report.cost_decreased,
        are_m: average_reprojection_error(&report.pose_gn, &corr.world_points(), &file),
        truth_errors,
    };
    let json = serde_json::to_string_pretty(&output)
        .map_err(|e| CliError::input(format!("serialization: {e}")))?;
    println!("{json}");

    if let Some(out) = out {
        let body = match format.unwrap_or(OutputFormat::Json) {
            OutputFormat::Json => json.into_bytes(),
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record([
                    "rx", "ry", "rz", "tx", "ty", "tz", "sigma_d", "sigma_theta",
                    "ml_cost_initial", "ml_cost_final",
                ])
                .and_then(|_| {
                    w.write_record(
                        output
                            .rotation_vector
                            .iter()
                            .chain(output.translation.iter())
                            .chain([
                                &output.sigma_d_hat,
                                &output.sigma_theta_hat,
                                &output.ml_cost_initial,
                                &output.ml_cost_final,
                            ])
                            .map(|v| v.to_string())
                            .collect::<Vec<_>>(),
                    )
                })
                .map_err(|e| CliError::input(format!("csv: {e}")))?;
                w.into_inner().map_err(|e| CliError::input(e.to_string()))?
            }
        };
        let m = manifest(
            None,
            Some(input_hash),
            json!({"command": "estimate", "input": input.display().to_string()}),
            started,
        );
        write_with_manifest(out, &body, &m)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    n: usize,
    sigma_d: f64,
    sigma_theta: f64,
    mechanism: MechanismName,
    fov: &FovFile,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let started = unix_now();
    if n == 0 || sigma_d < 0.0 || sigma_theta < 0.0 || fov.max_distance <= 0.5 {
        return Err(CliError::input("invalid simulate flags"));
    }
    let spec = fov.spec();
    let mut stream = substream(seed, &[0]);
    let pose = sample_pose(&mut stream);
    let points = generate_scene(n, &spec, &pose, &mut stream)
        .map_err(|e| CliError::input(e.to_string()))?;
    let noise = NoiseModel {
        sigma_d,
        sigma_theta,
        mechanism: mechanism.mechanism(),
        seed,
    };
    let mut measurements = Vec::with_capacity(n);
    for p in &points {
        let (ideal, _) =
            project_ideal(&pose, p).map_err(|e| CliError::input(e.to_string()))?;
        let noisy = apply_noise(&ideal, &noise, &mut stream);
        measurements.push(MeasurementRecord {
            d: noisy.distance,
            theta: noisy.azimuth(),
        });
    }
    let rotation_vector =
        so3_log(&pose.rotation).map_err(|e| CliError::input(e.to_string()))?;
    let file = CorrespondenceFile {
        schema_version: SCHEMA_VERSION,
        points: points.iter().map(|p| (*p).into()).collect(),
        measurements,
        truth: Some(TruthRecord {
            rotation_vector: rotation_vector.0.into(),
            translation: pose.translation.into(),
        }),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| CliError::input(format!("serialization: {e}")))?;
    match out {
        Some(out) => {
            let m = manifest(
                Some(seed),
                None,
                json!({
                    "command": "simulate", "n": n, "sigma_d": sigma_d,
                    "sigma_theta": sigma_theta, "mechanism": mechanism, "fov": fov,
                }),
                started,
            );
            write_with_manifest(out, json.as_bytes(), &m)?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
pub struct SweepConfigFile {
    pub sweep_kind: String,
    pub sweep_values: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub sigma_d: f64,
    pub sigma_theta: f64,
    #[serde(default)]
    pub mechanism: MechanismName,
    pub base_n: usize,
    #[serde(default)]
    pub fov: Option<FovFile>,
    pub seed: u64,
}

fn default_trials() -> usize {
    1000
}

fn sweep_kind(name: &str) -> Result<SweepKind, CliError> {
    match name {
        "Noise" => Ok(SweepKind::Noise),
        "PointCount" => Ok(SweepKind::PointCount),
        "Fov" => Ok(SweepKind::Fov),
        "NoiseMechanism" => Ok(SweepKind::NoiseMechanism),
        "GnIterations" => Ok(SweepKind::GnIterations),
        "Timing" => Ok(SweepKind::Timing),
        other => Err(CliError::input(format!("unknown sweep_kind {other:?}"))),
    }
}

impl SweepConfigFile {
    pub fn experiment(&self, seed_override: Option<u64>) -> Result<ExperimentConfig, CliError> {
        Ok(ExperimentConfig {
            sweep_kind: sweep_kind(&self.sweep_kind)?,
            sweep_values: self.sweep_values.clone(),
            trials: self.trials,
            base_noise: NoiseModel {
                sigma_d: self.sigma_d,
                sigma_theta: self.sigma_theta,
                mechanism: self.mechanism.mechanism(),
                seed: seed_override.unwrap_or(self.seed),
            },
            base_n: self.base_n,
            fov: self.fov.clone().unwrap_or_default().spec(),
            seed: seed_override.unwrap_or(self.seed),
        })
    }
}

pub const SWEEP_CSV_HEADER: &str =
    "sweep_value,rmse_t,rmse_r,crlb_t,crlb_r,mean_runtime_s,failures";

fn sweep_csv(rows: &[ResultRow]) -> Result<Vec<u8>, CliError> {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.sweep_value, r.rmse_t, r.rmse_r, r.crlb_t, r.crlb_r, r.mean_runtime,
            r.failure_count
        ));
    }
    Ok(out.into_bytes())
}

fn sweep_json(rows: &[ResultRow]) -> Result<Vec<u8>, CliError> {
    let rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "sweep_value": r.sweep_value,
                "rmse_t": r.rmse_t,
                "rmse_r": r.rmse_r,
                "crlb_t": r.crlb_t,
                "crlb_r": r.crlb_r,
                "mean_runtime_s": r.mean_runtime,
                "failures": r.failure_count,
            })
        })
        .collect();
    serde_json::to_vec_pretty(&json!({"schema_version": SCHEMA_VERSION, "rows": rows}))
        .map_err(|e| CliError::input(format!("serialization: {e}")))
}

pub fn cmd_sweep(
    config_path: &Path,
    seed_override: Option<u64>,
    out: Option<&Path>,
    format: Option<OutputFormat>,
) -> Result<(), CliError> {
    let started = unix_now();
    let bytes = fs::read(config_path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", config_path.display())))?;
    let cfg_file: SweepConfigFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::input(format!("cannot parse {}: {e}", config_path.display())))?;
    let cfg = cfg_file.experiment(seed_override)?;
    let rows = run_sweep(&cfg).map_err(|e| CliError::input(e.to_string()))?;

    let body = match format.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Csv => sweep_csv(&rows)?,
        OutputFormat::Json => sweep_json(&rows)?,
    };
    match out {
        Some(out) => {
            let m = manifest(
                Some(cfg.seed),
                Some(sha256_hex(&bytes)),
                serde_json::to_value(&cfg_file).unwrap_or_default(),
                started,
            );
            write_with_manifest(out, &body, &m)?;
        }
        None => print!("{}", String::from_utf8_lossy(&body)),
    }
    if let Some(row) = rows.iter().find(|r| r.failure_count == cfg.trials) {
        return Err(CliError::sweep_exhausted(format!(
            "all {} trials failed at sweep value {}",
            cfg.trials, row.sweep_value
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
pub struct OdometryConfigFile {
    /// "EightShaped" or "Circle".
    pub shape: String,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    pub sigma_d: f64,
    pub sigma_theta: f64,
    #[serde(default)]
    pub mechanism: MechanismName,
    pub seed: u64,
    #[serde(default = "default_init_frames")]
    pub init_frames: usize,
    #[serde(default = "default_init_sigma")]
    pub init_sigma_rot: f64,
    #[serde(default = "default_init_sigma")]
    pub init_sigma_trans: f64,
    #[serde(default)]
    pub gate_threshold: Option<f64>,
    #[serde(default)]
    pub fov: Option<FovFile>,
    /// Optional rigid transform applied to both trajectory and scene, for
    /// gauge checks.
    #[serde(default)]
    pub transform: Option<TruthRecord>,
}

fn default_scale() -> f64 {
    2.0
}
fn default_frames() -> usize {
    200
}
fn default_init_frames() -> usize {
    2
}
fn default_init_sigma() -> f64 {
    2e-3
}

pub fn cmd_odometry(
    config_path: &Path,
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let started = unix_now();
    let bytes = fs::read(config_path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", config_path.display())))?;
    let cfg_file: OdometryConfigFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::input(format!("cannot parse {}: {e}", config_path.display())))?;
    let seed = seed_override.unwrap_or(cfg_file.seed);

    let shape = match cfg_file.shape.as_str() {
        "EightShaped" => TrajectoryShape::EightShaped {
            scale: cfg_file.scale,
            frames: cfg_file.frames,
        },
        "Circle" => TrajectoryShape::Circle {
            radius: cfg_file.scale,
            frames: cfg_file.frames,
        },
        other => return Err(CliError::input(format!("unknown shape {other:?}"))),
    };
    let mut truth = generate_trajectory(&shape).map_err(|e| CliError::input(e.to_string()))?;
    let fov = cfg_file.fov.clone().unwrap_or_default().spec();
    let mut scene = generate_scene_for_trajectory(&truth, &fov, seed)
        .map_err(|e| CliError::input(e.to_string()))?;
    if let Some(transform) = &cfg_file.transform {
        let g = transform.pose();
        truth.poses = truth.poses.iter().map(|p| g.compose(p)).collect();
        scene = scene.iter().map(|p| g.transform_point(p)).collect();
    }

    let cfg = OdometryConfig {
        init_frames: cfg_file.init_frames,
        init_sigma_rot: cfg_file.init_sigma_rot,
        init_sigma_trans: cfg_file.init_sigma_trans,
        min_track_points: 6,
        gate_threshold: cfg_file.gate_threshold,
        fov,
        noise: NoiseModel {
            sigma_d: cfg_file.sigma_d,
            sigma_theta: cfg_file.sigma_theta,
            mechanism: cfg_file.mechanism.mechanism(),
            seed,
        },
    };
    let run = run_odometry(&scene, &truth, &cfg).map_err(|e| CliError::input(e.to_string()))?;

    let errors_json = json!({
        "schema_version": SCHEMA_VERSION,
        "ate_t_m": run.errors.ate_t,
        "ate_r_deg": run.errors.ate_r,
        "rpe_t_m": run.errors.rpe_t,
        "rpe_r_deg": run.errors.rpe_r,
        "total_frames": run.total_frames,
        "completed_frames": run.estimate.len(),
        "lost_at": run.lost_at,
        "map_points": run.map.points.len(),
    });
    let pretty = serde_json::to_string_pretty(&errors_json)
        .map_err(|e| CliError::input(format!("serialization: {e}")))?;
    println!("{pretty}");

    if let Some(out) = out {
        let m = manifest(
            Some(seed),
            Some(sha256_hex(&bytes)),
            serde_json::to_value(&cfg_file).unwrap_or_default(),
            started,
        );
        write_with_manifest(out, pretty.as_bytes(), &m)?;

        let mut frames_csv =
            String::from("frame,rx,ry,rz,tx,ty,tz,ml_cost,n_points\n");
        for f in &run.frames {
            let rv = so3_log(&f.pose.rotation)
                .map_err(|e| CliError::estimator(format!("[geometry] {e}")))?;
            frames_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                f.frame, rv.0.x, rv.0.y, rv.0.z, f.pose.translation.x,
                f.pose.translation.y, f.pose.translation.z, f.ml_cost, f.n_points
            ));
        }
        let mut frames_path = PathBuf::from(out);
        let file_name = frames_path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        frames_path.set_file_name(format!("{file_name}.frames.csv"));
        crate::schema::write_atomic(&frames_path, frames_csv.as_bytes())?;
    }

    if let Some(frame) = run.lost_at {
        if frame * 4 < run.total_frames {
            return Err(CliError::tracking_lost(format!(
                "tracking lost at frame {frame} of {}",
                run.total_frames
            )));
        }
    }
    Ok(())
}

pub fn cmd_crlb(
    input: &Path,
    sigma_d: f64,
    sigma_theta: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let started = unix_now();
    let (file, input_hash) = read_input(input)?;
    let truth = file
        .truth
        .as_ref()
        .ok_or_else(|| CliError::input("crlb requires a truth block in the input file"))?;
    let pose = truth.pose();
    let crlb = compute_crlb(&file.world_points(), &pose, sigma_d, sigma_theta)
        .map_err(|e| CliError::estimator(format!("[{}] {e}", e.stage())))?;
    let matrix: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| crlb.cov_bound[(i, j)]).collect())
        .collect();
    let output = json!({
        "schema_version": SCHEMA_VERSION,
        "cov_bound": matrix,
        "root_trace_rotation_rad": crlb.root_trace_rotation(),
        "root_trace_translation_m": crlb.root_trace_translation(),
    });
    let pretty = serde_json::to_string_pretty(&output)
        .map_err(|e| CliError::input(format!("serialization: {e}")))?;
    println!("{pretty}");
    if let Some(out) = out {
        let m = manifest(
            None,
            Some(input_hash),
            json!({"command": "crlb", "sigma_d": sigma_d, "sigma_theta": sigma_theta}),
            started,
        );
        write_with_manifest(out, pretty.as_bytes(), &m)?;
    }
    Ok(())
}

pub fn cmd_timing(
    n_values: &[usize],
    repetitions: usize,
    out: Option<&Path>,
    format: Option<OutputFormat>,
) -> Result<(), CliError> {
    let started = unix_now();
    if n_values.is_empty() {
        return Err(CliError::input("timing needs at least one n value"));
    }
    let results = run_timing(n_values, repetitions);
    let body = match format.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Csv => {
            let mut s = String::from("n,mean_seconds\n");
            for (n, mean) in &results {
                s.push_str(&format!("{n},{mean}\n"));
            }
            s.into_bytes()
        }
        OutputFormat::Json => {
            let rows: Vec<_> = results
                .iter()
                .map(|(n, mean)| json!({"n": n, "mean_seconds": mean}))
                .collect();
            serde_json::to_vec_pretty(&json!({"schema_version": SCHEMA_VERSION, "rows": rows}))
                .map_err(|e| CliError::input(format!("serialization: {e}")))?
        }
    };
    match out {
        Some(out) => {
            let m = manifest(
                None,
                None,
                json!({"command": "timing", "n_values": n_values, "repetitions": repetitions}),
                started,
            );
            write_with_manifest(out, &body, &m)?;
        }
        None => print!("{}", String::from_utf8_lossy(&body)),
    }
    Ok(())
}
