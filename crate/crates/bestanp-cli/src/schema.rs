//! File schemas, atomic writes, and run manifests.
//!
//! All angles in files are radians, all distances meters. Every emitted JSON
//! document carries `schema_version`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bestanp::geometry::{so3_exp, Pose, RotationVector};
use bestanp::sonar::SonarMeasurement;

pub const SCHEMA_VERSION: u32 = 1;

/// Correspondence interchange file: 3D points with `(d, theta)` measurements
/// and an optional ground-truth pose. `theta` is an angle; the tangent and
/// cosine sign used internally are derived on load.
#[derive(Debug, Serialize, Deserialize)]
pub struct CorrespondenceFile {
    pub schema_version: u32,
    pub points: Vec<[f64; 3]>,
    pub measurements: Vec<MeasurementRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub d: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub rotation_vector: [f64; 3],
    pub translation: [f64; 3],
}

impl TruthRecord {
    pub fn pose(&self) -> Pose {
        Pose::new(
            so3_exp(&RotationVector(Vector3::from(self.rotation_vector))),
            Vector3::from(self.translation),
        )
    }
}

impl CorrespondenceFile {
    pub fn validate(&self) -> Result<(), String> {
        if self.points.len() != self.measurements.len() {
            return Err(format!(
                "points ({}) and measurements ({}) have different lengths",
                self.points.len(),
                self.measurements.len()
            ));
        }
        let finite = self
            .points
            .iter()
            .flatten()
            .chain(self.measurements.iter().flat_map(|m| [&m.d, &m.theta]))
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite number in correspondence file".into());
        }
        if self.measurements.iter().any(|m| m.d <= 0.0) {
            return Err("non-positive distance in correspondence file".into());
        }
        Ok(())
    }

    pub fn world_points(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| Vector3::from(*p)).collect()
    }

    pub fn sonar_measurements(&self) -> Vec<SonarMeasurement> {
        self.measurements
            .iter()
            .map(|m| SonarMeasurement::from_angle(m.d, m.theta))
            .collect()
    }
}

/// Reproducibility sidecar written next to every output file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
    pub config: serde_json::Value,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Writes via a `.tmp` sibling and renames, so readers never see a partial
/// file under the final name.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let mut tmp = PathBuf::from(path);
    let file_name = tmp
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!("{file_name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Writes `contents` to `path` and the manifest to `<path>.manifest.json`.
pub fn write_with_manifest(
    path: &Path,
    contents: &[u8],
    manifest: &RunManifest,
) -> std::io::Result<()> {
    write_atomic(path, contents)?;
    let mut mpath = PathBuf::from(path);
    let file_name = mpath
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    mpath.set_file_name(format!("{file_name}.manifest.json"));
    let body = serde_json::to_vec_pretty(manifest)?;
    write_atomic(&mpath, &body)
}
