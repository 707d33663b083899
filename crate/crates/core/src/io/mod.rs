//! On-disk formats: JSON scene and scenario schemas (versioned), PPM and
//! PLY codecs, atomic file writes, and the end-to-end pipeline.

pub mod pipeline;
pub mod ply;
pub mod ppm;

pub use pipeline::{run_pipeline, Manifest, PipelineError, RunOptions};

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{EditCommand, PoseSampleSpec};
use crate::mpm::{ContactMode, HalfSpaceCollider, MaterialKind, MaterialParams, SolverError};
use crate::render::Camera;
use crate::scene::{
    FourierShAppearance, GaussianPrimitive, ObjectCluster, PoseTrack, Scene, SceneError,
    UNIT_QUAT_TOL,
};

pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: parse error: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{context}: {source}")]
    InvalidScene {
        context: String,
        source: SceneError,
    },
    #[error("{context}: {source}")]
    InvalidScenario {
        context: String,
        source: SolverError,
    },
    #[error("scenario requests images but declares no cameras")]
    NoCameras,
    #[error(transparent)]
    Ply(#[from] ply::PlyError),
}

/// Write-temp-then-rename; a crashed run never leaves a truncated file
/// under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source: std::io::Error| IoError::Write {
        path: path.display().to_string(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(wrap)?;
    std::fs::rename(&tmp, path).map_err(wrap)
}

// ---------------------------------------------------------------------------
// Scene schema
// ---------------------------------------------------------------------------

/// One Gaussian in a scene file. Quaternions are [w, x, y, z]; `sh` holds
/// one RGB triple per spherical-harmonics basis function (1, 4, 9 or 16).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub sh: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppearanceSpec {
    pub k: usize,
    pub n_t: f64,
    /// coeffs[sh_index][channel] is a length-k cosine series.
    pub coeffs: Vec<[Vec<f64>; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub primitives: Vec<PrimitiveSpec>,
    pub pose: Vec<PoseSampleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<AppearanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    pub time_range: [f64; 2],
    #[serde(default)]
    pub background: Vec<PrimitiveSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

fn default_frame_rate() -> f64 {
    10.0
}

fn quat_from_wxyz(q: [f64; 4]) -> Result<UnitQuaternion<f64>, SceneError> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = quat.norm();
    if (norm - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(SceneError::NonUnitRotation { norm });
    }
    Ok(UnitQuaternion::new_normalize(quat))
}

fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let inner = q.quaternion();
    [inner.w, inner.i, inner.j, inner.k]
}

impl PrimitiveSpec {
    fn to_primitive(&self, context: &str) -> Result<GaussianPrimitive, IoError> {
        let wrap = |source: SceneError| IoError::InvalidScene {
            context: context.to_string(),
            source,
        };
        let primitive = GaussianPrimitive {
            mean: Vector3::from(self.mean),
            rotation: quat_from_wxyz(self.rotation).map_err(wrap)?,
            scale: Vector3::from(self.scale),
            opacity: self.opacity,
            sh: self.sh.iter().map(|c| Vector3::from(*c)).collect(),
        };
        primitive.validate().map_err(wrap)?;
        Ok(primitive)
    }

    pub fn from_primitive(p: &GaussianPrimitive) -> Self {
        Self {
            mean: p.mean.into(),
            rotation: quat_to_wxyz(&p.rotation),
            scale: p.scale.into(),
            opacity: p.opacity,
            sh: p.sh.iter().map(|c| [c.x, c.y, c.z]).collect(),
        }
    }
}

impl SceneFile {
    pub fn to_scene(&self) -> Result<Scene, IoError> {
        if self.version != SCENE_FORMAT_VERSION {
            return Err(IoError::Version {
                found: self.version,
                expected: SCENE_FORMAT_VERSION,
            });
        }
        let mut background = Vec::with_capacity(self.background.len());
        for (i, spec) in self.background.iter().enumerate() {
            background.push(spec.to_primitive(&format!("background primitive {i}"))?);
        }
        let mut objects = Vec::with_capacity(self.objects.len());
        for object in &self.objects {
            let mut primitives = Vec::with_capacity(object.primitives.len());
            for (i, spec) in object.primitives.iter().enumerate() {
                primitives
                    .push(spec.to_primitive(&format!("object '{}' primitive {i}", object.id))?);
            }
            let object_context = format!("object '{}'", object.id);
            let wrap = |source: SceneError| IoError::InvalidScene {
                context: object_context.clone(),
                source,
            };
            let samples: Result<Vec<_>, SceneError> =
                object.pose.iter().map(|s| s.to_sample()).collect();
            let pose = PoseTrack::new(samples.map_err(wrap)?).map_err(wrap)?;
            let appearance = object.appearance.as_ref().map(|a| FourierShAppearance {
                coeffs: a.coeffs.clone(),
                n_t: a.n_t,
                k: a.k,
            });
            objects.push(ObjectCluster {
                id: object.id.clone(),
                primitives,
                pose,
                appearance,
                material: object.material.clone(),
            });
        }
        let scene = Scene {
            background,
            objects,
            time_range: (self.time_range[0], self.time_range[1]),
            frame_rate: self.frame_rate,
        };
        scene.validate().map_err(|source| IoError::InvalidScene {
            context: "scene".to_string(),
            source,
        })?;
        Ok(scene)
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            version: SCENE_FORMAT_VERSION,
            frame_rate: scene.frame_rate,
            time_range: [scene.time_range.0, scene.time_range.1],
            background: scene
                .background
                .iter()
                .map(PrimitiveSpec::from_primitive)
                .collect(),
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectSpec {
                    id: o.id.clone(),
                    primitives: o
                        .primitives
                        .iter()
                        .map(PrimitiveSpec::from_primitive)
                        .collect(),
                    pose: o
                        .pose
                        .samples()
                        .iter()
                        .map(PoseSampleSpec::from_sample)
                        .collect(),
                    appearance: o.appearance.as_ref().map(|a| AppearanceSpec {
                        k: a.k,
                        n_t: a.n_t,
                        coeffs: a.coeffs.clone(),
                    }),
                    material: o.material.clone(),
                })
                .collect(),
        }
    }
}

pub fn load_scene(path: &Path) -> Result<Scene, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let file: SceneFile = serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    file.to_scene()
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), IoError> {
    let file = SceneFile::from_scene(scene);
    let json = serde_json::to_vec_pretty(&file).expect("scene serializes");
    write_atomic(path, &json)
}

// ---------------------------------------------------------------------------
// Scenario schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "default_stride")]
    pub frame_stride: usize,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub allow_unstable_dt: bool,
}

fn default_dt() -> f64 {
    2e-4
}
fn default_stride() -> usize {
    100
}
fn default_gravity() -> f64 {
    9.8
}
fn default_grid() -> usize {
    50
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            steps: 0,
            frame_stride: default_stride(),
            gravity: default_gravity(),
            grid_resolution: default_grid(),
            domain: None,
            allow_unstable_dt: false,
        }
    }
}

/// Scenario-level default material (the reference soft-vehicle settings).
pub fn default_material() -> MaterialParams {
    MaterialParams {
        young_modulus: 2e6,
        poisson_ratio: 0.4,
        density: 200.0,
        kind: MaterialKind::Jelly,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BindingSpec {
    pub id: String,
    #[serde(default)]
    pub v0: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColliderSpec {
    pub normal: [f64; 3],
    pub offset: f64,
    #[serde(default = "default_mode")]
    pub mode: ContactMode,
    #[serde(default)]
    pub friction: f64,
}

fn default_mode() -> ContactMode {
    ContactMode::Sticky
}

impl ColliderSpec {
    pub fn to_collider(&self) -> Result<HalfSpaceCollider, SolverError> {
        HalfSpaceCollider::new(
            Vector3::from(self.normal),
            self.offset,
            self.mode,
            self.friction,
        )
    }

    pub fn from_collider(c: &HalfSpaceCollider) -> Self {
        Self {
            normal: c.normal.into_inner().into(),
            offset: c.offset,
            mode: c.mode,
            friction: c.friction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
    #[serde(default = "default_resolution")]
    pub resolution: [u32; 2],
    #[serde(default = "default_near")]
    pub near_clip: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_fov() -> f64 {
    50.0
}
fn default_resolution() -> [u32; 2] {
    [320, 240]
}
fn default_near() -> f64 {
    0.05
}

impl CameraSpec {
    pub fn to_camera(&self) -> Camera {
        Camera::look_at(
            Vector3::from(self.position),
            Vector3::from(self.look_at),
            Vector3::from(self.up),
            self.fov_y_deg,
            self.resolution[0],
            self.resolution[1],
            self.near_clip,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default = "default_true")]
    pub images: bool,
    #[serde(default)]
    pub point_clouds: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            images: true,
            point_clouds: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default = "default_material")]
    pub material: MaterialParams,
    #[serde(default)]
    pub bindings: Vec<BindingSpec>,
    #[serde(default)]
    pub edits: Vec<EditCommand>,
    #[serde(default)]
    pub colliders: Vec<ColliderSpec>,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<(), IoError> {
        if self.version != SCENARIO_FORMAT_VERSION {
            return Err(IoError::Version {
                found: self.version,
                expected: SCENARIO_FORMAT_VERSION,
            });
        }
        let wrap = |context: String, source: SolverError| IoError::InvalidScenario {
            context,
            source,
        };
        self.material
            .validate()
            .map_err(|e| wrap("material".into(), e))?;
        for (i, b) in self.bindings.iter().enumerate() {
            if let Some(m) = &b.material {
                m.validate()
                    .map_err(|e| wrap(format!("binding {i} ('{}')", b.id), e))?;
            }
        }
        for (i, c) in self.colliders.iter().enumerate() {
            c.to_collider().map_err(|e| wrap(format!("collider {i}"), e))?;
        }
        if self.outputs.images && self.cameras.is_empty() {
            return Err(IoError::NoCameras);
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    file.validate()?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{synth_demo_scene, DemoParams};

    #[test]
    fn scene_round_trip_preserves_numbers_exactly(){
        let scene = synth_demo_scene(&DemoParams {
            vehicles: 2,
            per_vehicle: 40,
            background: 6,
            ..DemoParams::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        save_scene(&scene, &path).unwrap();
        let back = load_scene(&path).unwrap();
        // shortest-round-trip float formatting makes this exact
        let a = scene.compose_at(0.0);
        let b = back.compose_at(0.0);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.mean.x.to_bits(), q.mean.x.to_bits());
            assert_eq!(p.opacity.to_bits(), q.opacity.to_bits());
            assert_eq!(p.scale, q.scale);
            assert_eq!(p.sh, q.sh);
        }
        assert_eq!(scene.frame_rate, back.frame_rate);
        assert_eq!(scene.time_range, back.time_range);
    }

    #[test]
    fn minimal_scene_parses() {
        let json = r#"{
            "version": 1,
            "time_range": [0.0, 1.0],
            "background": [
                {"mean": [0, 0, 0], "rotation": [1, 0, 0, 0],
                 "scale": [0.1, 0.1, 0.1], "opacity": 0.5, "sh": [[0, 0, 0]]}
            ]
        }"#;
        let file: SceneFile = serde_json::from_str(json).unwrap();
        let scene = file.to_scene().unwrap();
        assert_eq!(scene.background.len(), 1);
        assert_eq!(scene.frame_rate, 10.0);
    }

    #[test]
    fn duplicate_object_id_names_the_id() {
        let json = r#"{
            "version": 1,
            "time_range": [0.0, 1.0],
            "objects": [
                {"id": "car", "primitives": [
                    {"mean": [0,0,0], "rotation": [1,0,0,0], "scale": [0.1,0.1,0.1],
                     "opacity": 1.0, "sh": [[0,0,0]]}],
                 "pose": [{"time": 0.0, "rotation": [1,0,0,0], "translation": [0,0,0]}]},
                {"id": "car", "primitives": [
                    {"mean": [0,0,0], "rotation": [1,0,0,0], "scale": [0.1,0.1,0.1],
                     "opacity": 1.0, "sh": [[0,0,0]]}],
                 "pose": [{"time": 0.0, "rotation": [1,0,0,0], "translation": [0,0,0]}]}
            ]
        }"#;
        let file: SceneFile = serde_json::from_str(json).unwrap();
        let err = file.to_scene().unwrap_err();
        assert!(err.to_string().contains("car"), "{err}");
    }

    #[test]
    fn invalid_primitive_names_its_index() {
        let json = r#"{
            "version": 1,
            "time_range": [0.0, 1.0],
            "background": [
                {"mean": [0,0,0], "rotation": [1,0,0,0], "scale": [0.1,0.1,0.1],
                 "opacity": 0.5, "sh": [[0,0,0]]},
                {"mean": [0,0,0], "rotation": [1,0,0,0], "scale": [0.1,-0.1,0.1],
                 "opacity": 0.5, "sh": [[0,0,0]]}
            ]
        }"#;
        let file: SceneFile = serde_json::from_str(json).unwrap();
        let err = file.to_scene().unwrap_err();
        assert!(err.to_string().contains("background primitive 1"), "{err}");
    }

    #[test]
    fn parse_error_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{\n  \"version\": 1,\n  OOPS\n}").unwrap();
        let err = load_scene(&path).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line"), "{text}");
    }

    #[test]
    fn scenario_defaults_fill_in() {
        let json = r#"{"version": 1, "cameras": [
            {"position": [0, -5, 2], "look_at": [0, 0, 0]}
        ]}"#;
        let file: ScenarioFile = serde_json::from_str(json).unwrap();
        file.validate().unwrap();
        assert_eq!(file.simulation.dt, 2e-4);
        assert_eq!(file.simulation.grid_resolution, 50);
        assert_eq!(file.material.density, 200.0);
        assert!(file.outputs.images);
    }

    #[test]
    fn scenario_without_cameras_but_images_requested_fails() {
        let json = r#"{"version": 1}"#;
        let file: ScenarioFile = serde_json::from_str(json).unwrap();
        assert!(matches!(file.validate(), Err(IoError::NoCameras)));
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert!(!path.with_extension("bin.tmp").exists());
    }
}
