//! End-to-end pipeline: load scene, apply edits, bind and simulate,
//! render every frame from every camera, export point clouds, and write a
//! run manifest with input hashes and per-frame diagnostics.

use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge::{
    simulate_and_snapshot, BindingRequest, BridgeError, FrameDiagnostics, GridSpec, SnapshotFrame,
};
use crate::edit::{apply_edits, EditError};
use crate::io::{load_scenario, load_scene, ply, ppm, write_atomic, IoError, ScenarioFile};
use crate::mpm::SimConfig;
use crate::render::{export_point_cloud, render_primitives};
use crate::scene::Scene;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("load scene: {0}")]
    LoadScene(#[source] IoError),
    #[error("load scenario: {0}")]
    LoadScenario(#[source] IoError),
    #[error("edit: {0}")]
    Edit(#[from] EditError),
    #[error("simulate: {0}")]
    Simulate(#[from] BridgeError),
    #[error("render frame {frame} camera {camera}: {source}")]
    Render {
        frame: usize,
        camera: usize,
        source: IoError,
    },
    #[error("export frame {frame}: {source}")]
    Export { frame: usize, source: IoError },
    #[error("write manifest: {0}")]
    Manifest(#[source] IoError),
    #[error("create output directory: {0}")]
    OutDir(std::io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// 0 renders serially (the bitwise reference); N > 0 uses N rows
    /// workers with identical per-pixel arithmetic.
    pub threads: usize,
    pub verbose: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 0,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub step: usize,
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FrameDiagnostics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub scene: FileStamp,
    pub scenario: FileStamp,
    /// Echo of the parsed scenario configuration.
    pub config: serde_json::Value,
    pub frames: Vec<FrameRecord>,
    pub artifacts: Vec<String>,
    pub timing: Timing,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn stamp(path: &Path) -> Result<FileStamp, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Ok(FileStamp {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// A frame to realize on disk: either a plain composition of the edited
/// scene or a simulation snapshot.
struct PendingFrame {
    frame: usize,
    step: usize,
    time: f64,
    scene: Scene,
    diagnostics: Option<FrameDiagnostics>,
}

fn simulation_frames(
    scene: &Scene,
    scenario: &ScenarioFile,
) -> Result<Vec<PendingFrame>, PipelineError> {
    if scenario.bindings.is_empty() {
        // render-only run: a single frame at the scene start time
        return Ok(vec![PendingFrame {
            frame: 0,
            step: 0,
            time: scene.time_range.0,
            scene: scene.clone(),
            diagnostics: None,
        }]);
    }
    let requests: Vec<BindingRequest> = scenario
        .bindings
        .iter()
        .map(|b| BindingRequest {
            object_id: b.id.clone(),
            initial_velocity: Vector3::from(b.v0),
            material: b.material.clone(),
        })
        .collect();
    let colliders = scenario
        .colliders
        .iter()
        .map(|c| c.to_collider().expect("validated scenario"))
        .collect();
    let config = SimConfig {
        dt: scenario.simulation.dt,
        gravity: scenario.simulation.gravity,
        total_steps: scenario.simulation.steps,
        frame_stride: scenario.simulation.frame_stride,
        colliders,
        allow_unstable_dt: scenario.simulation.allow_unstable_dt,
    };
    let grid = GridSpec {
        resolution: scenario.simulation.grid_resolution,
        domain: scenario
            .simulation
            .domain
            .as_ref()
            .map(|d| (Vector3::from(d.min), Vector3::from(d.max))),
    };
    let frames = simulate_and_snapshot(scene, &requests, &scenario.material, config, &grid)?;
    Ok(frames
        .into_iter()
        .map(|f: SnapshotFrame| PendingFrame {
            frame: f.frame,
            step: f.step,
            time: f.time,
            scene: f.scene,
            diagnostics: Some(f.diagnostics),
        })
        .collect())
}

/// Run the whole pipeline. Returns the manifest that was written to
/// `<out_dir>/manifest.json`.
pub fn run_pipeline(
    scene_path: &Path,
    scenario_path: &Path,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<Manifest, PipelineError> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(PipelineError::OutDir)?;

    let scene_stamp = stamp(scene_path).map_err(PipelineError::LoadScene)?;
    let scene = load_scene(scene_path).map_err(PipelineError::LoadScene)?;
    let scenario_stamp = stamp(scenario_path).map_err(PipelineError::LoadScenario)?;
    let scenario = load_scenario(scenario_path).map_err(PipelineError::LoadScenario)?;

    let edited = apply_edits(&scene, &scenario.edits)?;
    let frames = simulation_frames(&edited, &scenario)?;

    let cameras: Vec<_> = scenario.cameras.iter().map(|c| c.to_camera()).collect();
    let mut artifacts = Vec::new();
    let mut records = Vec::with_capacity(frames.len());
    for pending in &frames {
        let composed = pending.scene.compose_at(pending.time);
        if scenario.outputs.images {
            for (ci, camera) in cameras.iter().enumerate() {
                let fb = render_primitives(&composed, camera, options.threads);
                let name = format!("cam{ci}_frame{n}.ppm", n = pending.frame);
                let bytes = ppm::encode(fb.width, fb.height, &fb.to_rgb8());
                write_atomic(&out_dir.join(&name), &bytes).map_err(|source| {
                    PipelineError::Render {
                        frame: pending.frame,
                        camera: ci,
                        source,
                    }
                })?;
                if options.verbose {
                    eprintln!("wrote {name}");
                }
                artifacts.push(name);
            }
        }
        if scenario.outputs.point_clouds {
            let cloud = export_point_cloud(&composed);
            let points: Vec<ply::PlyPoint> = cloud
                .iter()
                .map(|p| ply::PlyPoint {
                    position: p.position,
                    color: Some(p.color),
                })
                .collect();
            let name = format!("frame{n}.ply", n = pending.frame);
            write_atomic(&out_dir.join(&name), ply::write_points(&points).as_bytes()).map_err(
                |source| PipelineError::Export {
                    frame: pending.frame,
                    source,
                },
            )?;
            artifacts.push(name);
        }
        records.push(FrameRecord {
            frame: pending.frame,
            step: pending.step,
            time: pending.time,
            diagnostics: pending.diagnostics.clone(),
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        scene: scene_stamp,
        scenario: scenario_stamp,
        config: serde_json::to_value(&scenario).expect("scenario serializes"),
        frames: records,
        artifacts,
        timing: Timing {
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out_dir.join("manifest.json"), &json).map_err(PipelineError::Manifest)?;
    Ok(manifest)
}

/// Load a manifest back (testing and tooling).
pub fn read_manifest(path: &Path) -> Result<Manifest, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{synth_demo_scene, DemoParams};
    use crate::io::{save_scene, CameraSpec, OutputSpec, SimulationSpec};
    use std::path::PathBuf;

    fn demo_paths(dir: &Path) -> (PathBuf, PathBuf) {
        let scene = synth_demo_scene(&DemoParams {
            per_vehicle: 60,
            background: 6,
            ..DemoParams::default()
        });
        let scene_path = dir.join("scene.json");
        save_scene(&scene, &scene_path).unwrap();
        let scenario = ScenarioFile {
            version: 1,
            simulation: SimulationSpec {
                steps: 0,
                ..SimulationSpec::default()
            },
            material: crate::io::default_material(),
            bindings: vec![],
            edits: vec![],
            colliders: vec![],
            cameras: vec![CameraSpec {
                position: [-6.0, -10.0, 5.0],
                look_at: [0.0, 0.0, 0.5],
                up: [0.0, 0.0, 1.0],
                fov_y_deg: 50.0,
                resolution: [64, 48],
                near_clip: 0.05,
            }],
            outputs: OutputSpec {
                images: true,
                point_clouds: true,
            },
        };
        let scenario_path = dir.join("scenario.json");
        write_atomic(
            &scenario_path,
            &serde_json::to_vec_pretty(&scenario).unwrap(),
        )
        .unwrap();
        (scene_path, scenario_path)
    }

    #[test]
    fn render_only_pipeline_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let (scene_path, scenario_path) = demo_paths(dir.path());
        let out = dir.path().join("out");
        let manifest = run_pipeline(
            &scene_path,
            &scenario_path,
            &out,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(manifest.frames.len(), 1);
        assert_eq!(manifest.artifacts.len(), 2); // one ppm + one ply
        for name in &manifest.artifacts {
            let path = out.join(name);
            assert!(path.exists(), "missing artifact {name}");
            if name.ends_with(".ppm") {
                let bytes = std::fs::read(&path).unwrap();
                let (w, h, _) = ppm::parse(&bytes).unwrap();
                assert_eq!((w, h), (64, 48));
            } else {
                let text = std::fs::read_to_string(&path).unwrap();
                assert!(ply::parse_points(&text).is_ok());
            }
        }
        let on_disk = read_manifest(&out.join("manifest.json")).unwrap();
        assert_eq!(on_disk.artifacts, manifest.artifacts);
        assert_eq!(on_disk.scene.sha256.len(), 64);
    }

    #[test]
    fn rerun_is_bitwise_identical_modulo_timing() {
        let dir = tempfile::tempdir().unwrap();
        let (scene_path, scenario_path) = demo_paths(dir.path());
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let opts = RunOptions::default();
        let ma = run_pipeline(&scene_path, &scenario_path, &out_a, &opts).unwrap();
        let mb = run_pipeline(&scene_path, &scenario_path, &out_b, &opts).unwrap();
        for name in &ma.artifacts {
            let a = std::fs::read(out_a.join(name)).unwrap();
            let b = std::fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} differs between reruns");
        }
        let mut va = serde_json::to_value(&ma).unwrap();
        let mut vb = serde_json::to_value(&mb).unwrap();
        va.as_object_mut().unwrap().remove("timing");
        vb.as_object_mut().unwrap().remove("timing");
        assert_eq!(va, vb);
    }

    #[test]
    fn missing_scene_reports_stage() {
        let dir = tempfile::tempdir().unwrap();
        let (_, scenario_path) = demo_paths(dir.path());
        let err = run_pipeline(
            &dir.path().join("nope.json"),
            &scenario_path,
            &dir.path().join("out"),
            &RunOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("load scene"), "{err}");
    }
}
