//! Instance-level scene edits: translate, rotate, duplicate, pose override.
//!
//! Every operation takes the scene by reference and returns an edited
//! copy; inputs are never mutated and repeated application is
//! deterministic. Background primitives are never touched.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{PoseSample, PoseTrack, Scene, SceneError};

#[derive(Debug, Error)]
pub enum EditError {
    #[error("unknown object id '{0}'")]
    UnknownObject(String),
    #[error("object id '{0}' already exists")]
    IdCollision(String),
    #[error("rotation axis must be non-zero")]
    ZeroAxis,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// One scripted edit. Scripts are ordered lists of these, applied batch
/// style; target existence is checked at apply time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditCommand {
    Translate {
        id: String,
        delta: [f64; 3],
    },
    Rotate {
        id: String,
        angle_deg: f64,
        axis: [f64; 3],
    },
    Duplicate {
        id: String,
        new_id: String,
        delta: [f64; 3],
    },
    SetPose {
        id: String,
        track: Vec<PoseSampleSpec>,
    },
}

/// Serializable pose sample: quaternion as [w, x, y, z].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseSampleSpec {
    pub time: f64,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseSampleSpec {
    pub fn to_sample(&self) -> Result<PoseSample, SceneError> {
        let q = nalgebra::Quaternion::new(
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
        );
        let norm = q.norm();
        if (norm - 1.0).abs() > crate::scene::UNIT_QUAT_TOL {
            return Err(SceneError::NonUnitRotation { norm });
        }
        Ok(PoseSample {
            time: self.time,
            rotation: UnitQuaternion::new_normalize(q),
            translation: Vector3::from(self.translation),
        })
    }

    pub fn from_sample(s: &PoseSample) -> Self {
        let q = s.rotation.quaternion();
        Self {
            time: s.time,
            rotation: [q.w, q.i, q.j, q.k],
            translation: [s.translation.x, s.translation.y, s.translation.z],
        }
    }
}

fn object_index(scene: &Scene, id: &str) -> Result<usize, EditError> {
    scene
        .objects
        .iter()
        .position(|o| o.id == id)
        .ok_or_else(|| EditError::UnknownObject(id.to_string()))
}

/// Shift every pose sample of the object by `delta`; primitives untouched.
pub fn translate_object(scene: &Scene, id: &str, delta: Vector3<f64>) -> Result<Scene, EditError> {
    let idx = object_index(scene, id)?;
    let mut out = scene.clone();
    let samples = out.objects[idx]
        .pose
        .samples()
        .iter()
        .map(|s| PoseSample {
            time: s.time,
            rotation: s.rotation,
            translation: s.translation + delta,
        })
        .collect();
    out.objects[idx].pose = PoseTrack::new(samples)?;
    Ok(out)
}

/// Rotate the object about its local-frame origin (the cluster centroid
/// by construction): each pose sample's rotation is pre-composed with the
/// edit rotation, so the edit acts before the pose when mapping local
/// points to the world.
pub fn rotate_object(
    scene: &Scene,
    id: &str,
    angle_deg: f64,
    axis: Vector3<f64>,
) -> Result<Scene, EditError> {
    if axis.norm() == 0.0 {
        return Err(EditError::ZeroAxis);
    }
    let idx = object_index(scene, id)?;
    let edit = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle_deg.to_radians());
    let mut out = scene.clone();
    let samples = out.objects[idx]
        .pose
        .samples()
        .iter()
        .map(|s| PoseSample {
            time: s.time,
            rotation: s.rotation * edit,
            translation: s.translation,
        })
        .collect();
    out.objects[idx].pose = PoseTrack::new(samples)?;
    Ok(out)
}

/// Deep-copy the cluster under `new_id`, then translate the copy.
pub fn duplicate_object(
    scene: &Scene,
    id: &str,
    new_id: &str,
    delta: Vector3<f64>,
) -> Result<Scene, EditError> {
    let idx = object_index(scene, id)?;
    if scene.objects.iter().any(|o| o.id == new_id) {
        return Err(EditError::IdCollision(new_id.to_string()));
    }
    let mut copy = scene.objects[idx].clone();
    copy.id = new_id.to_string();
    let mut out = scene.clone();
    out.objects.push(copy);
    translate_object(&out, new_id, delta)
}

/// Replace the object's pose track wholesale.
pub fn set_pose_override(scene: &Scene, id: &str, track: PoseTrack) -> Result<Scene, EditError> {
    let idx = object_index(scene, id)?;
    let mut out = scene.clone();
    out.objects[idx].pose = track;
    Ok(out)
}

/// Apply a script in order; the first failing command aborts.
pub fn apply_edits(scene: &Scene, commands: &[EditCommand]) -> Result<Scene, EditError> {
    let mut current = scene.clone();
    for command in commands {
        current = match command {
            EditCommand::Translate { id, delta } => {
                translate_object(&current, id, Vector3::from(*delta))?
            }
            EditCommand::Rotate {
                id,
                angle_deg,
                axis,
            } => rotate_object(&current, id, *angle_deg, Vector3::from(*axis))?,
            EditCommand::Duplicate { id, new_id, delta } => {
                duplicate_object(&current, id, new_id, Vector3::from(*delta))?
            }
            EditCommand::SetPose { id, track } => {
                let samples: Result<Vec<PoseSample>, SceneError> =
                    track.iter().map(|s| s.to_sample()).collect();
                set_pose_override(&current, id, PoseTrack::new(samples?)?)?
            }
        };
    }
    Ok(current)
}
