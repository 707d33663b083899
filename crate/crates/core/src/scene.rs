//! Explicit scene representation: a static background cloud plus per-object
//! Gaussian clusters with time-varying poses and appearance.
//!
//! All types are plain immutable value data; every operation here is a pure
//! function, so scenes can be shared freely across threads.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::mpm::MaterialParams;

/// Tolerance for "unit quaternion" checks on ingested data.
pub const UNIT_QUAT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("empty pose track")]
    EmptyPoseTrack,
    #[error("pose sample times must be strictly increasing (sample {index})")]
    NonMonotonicPoseTimes { index: usize },
    #[error("rotation quaternion is not unit norm (|q| = {norm})")]
    NonUnitRotation { norm: f64 },
    #[error("scale components must be strictly positive, got {value}")]
    NonPositiveScale { value: f64 },
    #[error("opacity must lie in [0, 1], got {value}")]
    OpacityOutOfRange { value: f64 },
    #[error("sh coefficient count {count} is not a supported degree (1, 4, 9 or 16)")]
    BadShCount { count: usize },
    #[error("fourier appearance: sh index {index} out of range (have {count})")]
    FourierIndexOutOfRange { index: usize, count: usize },
    #[error("fourier appearance: channel {channel} out of range")]
    FourierChannelOutOfRange { channel: usize },
    #[error("fourier appearance: coefficient vector {index} has length {len}, expected k = {k}")]
    FourierBadLength { index: usize, len: usize, k: usize },
    #[error("fourier appearance: k must be >= 1")]
    FourierZeroTerms,
    #[error("fourier appearance: time extent n_t must be positive, got {value}")]
    FourierBadExtent { value: f64 },
    #[error("object '{id}': primitives must be non-empty")]
    EmptyCluster { id: String },
    #[error("duplicate object id '{id}'")]
    DuplicateObjectId { id: String },
    #[error("object '{id}': fourier appearance covers {have} sh indices but primitive {primitive} has {want}")]
    AppearanceShMismatch {
        id: String,
        have: usize,
        want: usize,
        primitive: usize,
    },
}

/// One anisotropic 3D Gaussian: mean, orientation, per-axis standard
/// deviations, opacity weight and spherical-harmonics color coefficients
/// (one RGB triple per basis function, degree 0..=3).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub sh: Vec<Vector3<f64>>,
}

impl GaussianPrimitive {
    /// World covariance of the kernel: R S S^T R^T with S = diag(scale).
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for &s in self.scale.iter() {
            if !(s > 0.0) {
                return Err(SceneError::NonPositiveScale { value: s });
            }
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(SceneError::OpacityOutOfRange {
                value: self.opacity,
            });
        }
        if !matches!(self.sh.len(), 1 | 4 | 9 | 16) {
            return Err(SceneError::BadShCount {
                count: self.sh.len(),
            });
        }
        Ok(())
    }
}

/// A timestamped rigid pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub time: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

/// Ordered rigid-pose samples for one object. Construction enforces the
/// invariants (non-empty, strictly increasing times), so queries are
/// infallible afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    samples: Vec<PoseSample>,
}

impl PoseTrack {
    pub fn new(samples: Vec<PoseSample>) -> Result<Self, SceneError> {
        if samples.is_empty() {
            return Err(SceneError::EmptyPoseTrack);
        }
        for i in 1..samples.len() {
            if samples[i].time <= samples[i - 1].time {
                return Err(SceneError::NonMonotonicPoseTimes { index: i });
            }
        }
        Ok(Self { samples })
    }

    /// A single static pose, valid for all query times.
    pub fn fixed(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            samples: vec![PoseSample {
                time: 0.0,
                rotation,
                translation,
            }],
        }
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    /// Pose at time `t`: exact at sample times, linear translation and
    /// shortest-arc spherical rotation between samples, clamped to the
    /// nearest endpoint outside the sampled range.
    pub fn sample_at(&self, t: f64) -> (UnitQuaternion<f64>, Vector3<f64>) {
        let first = &self.samples[0];
        let last = &self.samples[self.samples.len() - 1];
        if t <= first.time {
            return (first.rotation, first.translation);
        }
        if t >= last.time {
            return (last.rotation, last.translation);
        }
        // partition_point: first index with time > t; the bracket is [hi-1, hi].
        let hi = self.samples.partition_point(|s| s.time <= t);
        let a = &self.samples[hi - 1];
        if a.time == t {
            return (a.rotation, a.translation);
        }
        let b = &self.samples[hi];
        let u = (t - a.time) / (b.time - a.time);
        let translation = a.translation + (b.translation - a.translation) * u;
        let rotation = slerp_shortest(&a.rotation, &b.rotation, u);
        (rotation, translation)
    }
}

/// Shortest-arc spherical interpolation between unit quaternions.
pub fn slerp_shortest(
    a: &UnitQuaternion<f64>,
    b: &UnitQuaternion<f64>,
    t: f64,
) -> UnitQuaternion<f64> {
    let mut bq = *b;
    if a.coords.dot(&bq.coords) < 0.0 {
        bq = UnitQuaternion::new_unchecked(-bq.into_inner());
    }
    a.try_slerp(&bq, t, 1e-12)
        .unwrap_or_else(|| a.nlerp(&bq, t))
}

/// Time-varying spherical-harmonics coefficients, reconstructed from a
/// small cosine series: z(t) = sum_{i<k} f_i * cos(i * pi * t / n_t),
/// with `t` in frame units over a clip of `n_t` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierShAppearance {
    /// `coeffs[sh_index][channel]` is the length-`k` cosine series for one
    /// spherical-harmonics coefficient of one color channel.
    pub coeffs: Vec<[Vec<f64>; 3]>,
    pub n_t: f64,
    pub k: usize,
}

impl FourierShAppearance {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.k < 1 {
            return Err(SceneError::FourierZeroTerms);
        }
        if !(self.n_t > 0.0) {
            return Err(SceneError::FourierBadExtent { value: self.n_t });
        }
        for (index, channels) in self.coeffs.iter().enumerate() {
            for ch in channels {
                if ch.len() != self.k {
                    return Err(SceneError::FourierBadLength {
                        index,
                        len: ch.len(),
                        k: self.k,
                    });
                }
            }
        }
        Ok(())
    }

    /// Evaluate one coefficient series at frame time `t` (clamped to
    /// `[0, n_t]`).
    pub fn evaluate(&self, sh_index: usize, channel: usize, t: f64) -> Result<f64, SceneError> {
        let channels = self
            .coeffs
            .get(sh_index)
            .ok_or(SceneError::FourierIndexOutOfRange {
                index: sh_index,
                count: self.coeffs.len(),
            })?;
        if channel >= 3 {
            return Err(SceneError::FourierChannelOutOfRange { channel });
        }
        let t = t.clamp(0.0, self.n_t);
        let series = &channels[channel];
        let mut acc = 0.0;
        for (i, &f) in series.iter().enumerate() {
            acc += f * (i as f64 * std::f64::consts::PI * t / self.n_t).cos();
        }
        Ok(acc)
    }
}

/// A named Gaussian cluster in its own local frame plus a pose track. The
/// local-frame origin is the cluster centroid at definition time, which
/// makes rotation edits pivot about the object's center.
#[derive(Debug, Clone)]
pub struct ObjectCluster {
    pub id: String,
    pub primitives: Vec<GaussianPrimitive>,
    pub pose: PoseTrack,
    pub appearance: Option<FourierShAppearance>,
    pub material: Option<MaterialParams>,
}

impl ObjectCluster {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.primitives.is_empty() {
            return Err(SceneError::EmptyCluster {
                id: self.id.clone(),
            });
        }
        for p in &self.primitives {
            p.validate()?;
        }
        if let Some(a) = &self.appearance {
            a.validate()?;
            for (pi, p) in self.primitives.iter().enumerate() {
                if p.sh.len() != a.coeffs.len() {
                    return Err(SceneError::AppearanceShMismatch {
                        id: self.id.clone(),
                        have: a.coeffs.len(),
                        want: p.sh.len(),
                        primitive: pi,
                    });
                }
            }
        }
        Ok(())
    }

    /// World-frame primitives of this cluster at scene time `t`:
    /// mean' = R_t * mean + T_t, rotation' = R_t * rotation, and when a
    /// Fourier appearance is present the sh coefficients are replaced by
    /// its evaluation at the corresponding frame time.
    pub fn worldize_at(&self, t: f64, frame_rate: f64) -> Vec<GaussianPrimitive> {
        let (r, tr) = self.pose.sample_at(t);
        let frame_t = t * frame_rate;
        self.primitives
            .iter()
            .map(|p| {
                let sh = match &self.appearance {
                    Some(a) => (0..p.sh.len())
                        .map(|i| {
                            Vector3::new(
                                a.evaluate(i, 0, frame_t).expect("validated appearance"),
                                a.evaluate(i, 1, frame_t).expect("validated appearance"),
                                a.evaluate(i, 2, frame_t).expect("validated appearance"),
                            )
                        })
                        .collect(),
                    None => p.sh.clone(),
                };
                GaussianPrimitive {
                    mean: r * p.mean + tr,
                    rotation: r * p.rotation,
                    scale: p.scale,
                    opacity: p.opacity,
                    sh,
                }
            })
            .collect()
    }
}

/// Full scene: background primitives in the world frame plus object
/// clusters, valid over `time_range` seconds. `frame_rate` maps scene
/// seconds to the frame units used by Fourier appearance (10 Hz default,
/// the capture rate of the source clips).
#[derive(Debug, Clone)]
pub struct Scene {
    pub background: Vec<GaussianPrimitive>,
    pub objects: Vec<ObjectCluster>,
    pub time_range: (f64, f64),
    pub frame_rate: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        for p in &self.background {
            p.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        for o in &self.objects {
            if !seen.insert(o.id.as_str()) {
                return Err(SceneError::DuplicateObjectId { id: o.id.clone() });
            }
            o.validate()?;
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&ObjectCluster> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Merge background and posed objects into a single world-frame cloud
    /// at time `t` (clamped to the scene's time range). Background
    /// primitives pass through unchanged; object primitives are posed via
    /// their track. Deterministic and order-preserving.
    pub fn compose_at(&self, t: f64) -> Vec<GaussianPrimitive> {
        let t = t.clamp(self.time_range.0, self.time_range.1);
        let mut out = self.background.clone();
        for o in &self.objects {
            out.extend(o.worldize_at(t, self.frame_rate));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn prim(mean: [f64; 3]) -> GaussianPrimitive {
        GaussianPrimitive {
            mean: Vector3::from(mean),
            rotation: UnitQuaternion::identity(),
            scale: Vector3::new(1.0, 1.0, 1.0),
            opacity: 0.5,
            sh: vec![Vector3::new(0.1, 0.2, 0.3)],
        }
    }

    #[test]
    fn covariance_identity_rotation_unit_scale() {
        let p = prim([0.0; 3]);
        assert_eq!(p.covariance(), Matrix3::identity());
    }

    #[test]
    fn covariance_diagonal_squares_scales() {
        let mut p = prim([0.0; 3]);
        p.scale = Vector3::new(2.0, 1.0, 1.0);
        let c = p.covariance();
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn covariance_rotated_by_quarter_turn() {
        // Oracle: explicit R * S S^T * R^T product for a 90 degree z turn.
        let mut p = prim([0.0; 3]);
        p.rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        p.scale = Vector3::new(2.0, 1.0, 1.0);
        let r = p.rotation.to_rotation_matrix().into_inner();
        let expected = r * Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)) * r.transpose();
        let got = p.covariance();
        assert_relative_eq!(got, expected, epsilon = 1e-14);
        assert_relative_eq!(
            got,
            Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-12
        );
        // Symmetry within 1e-12, as promised.
        assert!((got - got.transpose()).norm() < 1e-12);
    }

    #[test]
    fn pose_track_rejects_empty_and_non_monotonic() {
        assert!(matches!(
            PoseTrack::new(vec![]),
            Err(SceneError::EmptyPoseTrack)
        ));
        let s = |t: f64| PoseSample {
            time: t,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        };
        assert!(PoseTrack::new(vec![s(0.0), s(0.0)]).is_err());
        assert!(PoseTrack::new(vec![s(0.0), s(1.0)]).is_ok());
    }

    #[test]
    fn pose_linear_midpoint() {
        let track = PoseTrack::new(vec![
            PoseSample {
                time: 0.0,
                rotation: UnitQuaternion::identity(),
                translation: Vector3::zeros(),
            },
            PoseSample {
                time: 1.0,
                rotation: UnitQuaternion::identity(),
                translation: Vector3::new(2.0, 0.0, 0.0),
            },
        ])
        .unwrap();
        let (r, t) = track.sample_at(0.5);
        assert_eq!(r, UnitQuaternion::identity());
        assert_eq!(t, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn pose_clamps_outside_range() {
        let track = PoseTrack::fixed(UnitQuaternion::identity(), Vector3::zeros());
        let (_, t) = track.sample_at(5.0);
        assert_eq!(t, Vector3::zeros());
        let (_, t) = track.sample_at(-5.0);
        assert_eq!(t, Vector3::zeros());
    }

    #[test]
    fn pose_slerp_half_of_quarter_turn() {
        // Oracle: spherical interpolation of a 90 degree z rotation at
        // u = 0.5 is a 45 degree z rotation.
        let q90 = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let track = PoseTrack::new(vec![
            PoseSample {
                time: 0.0,
                rotation: UnitQuaternion::identity(),
                translation: Vector3::zeros(),
            },
            PoseSample {
                time: 1.0,
                rotation: q90,
                translation: Vector3::zeros(),
            },
        ])
        .unwrap();
        let (r, _) = track.sample_at(0.5);
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2 / 2.0);
        assert!(r.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn pose_exact_at_sample_times() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.3);
        let track = PoseTrack::new(vec![
            PoseSample {
                time: 0.0,
                rotation: UnitQuaternion::identity(),
                translation: Vector3::new(1.0, 2.0, 3.0),
            },
            PoseSample {
                time: 0.7,
                rotation: q,
                translation: Vector3::new(-1.0, 0.5, 0.0),
            },
            PoseSample {
                time: 2.0,
                rotation: UnitQuaternion::identity(),
                translation: Vector3::zeros(),
            },
        ])
        .unwrap();
        let (r, t) = track.sample_at(0.7);
        assert_eq!(r, q);
        assert_eq!(t, Vector3::new(-1.0, 0.5, 0.0));
    }

    #[test]
    fn fourier_constant_term() {
        let a = FourierShAppearance {
            coeffs: vec![[vec![2.0], vec![2.0], vec![2.0]]],
            n_t: 50.0,
            k: 1,
        };
        for t in [0.0, 10.0, 50.0] {
            assert_eq!(a.evaluate(0, 0, t).unwrap(), 2.0);
        }
    }

    #[test]
    fn fourier_two_terms_at_endpoints() {
        let a = FourierShAppearance {
            coeffs: vec![[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]],
            n_t: 50.0,
            k: 2,
        };
        assert_relative_eq!(a.evaluate(0, 1, 0.0).unwrap(), 2.0);
        assert_relative_eq!(a.evaluate(0, 1, 50.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fourier_out_of_range_errors() {
        let a = FourierShAppearance {
            coeffs: vec![[vec![1.0], vec![1.0], vec![1.0]]],
            n_t: 50.0,
            k: 1,
        };
        assert!(a.evaluate(1, 0, 0.0).is_err());
        assert!(a.evaluate(0, 3, 0.0).is_err());
    }

    fn one_object_scene(pose: PoseTrack, prims: Vec<GaussianPrimitive>) -> Scene {
        Scene {
            background: vec![],
            objects: vec![ObjectCluster {
                id: "obj".into(),
                primitives: prims,
                pose,
                appearance: None,
                material: None,
            }],
            time_range: (0.0, 10.0),
            frame_rate: 10.0,
        }
    }

    #[test]
    fn compose_background_only_passthrough() {
        let scene = Scene {
            background: vec![prim([1.0, 2.0, 3.0]), prim([-1.0, 0.0, 0.5])],
            objects: vec![],
            time_range: (0.0, 1.0),
            frame_rate: 10.0,
        };
        let out = scene.compose_at(0.5);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], scene.background[0]);
        assert_eq!(out[1], scene.background[1]);
    }

    #[test]
    fn compose_pure_translation() {
        let pose = PoseTrack::fixed(UnitQuaternion::identity(), Vector3::new(5.0, 0.0, 0.0));
        let scene = one_object_scene(pose, vec![prim([0.0; 3])]);
        let out = scene.compose_at(0.0);
        assert_eq!(out[0].mean, Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn compose_quarter_turn_moves_mean() {
        // Oracle: applying the rotation matrix of a 90 degree z turn to
        // (1, 0, 0) gives (0, 1, 0).
        let q90 = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let pose = PoseTrack::fixed(q90, Vector3::zeros());
        let scene = one_object_scene(pose, vec![prim([1.0, 0.0, 0.0])]);
        let out = scene.compose_at(0.0);
        assert_relative_eq!(out[0].mean, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn compose_preserves_count_and_covariance_transform() {
        let q = UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(Vector3::new(1.0, 2.0, -0.5)),
            0.8,
        );
        let pose = PoseTrack::fixed(q, Vector3::new(0.3, -1.0, 2.0));
        let mut p = prim([0.2, 0.4, -0.6]);
        p.rotation = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.4);
        p.scale = Vector3::new(0.5, 1.5, 0.25);
        let local_cov = p.covariance();
        let scene = one_object_scene(pose, vec![p]);
        let out = scene.compose_at(0.0);
        assert_eq!(out.len(), 1);
        let r = q.to_rotation_matrix().into_inner();
        let expected = r * local_cov * r.transpose();
        assert!((out[0].covariance() - expected).norm() < 1e-10);
    }

    #[test]
    fn compose_is_deterministic() {
        let pose = PoseTrack::fixed(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.123),
            Vector3::new(0.1, 0.2, 0.3),
        );
        let scene = one_object_scene(pose, vec![prim([1.0, 2.0, 3.0]), prim([0.0, -1.0, 4.0])]);
        let a = scene.compose_at(0.37);
        let b = scene.compose_at(0.37);
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let pose = PoseTrack::fixed(UnitQuaternion::identity(), Vector3::zeros());
        let cluster = ObjectCluster {
            id: "x".into(),
            primitives: vec![prim([0.0; 3])],
            pose,
            appearance: None,
            material: None,
        };
        let scene = Scene {
            background: vec![],
            objects: vec![cluster.clone(), cluster],
            time_range: (0.0, 1.0),
            frame_rate: 10.0,
        };
        assert!(matches!(
            scene.validate(),
            Err(SceneError::DuplicateObjectId { .. })
        ));
    }

    #[test]
    fn constant_fourier_appearance_is_time_invariant() {
        let mut p = prim([0.0; 3]);
        p.sh = vec![Vector3::new(0.0, 0.0, 0.0)];
        let appearance = FourierShAppearance {
            coeffs: vec![[vec![0.7], vec![0.2], vec![-0.1]]],
            n_t: 100.0,
            k: 1,
        };
        let cluster = ObjectCluster {
            id: "x".into(),
            primitives: vec![p],
            pose: PoseTrack::fixed(UnitQuaternion::identity(), Vector3::zeros()),
            appearance: Some(appearance),
            material: None,
        };
        let a = cluster.worldize_at(0.0, 10.0);
        let b = cluster.worldize_at(7.3, 10.0);
        assert_eq!(a[0].sh, b[0].sh);
        assert_eq!(a[0].sh[0], Vector3::new(0.7, 0.2, -0.1));
    }
}
