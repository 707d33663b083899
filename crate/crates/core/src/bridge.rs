//! Coupling between the Gaussian scene model and the MPM solver.
//!
//! Each Gaussian of a bound cluster becomes one material particle at its
//! world-frame mean (pose applied at the simulation start time, appearance
//! frozen there). After every emitted frame the particle state is mapped
//! back: the mean follows the particle position and the covariance deforms
//! as A = F Sigma F^T, re-factored into rotation and scale for rendering.
//! Opacity and sh coefficients are carried over untouched.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpm::{
    assign_mass_and_volume, step, MaterialParams, MpmGrid, MpmParticle, MpmState, SimConfig,
    SolverError,
};
use crate::scene::{GaussianPrimitive, ObjectCluster, PoseTrack, Scene};

/// Eigenvalue floor applied to deformed covariances (m^2).
pub const COV_EIG_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("unknown object id '{0}'")]
    UnknownObject(String),
    #[error("object '{0}' has an empty cluster")]
    EmptyCluster(String),
    #[error("non-invertible deformation gradient (det = {det})")]
    NonInvertibleDeformation { det: f64 },
    #[error("solver failed at frame {frame} (step {step}): {source}")]
    StepFailed {
        frame: usize,
        step: usize,
        source: SolverError,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// What to bind: which object, its launch velocity, and an optional
/// material override (falls back to the cluster's material, then to the
/// scenario default).
#[derive(Debug, Clone)]
pub struct BindingRequest {
    pub object_id: String,
    pub initial_velocity: Vector3<f64>,
    pub material: Option<MaterialParams>,
}

/// Frozen bind-time data for one cluster: world-frame template primitives
/// (their means are the material-space positions X_p) plus the matching
/// world-frame covariances, and the particle range inside the shared state.
#[derive(Debug, Clone)]
pub struct SimulationBinding {
    pub object_id: String,
    pub particle_offset: usize,
    pub particle_count: usize,
    pub template: Vec<GaussianPrimitive>,
    pub material_covs: Vec<Matrix3<f64>>,
    pub initial_velocity: Vector3<f64>,
}

/// Grid sizing: nominal resolution (cells per axis) and an optional
/// explicit cubic domain; without one the grid auto-fits the initial
/// particle cloud.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub resolution: usize,
    pub domain: Option<(Vector3<f64>, Vector3<f64>)>,
}

/// Per-frame solver health indicators recorded in run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub total_mass: f64,
    pub momentum: [f64; 3],
    pub min_det_f: f64,
}

/// One emitted frame: the scene with bound clusters replaced by their
/// deformed primitives, plus diagnostics at that step.
#[derive(Debug, Clone)]
pub struct SnapshotFrame {
    pub frame: usize,
    pub step: usize,
    /// Scene time of this frame (start time plus step * dt).
    pub time: f64,
    pub scene: Scene,
    pub diagnostics: FrameDiagnostics,
}

/// Convert one cluster into particles at the simulation start time.
/// Masses and rest volumes stay zero until the grid exists; see
/// [`prepare_run`].
pub fn bind_cluster(
    cluster: &ObjectCluster,
    start_time: f64,
    frame_rate: f64,
    initial_velocity: Vector3<f64>,
    particle_offset: usize,
) -> Result<(Vec<MpmParticle>, SimulationBinding), BridgeError> {
    if cluster.primitives.is_empty() {
        return Err(BridgeError::EmptyCluster(cluster.id.clone()));
    }
    let template = cluster.worldize_at(start_time, frame_rate);
    let material_covs = template.iter().map(|p| p.covariance()).collect();
    let particles = template
        .iter()
        .map(|p| MpmParticle::at_rest(p.mean, initial_velocity))
        .collect();
    let binding = SimulationBinding {
        object_id: cluster.id.clone(),
        particle_offset,
        particle_count: template.len(),
        template,
        material_covs,
        initial_velocity,
    };
    Ok((particles, binding))
}

/// Deform one bound Gaussian: mean follows the particle, covariance
/// becomes F Sigma F^T (symmetrized, eigenvalue-floored) and is re-factored
/// into rotation and scale. Opacity and sh are byte-for-byte the template's.
pub fn deform_gaussian(
    template: &GaussianPrimitive,
    material_cov: &Matrix3<f64>,
    f: &Matrix3<f64>,
    position: &Vector3<f64>,
) -> Result<GaussianPrimitive, BridgeError> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(BridgeError::NonInvertibleDeformation { det });
    }
    let a = f * material_cov * f.transpose();
    let a = (a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(a);
    let values = eig.eigenvalues.map(|v| v.max(COV_EIG_FLOOR));
    let mut vectors = eig.eigenvectors;
    if vectors.determinant() < 0.0 {
        for row in 0..3 {
            vectors[(row, 0)] = -vectors[(row, 0)];
        }
    }
    let rotation =
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(vectors));
    Ok(GaussianPrimitive {
        mean: *position,
        rotation,
        scale: values.map(f64::sqrt),
        opacity: template.opacity,
        sh: template.sh.clone(),
    })
}

/// A prepared simulation: shared particle state, bindings, and the scene
/// to patch per frame.
#[derive(Debug)]
pub struct SimulationRun {
    pub state: MpmState,
    pub bindings: Vec<SimulationBinding>,
    pub config: SimConfig,
    scene: Scene,
    start_time: f64,
}

/// Bind the requested clusters, fit the grid, assign masses and validate
/// the timestep against the elastic CFL bound.
pub fn prepare_run(
    scene: &Scene,
    requests: &[BindingRequest],
    default_material: &MaterialParams,
    config: SimConfig,
    grid: &GridSpec,
) -> Result<SimulationRun, BridgeError> {
    let start_time = scene.time_range.0;
    let mut particles = Vec::new();
    let mut bindings = Vec::new();
    let mut densities = Vec::new();
    let mut lame = Vec::new();
    let mut max_wave_speed_sq = 0.0f64;
    for request in requests {
        let cluster = scene
            .object(&request.object_id)
            .ok_or_else(|| BridgeError::UnknownObject(request.object_id.clone()))?;
        let material = request
            .material
            .as_ref()
            .or(cluster.material.as_ref())
            .unwrap_or(default_material)
            .clone();
        material.validate()?;
        let (cluster_particles, binding) = bind_cluster(
            cluster,
            start_time,
            scene.frame_rate,
            request.initial_velocity,
            particles.len(),
        )?;
        max_wave_speed_sq = max_wave_speed_sq.max(material.young_modulus / material.density);
        let ml = material.lame();
        for _ in 0..cluster_particles.len() {
            densities.push(material.density);
            lame.push(ml);
        }
        particles.extend(cluster_particles);
        bindings.push(binding);
    }

    let positions: Vec<Vector3<f64>> = particles.iter().map(|p| p.position).collect();
    let grid = match grid.domain {
        Some((min, max)) => MpmGrid::with_domain(min, max, grid.resolution)?,
        None => MpmGrid::fit(&positions, grid.resolution)?,
    };
    if !config.allow_unstable_dt && !particles.is_empty() {
        let bound = crate::mpm::CFL_SAFETY * grid.dx / max_wave_speed_sq.sqrt();
        if config.dt > bound {
            return Err(SolverError::TimestepTooLarge {
                dt: config.dt,
                bound,
            }
            .into());
        }
    }
    assign_mass_and_volume(&mut particles, &densities, &grid);
    Ok(SimulationRun {
        state: MpmState {
            particles,
            lame,
            grid,
        },
        bindings,
        config,
        scene: scene.clone(),
        start_time,
    })
}

impl SimulationRun {
    fn diagnostics(&self) -> FrameDiagnostics {
        let momentum = self.state.total_momentum();
        FrameDiagnostics {
            total_mass: self.state.total_mass(),
            momentum: [momentum.x, momentum.y, momentum.z],
            min_det_f: self.state.min_det_f(),
        }
    }

    /// The scene with each bound cluster replaced by its deformed
    /// world-frame primitives under an identity pose.
    fn snapshot_scene(&self, time: f64) -> Result<Scene, BridgeError> {
        let mut scene = self.scene.clone();
        for binding in &self.bindings {
            let deformed: Result<Vec<GaussianPrimitive>, BridgeError> = (0..binding
                .particle_count)
                .map(|i| {
                    let particle = &self.state.particles[binding.particle_offset + i];
                    deform_gaussian(
                        &binding.template[i],
                        &binding.material_covs[i],
                        &particle.deformation_gradient,
                        &particle.position,
                    )
                })
                .collect();
            let cluster = scene
                .objects
                .iter_mut()
                .find(|o| o.id == binding.object_id)
                .expect("binding validated against scene");
            cluster.primitives = deformed?;
            cluster.pose = PoseTrack::fixed(UnitQuaternion::identity(), Vector3::zeros());
            cluster.appearance = None;
        }
        scene.time_range = (time.min(scene.time_range.0), time.max(scene.time_range.1));
        Ok(scene)
    }

    fn emit(&self, frame: usize, step_index: usize) -> Result<SnapshotFrame, BridgeError> {
        let time = self.start_time + step_index as f64 * self.config.dt;
        Ok(SnapshotFrame {
            frame,
            step: step_index,
            time,
            scene: self.snapshot_scene(time)?,
            diagnostics: self.diagnostics(),
        })
    }

    /// Step the solver, emitting a frame at step 0, every `frame_stride`
    /// steps and at the final step.
    pub fn run(mut self) -> Result<Vec<SnapshotFrame>, BridgeError> {
        let stride = self.config.frame_stride.max(1);
        let mut frames = vec![self.emit(0, 0)?];
        for s in 1..=self.config.total_steps {
            step(&mut self.state, &self.config).map_err(|source| BridgeError::StepFailed {
                frame: frames.len(),
                step: s,
                source,
            })?;
            if s % stride == 0 || s == self.config.total_steps {
                frames.push(self.emit(frames.len(), s)?);
            }
        }
        Ok(frames)
    }
}

/// Bind, simulate and collect the frame sequence in one call.
pub fn simulate_and_snapshot(
    scene: &Scene,
    requests: &[BindingRequest],
    default_material: &MaterialParams,
    config: SimConfig,
    grid: &GridSpec,
) -> Result<Vec<SnapshotFrame>, BridgeError> {
    prepare_run(scene, requests, default_material, config, grid)?.run()
}
