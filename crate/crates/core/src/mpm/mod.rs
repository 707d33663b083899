//! Explicit Material Point Method solver.
//!
//! Particles carry mass, rest volume, position, velocity and deformation
//! gradient; every step transfers them to an Eulerian background grid
//! (P2G), accumulates elastic forces from the first Piola-Kirchhoff
//! stress, updates grid velocities under gravity and colliders, and
//! gathers back (G2P) with symplectic-Euler position and
//! deformation-gradient updates. The transfer is plain PIC, matching the
//! stated algorithm; no affine velocity matrix and no FLIP blend.
//!
//! The grid is sparse: only nodes touched by particles are materialized,
//! in a deterministic insertion-ordered arena, so serial runs are bitwise
//! reproducible and large nominal resolutions stay cheap.

mod kernel;
mod stress;

pub use kernel::{bspline_weights, KernelStencil};
pub use stress::{
    cofactor, first_piola_kirchhoff, fixed_corotated_stress, lame_parameters, polar_rotation,
};

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::BuildHasherDefault;

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid nodes lighter than this are treated as empty.
pub const NODE_MASS_EPS: f64 = 1e-12;
/// Width (in nodes) of the sticky band at the grid boundary.
const BOUNDARY_NODES: i64 = 2;
/// CFL safety factor: dt <= 0.3 dx / sqrt(E / rho).
pub const CFL_SAFETY: f64 = 0.3;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("particle {index} escaped the grid interior")]
    ParticleEscaped { index: usize },
    #[error("instability: particle {particle} has det(F) = {det} <= 0")]
    Instability { particle: usize, det: f64 },
    #[error("singular deformation gradient (det = {det})")]
    SingularF { det: f64 },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("timestep {dt} exceeds the stability bound {bound} (set allow_unstable_dt to override)")]
    TimestepTooLarge { dt: f64, bound: f64 },
    #[error("grid resolution {0} too small (need at least 10 cells per axis)")]
    ResolutionTooSmall(usize),
    #[error("collider normal must be unit length (|n| = {norm})")]
    BadColliderNormal { norm: f64 },
    #[error("cannot fit a grid around zero particles")]
    NoParticles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    Jelly,
}

/// Hyperelastic material description. "Jelly" is interpreted as the
/// fixed-corotated energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaterialParams {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    #[serde(default = "default_kind")]
    pub kind: MaterialKind,
}

fn default_kind() -> MaterialKind {
    MaterialKind::Jelly
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.young_modulus > 0.0) {
            return Err(SolverError::InvalidMaterial(format!(
                "young_modulus must be positive, got {}",
                self.young_modulus
            )));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(SolverError::InvalidMaterial(format!(
                "poisson_ratio must lie in (0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if !(self.density > 0.0) {
            return Err(SolverError::InvalidMaterial(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        Ok(())
    }

    pub fn lame(&self) -> (f64, f64) {
        lame_parameters(self)
    }
}

/// Simulation state of one material particle.
#[derive(Debug, Clone)]
pub struct MpmParticle {
    pub mass: f64,
    pub rest_volume: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub deformation_gradient: Matrix3<f64>,
}

impl MpmParticle {
    pub fn at_rest(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self {
            mass: 0.0,
            rest_volume: 0.0,
            position,
            velocity,
            deformation_gradient: Matrix3::identity(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridNode {
    pub coord: [i64; 3],
    pub mass: f64,
    pub momentum: Vector3<f64>,
    pub force: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

type DetHasher = BuildHasherDefault<DefaultHasher>;

/// Sparse Eulerian background grid over a cubic domain of
/// `resolution` cells (so `resolution + 1` nodes) per axis.
#[derive(Debug, Clone)]
pub struct MpmGrid {
    pub resolution: usize,
    pub dx: f64,
    pub origin: Vector3<f64>,
    slots: HashMap<u64, u32, DetHasher>,
    pub nodes: Vec<GridNode>,
}

impl MpmGrid {
    pub fn new(resolution: usize, dx: f64, origin: Vector3<f64>) -> Self {
        Self {
            resolution,
            dx,
            origin,
            slots: HashMap::default(),
            nodes: Vec::new(),
        }
    }

    /// Auto-fit a cubic domain around `positions`: 20% extent margin and
    /// at least three cells of boundary padding on every side.
    pub fn fit(positions: &[Vector3<f64>], resolution: usize) -> Result<Self, SolverError> {
        if resolution < 10 {
            return Err(SolverError::ResolutionTooSmall(resolution));
        }
        if positions.is_empty() {
            return Err(SolverError::NoParticles);
        }
        let mut lo = positions[0];
        let mut hi = positions[0];
        for p in positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let center = (lo + hi) * 0.5;
        let extent = (hi - lo).max().max(1e-3);
        let dx = extent * 1.2 / (resolution as f64 - 6.0);
        let side = dx * resolution as f64;
        let origin = center - Vector3::repeat(side * 0.5);
        Ok(Self::new(resolution, dx, origin))
    }

    /// Explicit cubic domain covering the box [min, max].
    pub fn with_domain(
        min: Vector3<f64>,
        max: Vector3<f64>,
        resolution: usize,
    ) -> Result<Self, SolverError> {
        if resolution < 10 {
            return Err(SolverError::ResolutionTooSmall(resolution));
        }
        let center = (min + max) * 0.5;
        let side = (max - min).max().max(1e-3);
        let dx = side / resolution as f64;
        let origin = center - Vector3::repeat(side * 0.5);
        Ok(Self::new(resolution, dx, origin))
    }

    pub fn node_position(&self, coord: [i64; 3]) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                coord[0] as f64 * self.dx,
                coord[1] as f64 * self.dx,
                coord[2] as f64 * self.dx,
            )
    }

    fn linear_index(&self, coord: [i64; 3]) -> u64 {
        let n = self.resolution as u64 + 1;
        (coord[0] as u64 * n + coord[1] as u64) * n + coord[2] as u64
    }

    fn slot(&mut self, coord: [i64; 3]) -> u32 {
        let key = self.linear_index(coord);
        if let Some(&s) = self.slots.get(&key) {
            return s;
        }
        let s = self.nodes.len() as u32;
        self.nodes.push(GridNode {
            coord,
            mass: 0.0,
            momentum: Vector3::zeros(),
            force: Vector3::zeros(),
            velocity: Vector3::zeros(),
        });
        self.slots.insert(key, s);
        s
    }

    /// Zero all node quantities, keeping the touched-node arena so that
    /// repeated steps do not re-hash a slowly moving footprint.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.mass = 0.0;
            n.momentum = Vector3::zeros();
            n.force = Vector3::zeros();
            n.velocity = Vector3::zeros();
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.mass).sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.nodes.iter().map(|n| n.momentum).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactMode {
    Sticky,
    Slip,
}

/// Plane constraint n . x = offset; the solid side is n . x < offset.
#[derive(Debug, Clone)]
pub struct HalfSpaceCollider {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
    pub mode: ContactMode,
    pub friction: f64,
}

impl HalfSpaceCollider {
    pub fn new(
        normal: Vector3<f64>,
        offset: f64,
        mode: ContactMode,
        friction: f64,
    ) -> Result<Self, SolverError> {
        let norm = normal.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(SolverError::BadColliderNormal { norm });
        }
        Ok(Self {
            normal: Unit::new_unchecked(normal / norm),
            offset,
            mode,
            friction,
        })
    }

    /// Project a grid velocity at `position`. Sticky contact zeroes the
    /// velocity of inward-moving nodes at or below the surface; slip
    /// removes the inward normal component and applies Coulomb friction
    /// to the tangent.
    pub fn project(&self, position: &Vector3<f64>, velocity: Vector3<f64>) -> Vector3<f64> {
        if self.normal.dot(position) > self.offset {
            return velocity;
        }
        let vn = self.normal.dot(&velocity);
        if vn >= 0.0 {
            return velocity;
        }
        match self.mode {
            ContactMode::Sticky => Vector3::zeros(),
            ContactMode::Slip => {
                let tangent = velocity - self.normal.into_inner() * vn;
                let t_norm = tangent.norm();
                if t_norm <= self.friction * (-vn) {
                    Vector3::zeros()
                } else {
                    tangent * (1.0 - self.friction * (-vn) / t_norm)
                }
            }
        }
    }
}

/// Time-stepping configuration shared by every run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    /// Gravity magnitude, applied as an acceleration along -z.
    pub gravity: f64,
    pub total_steps: usize,
    pub frame_stride: usize,
    pub colliders: Vec<HalfSpaceCollider>,
    pub allow_unstable_dt: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            gravity: 9.8,
            total_steps: 0,
            frame_stride: 100,
            colliders: Vec::new(),
            allow_unstable_dt: false,
        }
    }
}

/// Elastic-wave CFL bound on the timestep.
pub fn cfl_dt_bound(dx: f64, young_modulus: f64, density: f64) -> f64 {
    CFL_SAFETY * dx / (young_modulus / density).sqrt()
}

/// Particles plus per-particle Lame parameters and the grid they share.
#[derive(Debug, Clone)]
pub struct MpmState {
    pub particles: Vec<MpmParticle>,
    /// (mu, lambda) per particle.
    pub lame: Vec<(f64, f64)>,
    pub grid: MpmGrid,
}

impl MpmState {
    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.particles.iter().map(|p| p.velocity * p.mass).sum()
    }

    pub fn min_det_f(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| p.deformation_gradient.determinant())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Rest volumes from the initial packing: each particle gets
/// cell volume / (particles currently in its cell), and mass follows from
/// its material density.
pub fn assign_mass_and_volume(
    particles: &mut [MpmParticle],
    densities: &[f64],
    grid: &MpmGrid,
) {
    debug_assert_eq!(particles.len(), densities.len());
    let inv_dx = 1.0 / grid.dx;
    let cell_of = |p: &MpmParticle| -> [i64; 3] {
        [
            ((p.position.x - grid.origin.x) * inv_dx).floor() as i64,
            ((p.position.y - grid.origin.y) * inv_dx).floor() as i64,
            ((p.position.z - grid.origin.z) * inv_dx).floor() as i64,
        ]
    };
    let mut counts: HashMap<[i64; 3], usize, DetHasher> = HashMap::default();
    for p in particles.iter() {
        *counts.entry(cell_of(p)).or_insert(0) += 1;
    }
    let cell_volume = grid.dx * grid.dx * grid.dx;
    for (p, &rho) in particles.iter_mut().zip(densities) {
        let n = counts[&cell_of(p)] as f64;
        p.rest_volume = cell_volume / n;
        p.mass = rho * p.rest_volume;
    }
}

/// Cached kernel stencils for one step: 27 (slot, weight, gradient)
/// entries per particle, built once and shared by P2G, the force
/// accumulation and G2P so all three see identical weights.
pub struct WeightCache {
    entries: Vec<(u32, f64, Vector3<f64>)>,
}

impl WeightCache {
    pub fn build(grid: &mut MpmGrid, particles: &[MpmParticle]) -> Result<Self, SolverError> {
        let mut entries = Vec::with_capacity(particles.len() * 27);
        for (pi, p) in particles.iter().enumerate() {
            let stencil = KernelStencil::new(&p.position, grid, pi)?;
            stencil.for_each(|coord, w, grad| {
                entries.push((grid.slot(coord), w, grad));
            });
        }
        Ok(Self { entries })
    }

    fn particle(&self, index: usize) -> &[(u32, f64, Vector3<f64>)] {
        &self.entries[index * 27..(index + 1) * 27]
    }
}

/// Particle-to-grid transfer of mass and momentum. Resets the grid first;
/// force and velocity fields are left zeroed.
pub fn p2g(particles: &[MpmParticle], grid: &mut MpmGrid, cache: &WeightCache) {
    grid.reset();
    for (pi, p) in particles.iter().enumerate() {
        for &(slot, w, _) in cache.particle(pi) {
            let node = &mut grid.nodes[slot as usize];
            let mw = p.mass * w;
            node.mass += mw;
            node.momentum += p.velocity * mw;
        }
    }
}

/// Elastic grid forces: f_i -= sum_p V_p^0 P_p grad w_ip.
pub fn grid_forces(
    particles: &[MpmParticle],
    lame: &[(f64, f64)],
    grid: &mut MpmGrid,
    cache: &WeightCache,
) -> Result<(), SolverError> {
    for (pi, p) in particles.iter().enumerate() {
        let (mu, lambda) = lame[pi];
        let stress = fixed_corotated_stress(&p.deformation_gradient, mu, lambda).map_err(
            |e| match e {
                SolverError::SingularF { det } => SolverError::Instability { particle: pi, det },
                other => other,
            },
        )?;
        let scaled = stress * p.rest_volume;
        for &(slot, _, grad) in cache.particle(pi) {
            grid.nodes[slot as usize].force -= scaled * grad;
        }
    }
    Ok(())
}

/// Momentum-to-velocity update with gravity, colliders and the sticky
/// boundary band.
///
/// Massless nodes keep zero velocity. Nodes carrying any positive mass
/// take momentum / mass (safe for arbitrarily small masses, since the
/// momentum scales with the same weights); the force term alone is gated
/// by the mass epsilon, because dt * f / m diverges on near-empty nodes.
/// Zeroing such nodes outright would inject O(grad w) noise into the
/// deformation-gradient update and break the rigid-translation mode.
pub fn grid_update(grid: &mut MpmGrid, config: &SimConfig) {
    let res = grid.resolution as i64;
    let gravity = Vector3::new(0.0, 0.0, -config.gravity);
    let origin = grid.origin;
    let dx = grid.dx;
    for node in &mut grid.nodes {
        if node.mass <= 0.0 {
            node.velocity = Vector3::zeros();
            continue;
        }
        let mut v = node.momentum / node.mass;
        if node.mass >= NODE_MASS_EPS {
            v += node.force * (config.dt / node.mass);
        }
        v += gravity * config.dt;
        let position = origin
            + Vector3::new(
                node.coord[0] as f64 * dx,
                node.coord[1] as f64 * dx,
                node.coord[2] as f64 * dx,
            );
        for collider in &config.colliders {
            v = collider.project(&position, v);
        }
        let on_boundary = node.coord.iter().any(|&c| c < BOUNDARY_NODES)
            || node.coord.iter().any(|&c| c > res - BOUNDARY_NODES);
        if on_boundary {
            v = Vector3::zeros();
        }
        node.velocity = v;
    }
}

/// Grid-to-particle gather: velocity, symplectic position update, then the
/// deformation-gradient update F <- (I + dt sum v_i grad w^T) F.
pub fn g2p(
    particles: &mut [MpmParticle],
    grid: &MpmGrid,
    cache: &WeightCache,
    dt: f64,
) -> Result<(), SolverError> {
    for (pi, p) in particles.iter_mut().enumerate() {
        let mut v = Vector3::zeros();
        let mut grad_v = Matrix3::zeros();
        for &(slot, w, grad) in cache.particle(pi) {
            let vi = grid.nodes[slot as usize].velocity;
            v += vi * w;
            grad_v += vi * grad.transpose();
        }
        p.velocity = v;
        p.position += v * dt;
        p.deformation_gradient =
            (Matrix3::identity() + grad_v * dt) * p.deformation_gradient;
        let det = p.deformation_gradient.determinant();
        if !(det > 0.0) {
            return Err(SolverError::Instability { particle: pi, det });
        }
    }
    Ok(())
}

/// One full explicit step: P2G, grid forces, grid update, G2P.
pub fn step(state: &mut MpmState, config: &SimConfig) -> Result<(), SolverError> {
    let cache = WeightCache::build(&mut state.grid, &state.particles)?;
    p2g(&state.particles, &mut state.grid, &cache);
    grid_forces(&state.particles, &state.lame, &mut state.grid, &cache)?;
    grid_update(&mut state.grid, config);
    g2p(&mut state.particles, &state.grid, &cache, config.dt)
}
