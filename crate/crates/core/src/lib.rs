//! Desk-scale, physics-aware Gaussian-splat scene simulator.
//!
//! A scene is an explicit set of anisotropic 3D Gaussians: a static
//! background cloud plus one cluster per movable object, each cluster
//! carrying a time-indexed pose track and optionally a time-varying
//! (cosine-series) spherical-harmonics appearance. Scenes are rendered by
//! a software splatting rasterizer, edited at the instance level, and
//! evolved by an explicit Material Point Method solver whose particles are
//! the Gaussians themselves.
//!
//! Module map:
//! - [`scene`]: the in-memory scene model and time composition.
//! - [`render`]: perspective projection of Gaussians and front-to-back
//!   alpha compositing into a framebuffer.
//! - [`edit`]: instance-level edits (translate / rotate / duplicate /
//!   pose override) with value semantics.
//! - [`mpm`]: the explicit particle-grid solver (quadratic B-spline
//!   transfers, fixed-corotated elasticity, half-space colliders).
//! - [`bridge`]: binds Gaussian clusters to solver particles and maps
//!   deformation gradients back onto Gaussian means and covariances.
//! - [`ground`]: RANSAC road-plane extraction from point clouds.
//! - [`io`]: scene/scenario file formats, PPM/PLY writers, and the
//!   end-to-end pipeline (load, edit, simulate, render, export).
//! - [`demo`]: built-in synthetic scene used by examples and tests.

pub mod bridge;
pub mod demo;
pub mod edit;
pub mod ground;
pub mod io;
pub mod mpm;
pub mod render;
pub mod scene;
pub mod sh;

pub use scene::{
    FourierShAppearance, GaussianPrimitive, ObjectCluster, PoseSample, PoseTrack, Scene,
    SceneError,
};
