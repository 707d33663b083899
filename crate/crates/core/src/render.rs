//! Software splatting rasterizer.
//!
//! Each world Gaussian is projected through a pinhole camera: the mean by
//! perspective projection, the covariance by the linearized projection
//! J W Sigma W^T J^T with J the Jacobian of the perspective map at the
//! camera-space mean. Projected splats are composited front to back per
//! pixel (no tiling, one global depth sort). Serial rendering is the
//! bitwise reference; the row-parallel path touches disjoint pixels only
//! and reproduces it exactly.

use nalgebra::{Isometry3, Matrix2, Matrix2x3, Matrix3, Point3, Translation3, UnitQuaternion,
    Vector2, Vector3};
use rayon::prelude::*;

use crate::scene::GaussianPrimitive;
use crate::sh;

/// Alpha ceiling; keeps transmittance strictly positive.
pub const ALPHA_MAX: f64 = 0.999;
/// Compositing stops once remaining transmittance drops below this.
pub const EARLY_EXIT_TRANSMITTANCE: f64 = 1e-4;
/// Screen-space eigenvalue floor in px^2 (anti-aliasing dilation).
pub const COV2D_EIG_FLOOR: f64 = 0.3;
/// Kernel support: contributions outside the 3-sigma ellipse are zero.
pub const SUPPORT_MAHALANOBIS_SQ: f64 = 9.0;
/// Default cull margin (px) for splat centers outside the frame.
pub const DEFAULT_CULL_MARGIN_PX: f64 = 64.0;

/// Pinhole camera: rigid world-to-camera transform plus intrinsics.
/// Camera space is +z forward, +x right, +y down (pixel y grows down).
#[derive(Debug, Clone)]
pub struct Camera {
    pub world_to_camera: Isometry3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near_clip: f64,
    pub cull_margin_px: f64,
}

impl Camera {
    /// Camera at `position` looking at `target`, square pixels from a
    /// vertical field of view.
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y_deg: f64,
        width: u32,
        height: u32,
        near_clip: f64,
    ) -> Self {
        let forward = (target - position).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right).normalize();
        // columns are the camera axes expressed in world coordinates
        let cam_to_world = Matrix3::from_columns(&[right, down, forward]);
        let rot = UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(cam_to_world.transpose()),
        );
        let translation = Translation3::from(-(rot * position));
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self {
            world_to_camera: Isometry3::from_parts(translation, rot),
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            near_clip,
            cull_margin_px: DEFAULT_CULL_MARGIN_PX,
        }
    }

    /// World-space camera center.
    pub fn center(&self) -> Vector3<f64> {
        self.world_to_camera
            .inverse_transform_point(&Point3::origin())
            .coords
    }
}

/// A Gaussian after projection to the image plane.
#[derive(Debug, Clone)]
pub struct ProjectedSplat {
    pub center_px: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Index of the source primitive; the canonical depth-sort tie-break,
    /// so permuting splat lists cannot change the image.
    pub prim_index: usize,
}

/// Linear-RGB framebuffer with per-pixel remaining transmittance.
#[derive(Debug, Clone)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 3]>,
    pub transmittance: Vec<f64>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; n],
            transmittance: vec![1.0; n],
        }
    }

    /// 8-bit RGB rows, top to bottom.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3);
        for px in &self.pixels {
            for c in px {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }
}

/// Clamp the eigenvalues of a symmetric 2x2 matrix from below.
fn floor_eigenvalues(m: &Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let a = m[(0, 0)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let c = m[(1, 1)];
    let mean = 0.5 * (a + c);
    let half_gap = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let lo = mean - half_gap;
    if lo >= floor {
        return Matrix2::new(a, b, b, c);
    }
    let hi = (mean + half_gap).max(floor);
    let lo = floor;
    // eigenvector for the larger eigenvalue; pick the numerically safer form
    let e1 = if (hi - a).abs() < (hi - c).abs() {
        Vector2::new(hi - c, b)
    } else {
        Vector2::new(b, hi - a)
    };
    let e1 = if e1.norm() > 0.0 {
        e1.normalize()
    } else {
        Vector2::new(1.0, 0.0)
    };
    let e2 = Vector2::new(-e1.y, e1.x);
    hi * e1 * e1.transpose() + lo * e2 * e2.transpose()
}

/// Project one primitive. `None` means culled: behind the near plane or
/// outside the frame by more than the camera's pixel margin.
pub fn project_gaussian(
    p: &GaussianPrimitive,
    prim_index: usize,
    cam: &Camera,
) -> Option<ProjectedSplat> {
    let cam_mean = cam.world_to_camera.transform_point(&Point3::from(p.mean));
    let z = cam_mean.z;
    if z <= cam.near_clip {
        return None;
    }
    let center_px = Vector2::new(
        cam.fx * cam_mean.x / z + cam.cx,
        cam.fy * cam_mean.y / z + cam.cy,
    );
    let m = cam.cull_margin_px;
    if center_px.x < -m
        || center_px.x > cam.width as f64 + m
        || center_px.y < -m
        || center_px.y > cam.height as f64 + m
    {
        return None;
    }
    let inv_z = 1.0 / z;
    let jacobian = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * cam_mean.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * cam_mean.y * inv_z * inv_z,
    );
    let rot = cam.world_to_camera.rotation.to_rotation_matrix();
    let cov_cam = rot * p.covariance() * rot.transpose();
    let cov2d = floor_eigenvalues(&(jacobian * cov_cam * jacobian.transpose()), COV2D_EIG_FLOOR);
    let view_dir = p.mean - cam.center();
    Some(ProjectedSplat {
        center_px,
        cov2d,
        depth: z,
        color: sh::eval_color(&p.sh, &view_dir),
        opacity: p.opacity,
        prim_index,
    })
}

/// Effective opacity of a splat at a pixel: opacity times the 2D Gaussian
/// falloff, truncated at 3 sigma and clamped to [0, ALPHA_MAX].
pub fn eval_kernel(splat: &ProjectedSplat, pixel: Vector2<f64>) -> f64 {
    let d = pixel - splat.center_px;
    let a = splat.cov2d[(0, 0)];
    let b = splat.cov2d[(0, 1)];
    let c = splat.cov2d[(1, 1)];
    let det = a * c - b * b;
    let q = (c * d.x * d.x - 2.0 * b * d.x * d.y + a * d.y * d.y) / det;
    if q > SUPPORT_MAHALANOBIS_SQ {
        return 0.0;
    }
    (splat.opacity * (-0.5 * q).exp()).clamp(0.0, ALPHA_MAX)
}

/// 3-sigma pixel bounding box of a splat, with one pixel of slack.
fn splat_bbox(splat: &ProjectedSplat, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
    let a = splat.cov2d[(0, 0)];
    let b = splat.cov2d[(0, 1)];
    let c = splat.cov2d[(1, 1)];
    let mean = 0.5 * (a + c);
    let half_gap = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let radius = 3.0 * (mean + half_gap).sqrt() + 1.0;
    let x0 = (splat.center_px.x - radius - 0.5).floor();
    let x1 = (splat.center_px.x + radius - 0.5).ceil();
    let y0 = (splat.center_px.y - radius - 0.5).floor();
    let y1 = (splat.center_px.y + radius - 0.5).ceil();
    if x1 < 0.0 || y1 < 0.0 || x0 >= width as f64 || y0 >= height as f64 {
        return None;
    }
    Some((
        x0.max(0.0) as u32,
        (x1.max(0.0) as u32).min(width - 1),
        y0.max(0.0) as u32,
        (y1.max(0.0) as u32).min(height - 1),
    ))
}

/// Front-to-back composite all splats. `threads == 0` is the serial
/// reference; any other value renders rows in parallel with identical
/// per-pixel arithmetic.
pub fn rasterize(splats: &[ProjectedSplat], cam: &Camera, threads: usize) -> Framebuffer {
    let width = cam.width;
    let height = cam.height;
    let mut fb = Framebuffer::new(width, height);

    // One global front-to-back order; ties broken by source index so the
    // result is independent of input permutation.
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_unstable_by(|&i, &j| {
        let a = &splats[i as usize];
        let b = &splats[j as usize];
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.prim_index.cmp(&b.prim_index))
    });

    // Row bins preserve the global order per pixel; they only skip splats
    // that cannot touch a row.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); height as usize];
    let mut spans: Vec<(f64, f64)> = vec![(0.0, 0.0); splats.len()];
    for &si in &order {
        let splat = &splats[si as usize];
        if let Some((x0, x1, y0, y1)) = splat_bbox(splat, width, height) {
            spans[si as usize] = (x0 as f64 + 0.5, x1 as f64 + 0.5);
            for row in rows.iter_mut().take(y1 as usize + 1).skip(y0 as usize) {
                row.push(si);
            }
        }
    }

    let render_row = |y: usize, pixels: &mut [[f64; 3]], transmittance: &mut [f64]| {
        let py = y as f64 + 0.5;
        for (x, (pixel, trans)) in pixels.iter_mut().zip(transmittance.iter_mut()).enumerate() {
            let px = x as f64 + 0.5;
            let mut t = 1.0f64;
            let mut rgb = [0.0f64; 3];
            for &si in &rows[y] {
                let splat = &splats[si as usize];
                let (sx0, sx1) = spans[si as usize];
                if px < sx0 || px > sx1 {
                    continue;
                }
                let alpha = eval_kernel(splat, Vector2::new(px, py));
                if alpha <= 0.0 {
                    continue;
                }
                let w = alpha * t;
                rgb[0] += w * splat.color[0];
                rgb[1] += w * splat.color[1];
                rgb[2] += w * splat.color[2];
                t *= 1.0 - alpha;
                if t < EARLY_EXIT_TRANSMITTANCE {
                    break;
                }
            }
            *pixel = rgb;
            *trans = t;
        }
    };

    let w = width as usize;
    if threads == 0 {
        for (y, (pixels, transmittance)) in fb
            .pixels
            .chunks_mut(w)
            .zip(fb.transmittance.chunks_mut(w))
            .enumerate()
        {
            render_row(y, pixels, transmittance);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("rayon pool");
        pool.install(|| {
            fb.pixels
                .par_chunks_mut(w)
                .zip(fb.transmittance.par_chunks_mut(w))
                .enumerate()
                .for_each(|(y, (pixels, transmittance))| render_row(y, pixels, transmittance));
        });
    }
    fb
}

/// Project and composite a world-frame primitive list.
pub fn render_primitives(
    primitives: &[GaussianPrimitive],
    cam: &Camera,
    threads: usize,
) -> Framebuffer {
    let splats: Vec<ProjectedSplat> = primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project_gaussian(p, i, cam))
        .collect();
    rasterize(&splats, cam, threads)
}

/// One colored point per primitive, at its mean, color from the DC term.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
}

pub fn export_point_cloud(primitives: &[GaussianPrimitive]) -> Vec<CloudPoint> {
    primitives
        .iter()
        .map(|p| CloudPoint {
            position: p.mean,
            color: sh::dc_to_rgb8(&p.sh[0]),
        })
        .collect()
}
