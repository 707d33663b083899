//! Road-plane extraction: bounding-box footprint filtering followed by
//! RANSAC plane fitting with a least-squares refit.

use nalgebra::{Matrix3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mpm::{ContactMode, HalfSpaceCollider};

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("plane fitting needs at least 3 points, got {have}")]
    NotEnoughPoints { have: usize },
    #[error("all sampled point triples were collinear")]
    DegenerateGeometry,
    #[error("ambiguous orientation: plane normal is perpendicular to the up hint")]
    AmbiguousOrientation,
}

/// Axis-aligned box, used for its (x, y) footprint.
#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

/// Fitted plane n . x = offset with the surviving inlier indices.
#[derive(Debug, Clone)]
pub struct PlaneModel {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
    pub inliers: Vec<usize>,
}

impl PlaneModel {
    pub fn distance(&self, point: &Vector3<f64>) -> f64 {
        (self.normal.dot(point) - self.offset).abs()
    }
}

/// Indices of points whose (x, y) falls inside any box footprint expanded
/// by `margin`.
pub fn filter_near_projection(
    points: &[Vector3<f64>],
    boxes: &[Aabb],
    margin: f64,
) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            boxes.iter().any(|b| {
                p.x >= b.min.x - margin
                    && p.x <= b.max.x + margin
                    && p.y >= b.min.y - margin
                    && p.y <= b.max.y + margin
            })
        })
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares plane through a point subset: centroid plus the smallest
/// eigenvector of the scatter matrix.
pub fn fit_plane_least_squares(
    points: &[Vector3<f64>],
    indices: &[usize],
) -> Result<(Unit<Vector3<f64>>, f64), GroundError> {
    if indices.len() < 3 {
        return Err(GroundError::NotEnoughPoints {
            have: indices.len(),
        });
    }
    let centroid: Vector3<f64> =
        indices.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / indices.len() as f64;
    let mut scatter = Matrix3::zeros();
    for &i in indices {
        let d = points[i] - centroid;
        scatter += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(scatter);
    let mut k = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[k] {
            k = i;
        }
    }
    let normal = eig.eigenvectors.column(k).into_owned();
    if normal.norm() == 0.0 {
        return Err(GroundError::DegenerateGeometry);
    }
    let normal = Unit::new_normalize(normal);
    Ok((normal, normal.dot(&centroid)))
}

// splitmix64 step: independent per-iteration seeds so the best-candidate
// reduction is order-free.
fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E3779B97F4A7C15)
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Standard RANSAC: sample 3 points per iteration, keep the hypothesis
/// with the most inliers (ties to the earliest iteration), then refit by
/// least squares on that inlier set and re-collect inliers against the
/// refit plane. Deterministic for a given seed.
pub fn ransac_plane(
    points: &[Vector3<f64>],
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<PlaneModel, GroundError> {
    if points.len() < 3 {
        return Err(GroundError::NotEnoughPoints { have: points.len() });
    }
    let n = points.len();
    let mut best: Option<(usize, Unit<Vector3<f64>>, f64)> = None;
    for iter in 0..iterations.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, iter as u64));
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        while j == i {
            j = rng.gen_range(0..n);
        }
        let mut k = rng.gen_range(0..n);
        while k == i || k == j {
            k = rng.gen_range(0..n);
        }
        let (a, b, c) = (points[i], points[j], points[k]);
        let cross = (b - a).cross(&(c - a));
        let scale = (b - a).norm().max((c - a).norm());
        if cross.norm() <= 1e-12 * scale * scale {
            continue; // collinear sample
        }
        let normal = Unit::new_normalize(cross);
        let offset = normal.dot(&a);
        let count = points
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= threshold)
            .count();
        if best.as_ref().map_or(true, |(bc, _, _)| count > *bc) {
            best = Some((count, normal, offset));
        }
    }
    let (_, normal, offset) = best.ok_or(GroundError::DegenerateGeometry)?;
    let sample_inliers: Vec<usize> = (0..n)
        .filter(|&i| (normal.dot(&points[i]) - offset).abs() <= threshold)
        .collect();
    let (normal, offset) = fit_plane_least_squares(points, &sample_inliers)?;
    let inliers: Vec<usize> = (0..n)
        .filter(|&i| (normal.dot(&points[i]) - offset).abs() <= threshold)
        .collect();
    if inliers.len() < 3 {
        return Err(GroundError::DegenerateGeometry);
    }
    Ok(PlaneModel {
        normal,
        offset,
        inliers,
    })
}

/// Turn a fitted plane into a sticky road collider, orienting the normal
/// along the up hint.
pub fn make_halfspace_collider(
    plane: &PlaneModel,
    up_hint: &Vector3<f64>,
) -> Result<HalfSpaceCollider, GroundError> {
    let dot = plane.normal.dot(up_hint);
    if dot.abs() < 1e-12 {
        return Err(GroundError::AmbiguousOrientation);
    }
    let (normal, offset) = if dot < 0.0 {
        (-plane.normal.into_inner(), -plane.offset)
    } else {
        (plane.normal.into_inner(), plane.offset)
    };
    Ok(HalfSpaceCollider::new(normal, offset, ContactMode::Sticky, 0.0)
        .expect("unit normal by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn footprint_filter_basics() {
        let points = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.2, 0.0, 0.0),
            Vector3::new(0.4, 0.4, 7.0), // z is irrelevant to the footprint
        ];
        assert!(filter_near_projection(&points, &[], 1.0).is_empty());
        let unit_box = Aabb {
            min: Vector3::new(-0.5, -0.5, 0.0),
            max: Vector3::new(0.5, 0.5, 1.0),
        };
        // margin 0.5 extends the footprint to |x|, |y| <= 1.0, so the
        // point at x = 1.2 stays excluded
        let idx = filter_near_projection(&points, &[unit_box], 0.5);
        assert_eq!(idx, vec![0, 2]);
        // a box covering everything with zero margin keeps all points
        let big = Aabb {
            min: Vector3::new(-10.0, -10.0, 0.0),
            max: Vector3::new(10.0, 10.0, 0.0),
        };
        assert_eq!(filter_near_projection(&points, &[big], 0.0).len(), 3);
    }

    fn plane_cloud(seed: u64) -> (Vec<Vector3<f64>>, Vector3<f64>) {
        // 100 points exactly on z = 0 plus 10 outliers above it.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        for _ in 0..100 {
            points.push(Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                0.0,
            ));
        }
        for _ in 0..10 {
            points.push(Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(1.0..2.0),
            ));
        }
        (points, Vector3::z())
    }

    #[test]
    fn recovers_horizontal_plane_against_outliers() {
        let (points, truth) = plane_cloud(1);
        let model = ransac_plane(&points, 0.01, 200, 7).unwrap();
        let aligned = model.normal.dot(&truth).abs();
        assert!((aligned - 1.0).abs() < 1e-6);
        assert!(model.offset.abs() < 1e-6);
        assert_eq!(model.inliers.len(), 100);
        // brute-force re-check of every reported inlier
        for &i in &model.inliers {
            assert!(model.distance(&points[i]) <= 0.01);
        }
    }

    #[test]
    fn three_points_give_exact_interpolating_plane() {
        let points = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
        ];
        let model = ransac_plane(&points, 1e-9, 50, 3).unwrap();
        assert_eq!(model.inliers.len(), 3);
        assert!((model.normal.dot(&Vector3::z()).abs() - 1.0).abs() < 1e-12);
        assert!((model.offset.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_error() {
        let points = vec![Vector3::zeros(), Vector3::x()];
        assert!(matches!(
            ransac_plane(&points, 0.1, 10, 0),
            Err(GroundError::NotEnoughPoints { have: 2 })
        ));
    }

    #[test]
    fn scaling_points_scales_offset_not_normal() {
        let (points, _) = plane_cloud(5);
        // use a tilted copy so the offset is non-zero
        let tilt: Vec<Vector3<f64>> = points
            .iter()
            .map(|p| p + Vector3::new(0.0, 0.0, 2.0))
            .collect();
        let doubled: Vec<Vector3<f64>> = tilt.iter().map(|p| p * 2.0).collect();
        let m1 = ransac_plane(&tilt, 0.01, 200, 11).unwrap();
        let m2 = ransac_plane(&doubled, 0.02, 200, 11).unwrap();
        assert!((m1.normal.dot(&m2.normal).abs() - 1.0).abs() < 1e-9);
        let s1 = m1.offset * m1.normal.dot(&m2.normal).signum();
        assert!((m2.offset - 2.0 * s1).abs() < 1e-6);
    }

    #[test]
    fn deterministic_given_seed() {
        let (points, _) = plane_cloud(2);
        let a = ransac_plane(&points, 0.05, 300, 42).unwrap();
        let b = ransac_plane(&points, 0.05, 300, 42).unwrap();
        assert_eq!(a.normal.into_inner(), b.normal.into_inner());
        assert_eq!(a.offset.to_bits(), b.offset.to_bits());
        assert_eq!(a.inliers, b.inliers);
    }

    #[test]
    fn inlier_count_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut points = Vec::new();
        for _ in 0..200 {
            points.push(Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-0.04..0.04),
            ));
        }
        let tight = ransac_plane(&points, 0.01, 200, 1).unwrap();
        let loose = ransac_plane(&points, 0.05, 200, 1).unwrap();
        assert!(loose.inliers.len() >= tight.inliers.len());
    }

    #[test]
    fn refit_never_worse_than_sample_plane_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut points = Vec::new();
        for _ in 0..60 {
            points.push(Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                0.3 + rng.gen_range(-0.02..0.02),
            ));
        }
        let indices: Vec<usize> = (0..points.len()).collect();
        let (n_ls, d_ls) = fit_plane_least_squares(&points, &indices).unwrap();
        // minimal-sample plane through the first three points
        let (a, b, c) = (points[0], points[1], points[2]);
        let n_s = Unit::new_normalize((b - a).cross(&(c - a)));
        let d_s = n_s.dot(&a);
        let rms = |n: &Unit<Vector3<f64>>, d: f64| {
            (indices
                .iter()
                .map(|&i| (n.dot(&points[i]) - d).powi(2))
                .sum::<f64>()
                / indices.len() as f64)
                .sqrt()
        };
        assert!(rms(&n_ls, d_ls) <= rms(&n_s, d_s) + 1e-15);
    }

    #[test]
    fn collider_orientation_canonicalized() {
        let plane = PlaneModel {
            normal: Unit::new_normalize(Vector3::new(0.0, 0.0, -1.0)),
            offset: -0.25,
            inliers: vec![0, 1, 2],
        };
        let collider = make_halfspace_collider(&plane, &Vector3::z()).unwrap();
        assert!((collider.normal.into_inner() - Vector3::z()).norm() < 1e-12);
        assert!((collider.offset - 0.25).abs() < 1e-12);
        // flipped input gives the same collider
        let flipped = PlaneModel {
            normal: Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0)),
            offset: 0.25,
            inliers: vec![0, 1, 2],
        };
        let c2 = make_halfspace_collider(&flipped, &Vector3::z()).unwrap();
        assert!((collider.normal.into_inner() - c2.normal.into_inner()).norm() < 1e-12);
        assert!((collider.offset - c2.offset).abs() < 1e-12);
    }

    #[test]
    fn perpendicular_up_hint_is_ambiguous() {
        let plane = PlaneModel {
            normal: Unit::new_normalize(Vector3::x()),
            offset: 0.0,
            inliers: vec![0, 1, 2],
        };
        assert!(matches!(
            make_halfspace_collider(&plane, &Vector3::z()),
            Err(GroundError::AmbiguousOrientation)
        ));
    }

    #[test]
    fn tilted_ramp_normal_recovered() {
        // synthetic ramp oracle: plane with known normal
        let truth = Unit::new_normalize(Vector3::new(0.2, -0.1, 1.0));
        let offset = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut points = Vec::new();
        for _ in 0..150 {
            // span the plane with two tangent directions
            let t1 = Vector3::new(1.0, 0.0, -truth.x / truth.z);
            let t2 = Vector3::new(0.0, 1.0, -truth.y / truth.z);
            let p = truth.into_inner() * offset
                + t1 * rng.gen_range(-3.0..3.0)
                + t2 * rng.gen_range(-3.0..3.0);
            points.push(p);
        }
        for _ in 0..15 {
            points.push(Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(3.0..6.0),
            ));
        }
        let model = ransac_plane(&points, 0.02, 400, 3).unwrap();
        let collider = make_halfspace_collider(&model, &Vector3::z()).unwrap();
        assert!(
            (collider.normal.into_inner() - truth.into_inner()).norm() < 1e-6,
            "normal {:?}",
            collider.normal
        );
    }
}
