//! Built-in synthetic scene: box-shaped "vehicle" Gaussian clusters parked
//! on a flat ground patch. Used by the CLI `synth-demo` subcommand and by
//! the test suites.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{
    FourierShAppearance, GaussianPrimitive, ObjectCluster, PoseSample, PoseTrack, Scene,
};
use crate::sh::rgb_to_dc;

#[derive(Debug, Clone)]
pub struct DemoParams {
    /// Number of vehicle clusters.
    pub vehicles: usize,
    /// Gaussians per vehicle.
    pub per_vehicle: usize,
    /// Ground patch resolution (side count; background has side^2 splats).
    pub background: usize,
    /// Row spacing along x between vehicle pairs (meters).
    pub gap: f64,
    /// Lane half-offset along y (meters).
    pub lane_offset: f64,
    /// Collapse every cluster onto a single z plane (planar scenarios).
    pub flat: bool,
    /// Height of the cluster origin above the ground for flat scenes.
    pub flat_height: f64,
    /// Attach a gentle cosine appearance series to the first vehicle.
    pub fourier_on_first: bool,
    pub seed: u64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            vehicles: 2,
            per_vehicle: 1000,
            background: 24,
            gap: 8.0,
            lane_offset: 2.5,
            flat: false,
            flat_height: 0.75,
            fourier_on_first: false,
            seed: 0,
        }
    }
}

/// Vehicle body half-extents (x, y, z), roughly car-sized.
pub const VEHICLE_HALF_EXTENTS: [f64; 3] = [2.0, 0.9, 0.75];

const PALETTE: [[f64; 3]; 6] = [
    [0.80, 0.25, 0.20],
    [0.25, 0.35, 0.85],
    [0.25, 0.75, 0.30],
    [0.85, 0.75, 0.25],
    [0.75, 0.30, 0.75],
    [0.30, 0.75, 0.75],
];

fn vehicle_cluster(index: usize, params: &DemoParams, rng: &mut ChaCha8Rng) -> ObjectCluster {
    let color = Vector3::from(PALETTE[index % PALETTE.len()]);
    let dc = rgb_to_dc(color);
    let he = VEHICLE_HALF_EXTENTS;
    let mut means: Vec<Vector3<f64>> = (0..params.per_vehicle)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-he[0]..he[0]),
                rng.gen_range(-he[1]..he[1]),
                if params.flat {
                    0.0
                } else {
                    rng.gen_range(-he[2]..he[2])
                },
            )
        })
        .collect();
    // local origin is the cluster centroid
    let centroid: Vector3<f64> = means.iter().sum::<Vector3<f64>>() / means.len() as f64;
    for m in &mut means {
        *m -= centroid;
    }
    let min_z = means.iter().map(|m| m.z).fold(f64::INFINITY, f64::min);

    let primitives = means
        .into_iter()
        .map(|mean| GaussianPrimitive {
            mean,
            rotation: UnitQuaternion::identity(),
            scale: Vector3::repeat(0.08),
            opacity: 0.85,
            sh: vec![dc],
        })
        .collect();

    let lane = if index % 2 == 0 { -1.0 } else { 1.0 };
    let row = (index / 2) as f64;
    let height = if params.flat {
        params.flat_height
    } else {
        // rest the lowest Gaussian mean exactly on z = 0
        -min_z
    };
    let translation = Vector3::new(-row * params.gap, lane * params.lane_offset, height);

    let appearance = if params.fourier_on_first && index == 0 {
        // cosine series per channel, constant-dominated with mild ripple
        let series = |base: f64| vec![base, 0.08, -0.04, 0.02];
        Some(FourierShAppearance {
            coeffs: vec![[series(dc.x), series(dc.y), series(dc.z)]],
            n_t: 100.0,
            k: 4,
        })
    } else {
        None
    };

    ObjectCluster {
        id: format!("vehicle_{index}"),
        primitives,
        pose: PoseTrack::new(vec![PoseSample {
            time: 0.0,
            rotation: UnitQuaternion::identity(),
            translation,
        }])
        .unwrap(),
        appearance,
        material: None,
    }
}

/// Build the demo scene. Deterministic for a given parameter set.
pub fn synth_demo_scene(params: &DemoParams) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let side = params.background.max(2);
    let span = 30.0;
    let step = span / (side - 1) as f64;
    let mut background = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let shade = if (i + j) % 2 == 0 { 0.42 } else { 0.52 };
            background.push(GaussianPrimitive {
                mean: Vector3::new(
                    -0.5 * span + i as f64 * step,
                    -0.5 * span + j as f64 * step,
                    0.0,
                ),
                rotation: UnitQuaternion::identity(),
                scale: Vector3::new(0.45 * step, 0.45 * step, 0.02),
                opacity: 0.9,
                sh: vec![rgb_to_dc(Vector3::repeat(shade))],
            });
        }
    }
    let objects = (0..params.vehicles)
        .map(|i| vehicle_cluster(i, params, &mut rng))
        .collect();
    Scene {
        background,
        objects,
        time_range: (0.0, 10.0),
        frame_rate: 10.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let params = DemoParams {
            per_vehicle: 50,
            background: 8,
            ..DemoParams::default()
        };
        let a = synth_demo_scene(&params);
        let b = synth_demo_scene(&params);
        a.validate().unwrap();
        assert_eq!(a.compose_at(0.0), b.compose_at(0.0));
        assert_eq!(a.objects.len(), 2);
        assert_eq!(a.objects[0].primitives.len(), 50);
    }

    #[test]
    fn vehicles_rest_on_the_ground() {
        let params = DemoParams {
            per_vehicle: 200,
            background: 4,
            ..DemoParams::default()
        };
        let scene = synth_demo_scene(&params);
        for object in &scene.objects {
            let world = object.worldize_at(0.0, scene.frame_rate);
            let min_z = world
                .iter()
                .map(|p| p.mean.z)
                .fold(f64::INFINITY, f64::min);
            assert!(min_z.abs() < 1e-12, "cluster floats at {min_z}");
        }
    }

    #[test]
    fn flat_mode_collapses_to_one_plane() {
        let params = DemoParams {
            vehicles: 4,
            per_vehicle: 100,
            background: 4,
            flat: true,
            flat_height: 0.9,
            ..DemoParams::default()
        };
        let scene = synth_demo_scene(&params);
        for object in &scene.objects {
            for p in object.worldize_at(0.0, scene.frame_rate) {
                assert!((p.mean.z - 0.9).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_origin_is_centroid() {
        let params = DemoParams {
            per_vehicle: 333,
            background: 4,
            ..DemoParams::default()
        };
        let scene = synth_demo_scene(&params);
        for object in &scene.objects {
            let centroid: Vector3<f64> = object.primitives.iter().map(|p| p.mean).sum();
            assert!(centroid.norm() / (object.primitives.len() as f64) < 1e-12);
        }
    }
}
