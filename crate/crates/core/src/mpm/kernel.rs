//! Quadratic B-spline interpolation kernels on the background grid.
//!
//! Each particle couples to the 3x3x3 node neighborhood around it with
//! tensor-product quadratic B-spline weights. The 1D weights partition
//! unity and their derivatives sum to zero, which is what makes the
//! particle-grid transfers conservative.

use nalgebra::Vector3;

use super::{MpmGrid, SolverError};

/// Per-axis quadratic B-spline stencil at one particle position.
#[derive(Debug, Clone, Copy)]
pub struct KernelStencil {
    /// Lowest node index per axis; the stencil covers base..base+2.
    pub base: [i64; 3],
    /// 1D weights per axis and offset.
    pub w: [[f64; 3]; 3],
    /// 1D weight derivatives per axis and offset, already divided by dx.
    pub dw: [[f64; 3]; 3],
}

impl KernelStencil {
    /// Builds the stencil, requiring the particle to sit at least two
    /// cells inside the grid boundary.
    pub fn new(
        position: &Vector3<f64>,
        grid: &MpmGrid,
        particle_index: usize,
    ) -> Result<Self, SolverError> {
        let inv_dx = 1.0 / grid.dx;
        let res = grid.resolution as f64;
        let mut base = [0i64; 3];
        let mut w = [[0.0; 3]; 3];
        let mut dw = [[0.0; 3]; 3];
        for axis in 0..3 {
            let u = (position[axis] - grid.origin[axis]) * inv_dx;
            if !(2.0..=res - 2.0).contains(&u) {
                return Err(SolverError::ParticleEscaped {
                    index: particle_index,
                });
            }
            let b = (u - 0.5).floor();
            let fx = u - b; // in [0.5, 1.5)
            base[axis] = b as i64;
            w[axis][0] = 0.5 * (1.5 - fx) * (1.5 - fx);
            w[axis][1] = 0.75 - (fx - 1.0) * (fx - 1.0);
            w[axis][2] = 0.5 * (fx - 0.5) * (fx - 0.5);
            dw[axis][0] = -(1.5 - fx) * inv_dx;
            dw[axis][1] = -2.0 * (fx - 1.0) * inv_dx;
            dw[axis][2] = (fx - 0.5) * inv_dx;
        }
        Ok(Self { base, w, dw })
    }

    /// Visit the 27 neighborhood nodes in a fixed (i, j, k) order with the
    /// 3D weight and its gradient.
    pub fn for_each<F: FnMut([i64; 3], f64, Vector3<f64>)>(&self, mut f: F) {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let coord = [
                        self.base[0] + i as i64,
                        self.base[1] + j as i64,
                        self.base[2] + k as i64,
                    ];
                    let weight = self.w[0][i] * self.w[1][j] * self.w[2][k];
                    let grad = Vector3::new(
                        self.dw[0][i] * self.w[1][j] * self.w[2][k],
                        self.w[0][i] * self.dw[1][j] * self.w[2][k],
                        self.w[0][i] * self.w[1][j] * self.dw[2][k],
                    );
                    f(coord, weight, grad);
                }
            }
        }
    }
}

/// Weights and gradients over the 27-node neighborhood of a position.
/// Test/diagnostic entry point; the solver proper caches stencils per step.
pub fn bspline_weights(
    position: &Vector3<f64>,
    grid: &MpmGrid,
) -> Result<Vec<([i64; 3], f64, Vector3<f64>)>, SolverError> {
    let stencil = KernelStencil::new(position, grid, usize::MAX)?;
    let mut out = Vec::with_capacity(27);
    stencil.for_each(|coord, w, grad| out.push((coord, w, grad)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn grid() -> MpmGrid {
        MpmGrid::new(20, 0.5, Vector3::new(-5.0, -5.0, -5.0))
    }

    #[test]
    fn node_coincident_weights() {
        // At a node the 1D weights are exactly (1/8, 3/4, 1/8).
        let g = grid();
        let pos = g.origin + Vector3::repeat(10.0 * g.dx);
        let entries = bspline_weights(&pos, &g).unwrap();
        let center: f64 = 0.75 * 0.75 * 0.75;
        let found = entries
            .iter()
            .find(|(_, w, _)| (*w - center).abs() < 1e-15)
            .expect("center node weight 0.75^3");
        assert_eq!(found.0, [10, 10, 10]);
        let corner = entries
            .iter()
            .find(|(c, _, _)| *c == [9, 9, 9])
            .unwrap()
            .1;
        assert!((corner - 0.125f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn partition_of_unity_and_zero_gradient_sum() {
        let g = grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let pos = Vector3::new(
                rng.gen_range(-3.5..3.5),
                rng.gen_range(-3.5..3.5),
                rng.gen_range(-3.5..3.5),
            );
            let entries = bspline_weights(&pos, &g).unwrap();
            let sum_w: f64 = entries.iter().map(|e| e.1).sum();
            let sum_g: Vector3<f64> = entries.iter().map(|e| e.2).sum();
            assert!((sum_w - 1.0).abs() < 1e-13, "sum w = {sum_w}");
            assert!(sum_g.norm() < 1e-13, "sum grad = {sum_g}");
        }
    }

    #[test]
    fn escape_is_an_error() {
        let g = grid();
        let pos = g.origin + Vector3::new(0.5 * g.dx, 5.0, 5.0);
        assert!(matches!(
            bspline_weights(&pos, &g),
            Err(SolverError::ParticleEscaped { .. })
        ));
    }
}
