//! Fixed-corotated hyperelasticity: Lame conversion, polar decomposition,
//! and the first Piola-Kirchhoff stress that drives the grid forces.

use nalgebra::Matrix3;

use super::{MaterialParams, SolverError};

/// (mu, lambda) from Young's modulus and Poisson's ratio.
pub fn lame_parameters(m: &MaterialParams) -> (f64, f64) {
    let e = m.young_modulus;
    let nu = m.poisson_ratio;
    let mu = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    (mu, lambda)
}

/// Rotation factor of the polar decomposition F = R U, via SVD with a sign
/// correction on the smallest singular direction so that det(R) = +1.
pub fn polar_rotation(f: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = f.svd(true, true);
    let mut u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let r = u * v_t;
    if r.determinant() < 0.0 {
        let vals = &svd.singular_values;
        let mut k = 0;
        for i in 1..3 {
            if vals[i] < vals[k] {
                k = i;
            }
        }
        for row in 0..3 {
            u[(row, k)] = -u[(row, k)];
        }
        u * v_t
    } else {
        r
    }
}

/// Cofactor matrix of F, equal to det(F) * F^{-T} and to d det(F) / dF.
pub fn cofactor(f: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = f.column(0).into_owned();
    let c1 = f.column(1).into_owned();
    let c2 = f.column(2).into_owned();
    Matrix3::from_columns(&[c1.cross(&c2), c2.cross(&c0), c0.cross(&c1)])
}

/// First Piola-Kirchhoff stress of the fixed-corotated model:
/// P = 2 mu (F - R) + lambda (J - 1) J F^{-T}.
pub fn fixed_corotated_stress(
    f: &Matrix3<f64>,
    mu: f64,
    lambda: f64,
) -> Result<Matrix3<f64>, SolverError> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(SolverError::SingularF { det: j });
    }
    let r = polar_rotation(f);
    Ok((f - r) * (2.0 * mu) + cofactor(f) * (lambda * (j - 1.0)))
}

/// Stress from material parameters (convenience over the Lame form).
pub fn first_piola_kirchhoff(
    f: &Matrix3<f64>,
    m: &MaterialParams,
) -> Result<Matrix3<f64>, SolverError> {
    let (mu, lambda) = lame_parameters(m);
    fixed_corotated_stress(f, mu, lambda)
}
