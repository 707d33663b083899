//! Real spherical-harmonics color evaluation (degrees 0..=3).
//!
//! Convention: coefficients store the SH-projected color; the rendered
//! channel is `0.5 + sum_l c_l * Y_l(dir)` clamped to [0, 1]. The degree-0
//! (DC) term alone therefore maps to `0.5 + SH_C0 * c_0`.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per channel for a given degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Degree for a coefficient count, if supported.
pub fn degree_from_count(count: usize) -> Option<usize> {
    match count {
        1 => Some(0),
        4 => Some(1),
        9 => Some(2),
        16 => Some(3),
        _ => None,
    }
}

/// Invert the DC mapping: the coefficient whose degree-0 render equals `rgb`.
pub fn rgb_to_dc(rgb: Vector3<f64>) -> Vector3<f64> {
    (rgb - Vector3::repeat(0.5)) / SH_C0
}

/// Evaluate the SH color for a view direction (need not be normalized;
/// a zero direction falls back to the DC term only).
pub fn eval_color(sh: &[Vector3<f64>], dir: &Vector3<f64>) -> [f64; 3] {
    let mut c = sh[0] * SH_C0;
    let n = dir.norm();
    if sh.len() > 1 && n > 0.0 {
        let d = dir / n;
        let (x, y, z) = (d.x, d.y, d.z);
        c += sh[1] * (-SH_C1 * y) + sh[2] * (SH_C1 * z) + sh[3] * (-SH_C1 * x);
        if sh.len() > 4 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            let (xy, yz, xz) = (x * y, y * z, x * z);
            c += sh[4] * (SH_C2[0] * xy)
                + sh[5] * (SH_C2[1] * yz)
                + sh[6] * (SH_C2[2] * (2.0 * zz - xx - yy))
                + sh[7] * (SH_C2[3] * xz)
                + sh[8] * (SH_C2[4] * (xx - yy));
            if sh.len() > 9 {
                c += sh[9] * (SH_C3[0] * y * (3.0 * xx - yy))
                    + sh[10] * (SH_C3[1] * xy * z)
                    + sh[11] * (SH_C3[2] * y * (4.0 * zz - xx - yy))
                    + sh[12] * (SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy))
                    + sh[13] * (SH_C3[4] * x * (4.0 * zz - xx - yy))
                    + sh[14] * (SH_C3[5] * z * (xx - yy))
                    + sh[15] * (SH_C3[6] * x * (xx - 3.0 * yy));
            }
        }
    }
    [
        (c.x + 0.5).clamp(0.0, 1.0),
        (c.y + 0.5).clamp(0.0, 1.0),
        (c.z + 0.5).clamp(0.0, 1.0),
    ]
}

/// DC term to an 8-bit RGB triple (point-cloud export).
pub fn dc_to_rgb8(sh0: &Vector3<f64>) -> [u8; 3] {
    let map = |v: f64| ((0.5 + SH_C0 * v).clamp(0.0, 1.0) * 255.0).round() as u8;
    [map(sh0.x), map(sh0.y), map(sh0.z)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_round_trip() {
        let rgb = Vector3::new(0.8, 0.2, 0.5);
        let dc = rgb_to_dc(rgb);
        let back = eval_color(&[dc], &Vector3::z());
        assert!((back[0] - 0.8).abs() < 1e-12);
        assert!((back[1] - 0.2).abs() < 1e-12);
        assert!((back[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mid_gray_dc_is_128() {
        let dc = rgb_to_dc(Vector3::repeat(0.5));
        assert_eq!(dc, Vector3::zeros());
        assert_eq!(dc_to_rgb8(&dc), [128, 128, 128]);
    }

    #[test]
    fn degree1_varies_with_direction() {
        let mut sh = vec![Vector3::zeros(); 4];
        sh[3] = Vector3::new(1.0, 0.0, 0.0); // the -x basis slot
        let plus_x = eval_color(&sh, &Vector3::x());
        let minus_x = eval_color(&sh, &(-Vector3::x()));
        assert!((plus_x[0] - (0.5 - SH_C1)).abs() < 1e-12);
        assert!((minus_x[0] - (0.5 + SH_C1)).abs() < 1e-12);
    }
}
