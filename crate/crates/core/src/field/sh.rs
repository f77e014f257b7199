//! Real spherical harmonics up to degree 3.
//!
//! Basis functions are ordered band-major: `l` ascending, and within a band
//! `m` runs from `-l` to `l`. Signs follow the Condon-Shortley convention,
//! which is also what the usual Gaussian-splatting shaders use, so
//! coefficients exchanged with those tools need no conversion.

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: u32 = 3;
pub const MAX_SH_COEFFS: usize = 16;

pub(crate) const C0: f64 = 0.282_094_791_773_878_14;
pub(crate) const C1: f64 = 0.488_602_511_902_919_9;
pub(crate) const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub(crate) const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per color channel at `degree`.
pub const fn num_coeffs(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

pub fn check_degree(degree: u32) -> Result<()> {
    if degree > MAX_SH_DEGREE {
        Err(Error::UnsupportedShDegree(degree))
    } else {
        Ok(())
    }
}

/// Result of [`sh_basis_eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShBasis {
    pub values: Vec<f64>,
    /// Set when the input direction was not unit length and had to be
    /// normalized first.
    pub renormalized: bool,
}

/// Evaluates the `(K+1)^2` real SH basis functions at `direction`.
pub fn sh_basis_eval(direction: [f64; 3], degree: u32) -> Result<ShBasis> {
    check_degree(degree)?;
    let n = norm3(direction);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidInput(format!(
            "direction {direction:?} cannot be normalized"
        )));
    }
    let renormalized = (n - 1.0).abs() > 1e-6;
    let d = if renormalized {
        [direction[0] / n, direction[1] / n, direction[2] / n]
    } else {
        direction
    };
    let mut out = [0.0; MAX_SH_COEFFS];
    eval_basis(d, degree, &mut out);
    Ok(ShBasis {
        values: out[..num_coeffs(degree)].to_vec(),
        renormalized,
    })
}

#[inline]
pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Fills `out[..num_coeffs(degree)]`; `d` must already be unit length.
pub(crate) fn eval_basis(d: [f64; 3], degree: u32, out: &mut [f64; MAX_SH_COEFFS]) {
    let [x, y, z] = d;
    out[0] = C0;
    if degree < 1 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = C2[0] * xy;
    out[5] = C2[1] * yz;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * xz;
    out[8] = C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * xy * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components, treating `x, y, z` as independent.
pub(crate) fn eval_basis_grad(d: [f64; 3], degree: u32, out: &mut [[f64; 3]; MAX_SH_COEFFS]) {
    let [x, y, z] = d;
    out[0] = [0.0; 3];
    if degree < 1 {
        return;
    }
    out[1] = [0.0, -C1, 0.0];
    out[2] = [0.0, 0.0, C1];
    out[3] = [-C1, 0.0, 0.0];
    if degree < 2 {
        return;
    }
    out[4] = [C2[0] * y, C2[0] * x, 0.0];
    out[5] = [0.0, C2[1] * z, C2[1] * y];
    out[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
    out[7] = [C2[3] * z, 0.0, C2[3] * x];
    out[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    if degree < 3 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[9] = [6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
    out[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
    out[11] = [
        -2.0 * C3[2] * x * y,
        C3[2] * (4.0 * zz - xx - 3.0 * yy),
        8.0 * C3[2] * y * z,
    ];
    out[12] = [
        -6.0 * C3[3] * x * z,
        -6.0 * C3[3] * y * z,
        C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    out[13] = [
        C3[4] * (4.0 * zz - 3.0 * xx - yy),
        -2.0 * C3[4] * x * y,
        8.0 * C3[4] * x * z,
    ];
    out[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
    out[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // Independent oracle: Y_lm from associated Legendre polynomials in
    // spherical coordinates (Condon-Shortley phase included in P_l^m).
    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    fn assoc_legendre(l: u32, m: u32, x: f64) -> f64 {
        let mut pmm = 1.0;
        if m > 0 {
            let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
            let mut fact = 1.0;
            for _ in 0..m {
                pmm *= -fact * somx2;
                fact += 2.0;
            }
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2.0 * ll as f64 - 1.0) * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    fn oracle(l: u32, m: i32, d: [f64; 3]) -> f64 {
        let theta = d[2].clamp(-1.0, 1.0).acos();
        let phi = d[1].atan2(d[0]);
        let am = m.unsigned_abs();
        let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
        let p = assoc_legendre(l, am, theta.cos());
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => k * p,
            std::cmp::Ordering::Greater => 2f64.sqrt() * k * (m as f64 * phi).cos() * p,
            std::cmp::Ordering::Less => 2f64.sqrt() * k * (am as f64 * phi).sin() * p,
        }
    }

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = norm3(v);
        [v[0] / n, v[1] / n, v[2] / n]
    }

    #[test]
    fn degree_zero_is_constant() {
        let b = sh_basis_eval([0.0, 0.0, 1.0], 0).unwrap();
        assert_eq!(b.values.len(), 1);
        assert!((b.values[0] - 0.282_094_8).abs() < 1e-7);
        assert!((b.values[0] - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-15);
        let a = sh_basis_eval([1.0, 0.0, 0.0], 0).unwrap();
        let c = sh_basis_eval([-1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(a.values, c.values);
    }

    #[test]
    fn band_one_on_z_axis() {
        let b = sh_basis_eval([0.0, 0.0, 1.0], 1).unwrap();
        assert_eq!(b.values.len(), 4);
        let expected = [
            oracle(1, -1, [0.0, 0.0, 1.0]),
            oracle(1, 0, [0.0, 0.0, 1.0]),
            oracle(1, 1, [0.0, 0.0, 1.0]),
        ];
        for (got, want) in b.values[1..].iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((b.values[2] - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_legendre_table_all_bands() {
        let dirs = [
            [0.3, -0.5, 0.8],
            [-0.9, 0.1, 0.2],
            [0.0, 1.0, 0.0],
            [0.577, 0.577, -0.577],
            [-0.2, -0.7, -0.4],
        ];
        for d in dirs {
            let d = unit(d);
            let b = sh_basis_eval(d, 3).unwrap();
            let mut i = 0;
            for l in 0..=3u32 {
                for m in -(l as i32)..=(l as i32) {
                    let want = oracle(l, m, d);
                    assert!(
                        (b.values[i] - want).abs() < 1e-12,
                        "l={l} m={m}: {} vs {want}",
                        b.values[i]
                    );
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = [0.31, -0.47, 0.62];
        let mut g = [[0.0; 3]; MAX_SH_COEFFS];
        eval_basis_grad(d, 3, &mut g);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += h;
            m[axis] -= h;
            let mut bp = [0.0; MAX_SH_COEFFS];
            let mut bm = [0.0; MAX_SH_COEFFS];
            eval_basis(p, 3, &mut bp);
            eval_basis(m, 3, &mut bm);
            for k in 0..MAX_SH_COEFFS {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "basis {k} axis {axis}");
            }
        }
    }

    #[test]
    fn non_unit_direction_is_flagged() {
        let b = sh_basis_eval([0.0, 0.0, 2.0], 1).unwrap();
        assert!(b.renormalized);
        let u = sh_basis_eval([0.0, 0.0, 1.0], 1).unwrap();
        assert!(!u.renormalized);
        assert_eq!(b.values, u.values);
    }

    #[test]
    fn unsupported_degree() {
        assert!(matches!(
            sh_basis_eval([0.0, 0.0, 1.0], 4),
            Err(Error::UnsupportedShDegree(4))
        ));
    }

    #[test]
    fn coefficient_count() {
        for k in 0..=3 {
            let b = sh_basis_eval([0.0, 1.0, 0.0], k).unwrap();
            assert_eq!(b.values.len(), num_coeffs(k));
            assert_eq!(b.values[0], C0);
        }
    }
}
