use nalgebra::Matrix3;

use super::normalize_quaternion;
use crate::error::Result;

/// Rotation matrix of the (normalized) quaternion `(w, x, y, z)`.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let q = normalize_quaternion(q)?;
    Ok(rotation_unit(q))
}

pub(crate) fn rotation_unit(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion.
pub(crate) fn quaternion_grad(q_raw: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = (q_raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let [w, x, y, z] = q_raw.map(|v| v / n);
    let gu = [
        2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]),
        2.0 * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]),
        2.0 * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]),
        2.0 * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]),
    ];
    // d(q/|q|)/dq = (I - u u^T) / |q|
    let u = [w, x, y, z];
    let dot: f64 = gu.iter().zip(&u).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (gu[i] - dot * u[i]) / n)
}

/// `Sigma = R diag(exp(s))^2 R^T` for log-scale `s` and quaternion `r`.
pub fn covariance_from_scale_rotation(log_scale: [f64; 3], rotation: [f64; 4]) -> Result<Matrix3<f64>> {
    let r = rotation_from_quaternion(rotation)?;
    Ok(covariance_with_rotation(log_scale, &r))
}

pub(crate) fn covariance_with_rotation(log_scale: [f64; 3], r: &Matrix3<f64>) -> Matrix3<f64> {
    let d = Matrix3::from_diagonal(&log_scale.map(|s| (2.0 * s).exp()).into());
    let sigma = r * d * r.transpose();
    // exact symmetry regardless of rounding
    (sigma + sigma.transpose()) * 0.5
}
