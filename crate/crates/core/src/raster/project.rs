//! Perspective projection of 3D Gaussians with first-order (EWA) covariance
//! propagation `cov2d = J W Sigma W^T J^T + floor * I`.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use super::camera::Camera;
use super::{LOW_PASS_FLOOR, NEAR_PLANE};
use crate::error::Result;
use crate::field::covariance::{covariance_with_rotation, rotation_unit};
use crate::field::sh::{eval_basis, norm3, MAX_SH_COEFFS};
use crate::field::{normalize_quaternion, num_coeffs, sigmoid, SemanticGaussian, SemanticGaussianField};

/// A Gaussian after projection into a specific camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2DGaussian {
    /// Position of the Gaussian in the input field.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// `[xx, xy, yy]` entries of the screen-space covariance, floor included.
    pub cov2d: [f64; 3],
    /// `[xx, xy, yy]` entries of `cov2d^-1`.
    pub conic: [f64; 3],
    pub view_depth: f64,
    /// 3-sigma footprint radius in pixels.
    pub radius: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub semantic: Vec<f64>,
}

/// Intermediate quantities of one projection, shared with the backward pass.
pub(crate) struct ProjectionTerms {
    pub cam_point: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub sigma3: Matrix3<f64>,
    /// `J W`: Jacobian of the pixel position with respect to the world center.
    pub jw: Matrix2x3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov2d: [f64; 3],
    /// Unit vector from the camera center to the Gaussian.
    pub view_dir: [f64; 3],
    pub view_dist: f64,
}

pub(crate) fn projection_terms(
    g: &SemanticGaussian,
    cam: &Camera,
    cam_center: &Vector3<f64>,
) -> Result<Option<ProjectionTerms>> {
    let mu = Vector3::from(g.center);
    let t = cam.world_to_camera(&mu);
    if t.z <= NEAR_PLANE {
        return Ok(None);
    }
    let rotation = rotation_unit(normalize_quaternion(g.rotation)?);
    let sigma3 = covariance_with_rotation(g.log_scale, &rotation);
    let (x, y, z) = (t.x, t.y, t.z);
    let jacobian = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let jw = jacobian * cam.rotation;
    let c = jw * sigma3 * jw.transpose();
    let cov2d = [
        c[(0, 0)] + LOW_PASS_FLOOR,
        0.5 * (c[(0, 1)] + c[(1, 0)]),
        c[(1, 1)] + LOW_PASS_FLOOR,
    ];
    let v = mu - cam_center;
    let view_dist = norm3([v.x, v.y, v.z]);
    let view_dir = [v.x / view_dist, v.y / view_dist, v.z / view_dist];
    Ok(Some(ProjectionTerms {
        cam_point: t,
        rotation,
        sigma3,
        jw,
        jacobian,
        cov2d,
        view_dir,
        view_dist,
    }))
}

pub(crate) fn invert_sym2(c: [f64; 3]) -> [f64; 3] {
    let det = c[0] * c[2] - c[1] * c[1];
    [c[2] / det, -c[1] / det, c[0] / det]
}

pub(crate) fn footprint_radius(c: [f64; 3]) -> f64 {
    let mid = 0.5 * (c[0] + c[2]);
    let half = 0.5 * (c[0] - c[2]);
    let lambda_max = mid + (half * half + c[1] * c[1]).sqrt();
    3.0 * lambda_max.sqrt()
}

/// Unclamped SH color evaluated with at most `degree` bands.
pub(crate) fn shade(g: &SemanticGaussian, dir: [f64; 3], degree: u32) -> [f64; 3] {
    let mut basis = [0.0; MAX_SH_COEFFS];
    eval_basis(dir, degree, &mut basis);
    let mut c = [0.0; 3];
    for (coeff, b) in g.sh.iter().zip(&basis[..num_coeffs(degree)]) {
        for ch in 0..3 {
            c[ch] += coeff[ch] * b;
        }
    }
    c
}

/// Projects every Gaussian in front of the near plane and returns them
/// sorted front to back, ties broken by input index.
pub fn project_gaussians(field: &SemanticGaussianField, cam: &Camera) -> Result<Vec<Projected2DGaussian>> {
    project_with_degree(field, cam, field.sh_degree())
}

pub(crate) fn project_with_degree(
    field: &SemanticGaussianField,
    cam: &Camera,
    sh_degree: u32,
) -> Result<Vec<Projected2DGaussian>> {
    let center = cam.center();
    let mut out = Vec::with_capacity(field.len());
    for (index, g) in field.gaussians().iter().enumerate() {
        let Some(terms) = projection_terms(g, cam, &center)? else {
            continue;
        };
        let t = terms.cam_point;
        let color = shade(g, terms.view_dir, sh_degree).map(|c| c.clamp(0.0, 1.0));
        out.push(Projected2DGaussian {
            index,
            mean2d: cam.project_camera_point(&t),
            cov2d: terms.cov2d,
            conic: invert_sym2(terms.cov2d),
            view_depth: t.z,
            radius: footprint_radius(terms.cov2d),
            opacity: sigmoid(g.opacity_logit),
            color,
            semantic: g.semantic.clone(),
        });
    }
    out.sort_by(|a, b| a.view_depth.total_cmp(&b.view_depth).then(a.index.cmp(&b.index)));
    Ok(out)
}
