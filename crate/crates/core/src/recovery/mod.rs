//! Camera intrinsics and relative pose from pixel-aligned point maps.
//!
//! The focal length of each view comes from a Weiszfeld fit of the point
//! map's projections to the centered pixel grid. The relative pose of the
//! second view comes from RANSAC over P3P hypotheses.

mod focal;
mod pnp;

pub use focal::{average_focal, estimate_focal_weiszfeld, FocalEstimate, WeiszfeldConfig, MIN_DEPTH};
pub use pnp::{estimate_relative_pose, p3p, Intrinsics, RansacConfig, RelativePose};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::PointMap;
use crate::raster::Camera;

/// Lower middle element for even counts.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

fn masked_median(depth: &Image, mask: Option<&[bool]>, what: &str) -> Result<f64> {
    let mut vals: Vec<f64> = depth
        .data()
        .iter()
        .enumerate()
        .filter(|(p, _)| mask.is_none_or(|m| m[*p]))
        .map(|(_, v)| *v)
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what} depth is non-finite inside the mask"
        )));
    }
    let m = lower_median(&mut vals).ok_or_else(|| Error::EmptyInput("depth mask selects no pixels".into()))?;
    if !(m > 0.0) {
        return Err(Error::Degenerate(format!("{what} depth median is {m}")));
    }
    Ok(m)
}

/// Rescales `pred` so its masked median matches that of `gt`. Returns the
/// aligned prediction and the factor applied.
pub fn align_depth_median(pred: &Image, gt: &Image, mask: Option<&[bool]>) -> Result<(Image, f64)> {
    pred.check_same_shape(gt, "depth maps")?;
    if pred.channels() != 1 {
        return Err(Error::shape("depth map", "HxWx1", pred.shape_string()));
    }
    if let Some(m) = mask {
        if m.len() != pred.num_pixels() {
            return Err(Error::shape("depth mask", pred.num_pixels(), m.len()));
        }
    }
    let scale = masked_median(gt, mask, "ground-truth")? / masked_median(pred, mask, "predicted")?;
    Ok((pred.scaled(scale), scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    pub weiszfeld: WeiszfeldConfig,
    pub ransac: RansacConfig,
    /// Fraction of valid pixels, by descending confidence, used for PnP.
    pub pnp_fraction: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            weiszfeld: WeiszfeldConfig::default(),
            ransac: RansacConfig::default(),
            pnp_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCameras {
    /// Reference view at the identity pose.
    pub first: Camera,
    pub second: Camera,
    pub focal: f64,
    pub focal_estimates: [FocalEstimate; 2],
    pub pose: RelativePose,
}

fn pnp_correspondences(pm: &PointMap, fraction: f64) -> (Vec<Vector3<f64>>, Vec<[f64; 2]>) {
    let w = pm.width();
    let mut idx: Vec<usize> = (0..pm.valid().len()).filter(|p| pm.valid()[*p]).collect();
    let conf = pm.confidence();
    idx.sort_by(|a, b| conf.pixel(*b)[0].total_cmp(&conf.pixel(*a)[0]).then(a.cmp(b)));
    let keep = ((idx.len() as f64 * fraction).ceil() as usize).min(idx.len());
    idx.truncate(keep);
    idx.sort_unstable();
    idx.iter()
        .map(|&p| {
            let q = pm.point(p);
            (Vector3::new(q[0], q[1], q[2]), [(p % w) as f64, (p / w) as f64])
        })
        .unzip()
}

/// Both cameras from the point maps of a view pair, each expressed in the
/// first camera's frame.
///
/// The first view's focal is fit directly. The second view is posed with
/// that focal, its points are moved into its own frame for a second focal
/// fit, and the pose is re-estimated with the averaged focal.
pub fn recover_cameras(pm1: &PointMap, pm2: &PointMap, cfg: &RecoveryConfig) -> Result<RecoveredCameras> {
    let (w1, h1) = (pm1.width(), pm1.height());
    let (w2, h2) = (pm2.width(), pm2.height());
    let f1 = estimate_focal_weiszfeld(pm1, None, &cfg.weiszfeld)?;

    let (pts, pix) = pnp_correspondences(pm2, cfg.pnp_fraction);
    let first_pose = estimate_relative_pose(&pts, &pix, &Intrinsics::centered(f1.focal, w2, h2), &cfg.ransac)?;

    let mut local = Image::zeros(w2, h2, 3);
    for p in 0..w2 * h2 {
        let q = pm2.point(p);
        let c = first_pose.rotation * Vector3::new(q[0], q[1], q[2]) + first_pose.translation;
        local.pixel_mut(p).copy_from_slice(&[c.x, c.y, c.z]);
    }
    let pm2_local = PointMap::new(local, pm2.confidence().clone(), pm2.valid().to_vec())?;
    let f2 = estimate_focal_weiszfeld(&pm2_local, None, &cfg.weiszfeld)?;

    let estimates = [f1, f2];
    let focal = average_focal(&estimates)?;
    let pose = estimate_relative_pose(&pts, &pix, &Intrinsics::centered(focal, w2, h2), &cfg.ransac)?;
    let first = Camera::centered(focal, w1, h1)?;
    let second = Camera::centered(focal, w2, h2)?.with_pose(pose.rotation, pose.translation)?;
    Ok(RecoveredCameras {
        first,
        second,
        focal,
        focal_estimates: estimates,
        pose,
    })
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}
