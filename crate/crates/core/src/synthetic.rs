//! Seeded generators for synthetic scenes, point maps and correspondences.
//! Used by the self-test command and by the test suites.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::field::sh::C0;
use crate::field::{num_coeffs, SemanticGaussian, SemanticGaussianField};
use crate::image::Image;
use crate::loss::PointMap;
use crate::raster::Camera;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub feature_dim: usize,
    pub sh_degree: u32,
    /// Depth range of the Gaussian centers in front of the camera.
    pub depth: (f64, f64),
    /// Screen-space standard deviation range of the footprints, in pixels.
    pub footprint_px: (f64, f64),
    pub opacity_logit: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            gaussians: 8,
            width: 8,
            height: 8,
            focal: 10.0,
            feature_dim: 4,
            sh_degree: 3,
            depth: (2.0, 4.0),
            footprint_px: (0.8, 2.5),
            opacity_logit: (-1.5, 1.5),
        }
    }
}

fn unit_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

/// Random field in front of `cam` whose footprints land inside the image.
/// SH coefficients keep colors inside `[0, 1]` for most view directions.
pub fn random_field(rng: &mut impl Rng, cam: &Camera, cfg: &SceneConfig) -> Result<SemanticGaussianField> {
    let k = num_coeffs(cfg.sh_degree);
    let inv_r = cam.rotation.transpose();
    let mut gs = Vec::with_capacity(cfg.gaussians);
    for _ in 0..cfg.gaussians {
        let z = rng.gen_range(cfg.depth.0..cfg.depth.1);
        let u = rng.gen_range(0.15..0.85) * cam.width as f64;
        let v = rng.gen_range(0.15..0.85) * cam.height as f64;
        let p_cam = cam.ray(u, v) * z;
        let mu = inv_r * (p_cam - cam.translation);
        let log_scale: [f64; 3] = std::array::from_fn(|_| {
            let px = rng.gen_range(cfg.footprint_px.0..cfg.footprint_px.1);
            (px * z / cam.fx).ln()
        });
        let mut sh = vec![[0.0; 3]; k];
        for ch in 0..3 {
            sh[0][ch] = rng.gen_range(0.25..0.75) / C0;
        }
        for c in sh.iter_mut().skip(1) {
            for ch in 0..3 {
                c[ch] = rng.gen_range(-0.08..0.08);
            }
        }
        let semantic = (0..cfg.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opacity = rng.gen_range(cfg.opacity_logit.0..cfg.opacity_logit.1);
        gs.push(SemanticGaussian::new(
            [mu.x, mu.y, mu.z],
            log_scale,
            unit_quaternion(rng),
            opacity,
            sh,
            semantic,
        )?);
    }
    SemanticGaussianField::new(cfg.sh_degree, cfg.feature_dim, gs)
}

/// A camera at a random small rigid offset from the identity pose.
pub fn random_camera(rng: &mut impl Rng, cfg: &SceneConfig, max_angle: f64, max_shift: f64) -> Result<Camera> {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let angle = rng.gen_range(-max_angle..max_angle);
    let r = if axis.norm() > 1e-6 {
        *Rotation3::from_scaled_axis(axis.normalize() * angle).matrix()
    } else {
        Matrix3::identity()
    };
    let t = Vector3::new(
        rng.gen_range(-max_shift..max_shift),
        rng.gen_range(-max_shift..max_shift),
        rng.gen_range(-max_shift..max_shift),
    );
    Camera::centered(cfg.focal, cfg.width, cfg.height)?.with_pose(r, t)
}

/// Random scene: a perturbed camera and a field visible from it.
pub fn random_scene(seed: u64, cfg: &SceneConfig) -> Result<(SemanticGaussianField, Camera)> {
    let mut r = rng(seed);
    let cam = random_camera(&mut r, cfg, 0.15, 0.2)?;
    let field = random_field(&mut r, &cam, cfg)?;
    Ok((field, cam))
}

/// Two-view scene for the reconstruction pipeline. The first camera sits at
/// the world origin, the second at a small random offset, and the Gaussians
/// are large and mostly opaque so both views are densely covered.
pub fn two_view_scene(
    seed: u64,
    gaussians: usize,
    width: usize,
    height: usize,
    focal: f64,
) -> Result<(SemanticGaussianField, [Camera; 2])> {
    let mut r = rng(seed);
    let side = width.min(height) as f64;
    let cfg = SceneConfig {
        gaussians,
        width,
        height,
        focal,
        feature_dim: 4,
        sh_degree: 1,
        depth: (2.0, 4.0),
        footprint_px: (side / 8.0, side / 4.0),
        opacity_logit: (1.0, 3.0),
    };
    let first = Camera::centered(focal, width, height)?;
    let second = random_camera(&mut r, &cfg, 0.1, 0.3)?;
    let field = random_field(&mut r, &first, &cfg)?;
    Ok((field, [first, second]))
}

/// Random image with values drawn uniformly from `[lo, hi)`.
pub fn random_image(rng: &mut impl Rng, width: usize, height: usize, channels: usize, lo: f64, hi: f64) -> Image {
    Image::from_fn(width, height, channels, |_, _, _| rng.gen_range(lo..hi))
}

/// Point map of a camera's depth image, expressed in the frame of
/// `reference` (a world-to-camera transform); pixels whose rendered alpha is
/// below `min_alpha` are marked invalid with non-finite coordinates.
pub fn pointmap_from_depth(
    depth: &Image,
    alpha: &Image,
    cam: &Camera,
    reference: &Camera,
    min_alpha: f64,
) -> Result<PointMap> {
    let (w, h) = (cam.width, cam.height);
    let r_inv = cam.rotation.transpose();
    let mut points = Image::zeros(w, h, 3);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let a = alpha.pixel(p)[0];
            let d = depth.pixel(p)[0];
            if a < min_alpha || d <= 0.0 {
                points.pixel_mut(p).copy_from_slice(&[f64::NAN; 3]);
                continue;
            }
            // the blended depth is alpha-weighted; undo that for the true surface depth
            let z = d / a;
            let pc = cam.ray(x as f64, y as f64) * z;
            let pw = r_inv * (pc - cam.translation);
            let pr = reference.world_to_camera(&pw);
            points.pixel_mut(p).copy_from_slice(&[pr.x, pr.y, pr.z]);
            valid[p] = true;
        }
    }
    PointMap::new(points, Image::filled(w, h, 1, 1.0), valid)
}

/// Exact pinhole point map with the given per-pixel depth function, in the
/// camera's own frame.
pub fn pinhole_pointmap(cam: &Camera, mut depth: impl FnMut(usize, usize) -> f64) -> Result<PointMap> {
    let (w, h) = (cam.width, cam.height);
    let mut points = Image::zeros(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let d = depth(x, y);
            let pc = cam.ray(x as f64, y as f64) * d;
            points.pixel_mut(y * w + x).copy_from_slice(&[pc.x, pc.y, pc.z]);
        }
    }
    PointMap::new(points, Image::filled(w, h, 1, 1.0), vec![true; w * h])
}

/// 3D-2D correspondences for a camera pose, with a fraction replaced by
/// uniformly random pixel outliers. Returns `(points, pixels, is_inlier)`.
pub fn pnp_correspondences(
    rng: &mut impl Rng,
    cam: &Camera,
    count: usize,
    outlier_fraction: f64,
    depth: (f64, f64),
) -> (Vec<Vector3<f64>>, Vec<[f64; 2]>, Vec<bool>) {
    let r_inv = cam.rotation.transpose();
    let n_out = (count as f64 * outlier_fraction).round() as usize;
    let mut pts = Vec::with_capacity(count);
    let mut pix = Vec::with_capacity(count);
    let mut inl = Vec::with_capacity(count);
    for i in 0..count {
        let u = rng.gen_range(0.0..cam.width as f64);
        let v = rng.gen_range(0.0..cam.height as f64);
        let z = rng.gen_range(depth.0..depth.1);
        let pc = cam.ray(u, v) * z;
        pts.push(r_inv * (pc - cam.translation));
        if i < n_out {
            pix.push([
                rng.gen_range(0.0..cam.width as f64),
                rng.gen_range(0.0..cam.height as f64),
            ]);
            inl.push(false);
        } else {
            pix.push([u, v]);
            inl.push(true);
        }
    }
    (pts, pix, inl)
}
