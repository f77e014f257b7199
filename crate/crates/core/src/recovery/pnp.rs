use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Vector3, Vector6, SVD};
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::synthetic::rng;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Shared focal with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    fn bearing(&self, px: [f64; 2]) -> Vector3<f64> {
        Vector3::new((px[0] - self.cx) / self.fx, (px[1] - self.cy) / self.fy, 1.0).normalize()
    }

    fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if !(p.z > 0.0) {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub threshold_px: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 256,
            threshold_px: 2.0,
            seed: 0,
        }
    }
}

/// World-to-camera transform `x_cam = R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub inlier_ratio: f64,
    pub inliers: Vec<bool>,
}

const MIN_POINTS: usize = 4;
const REFINE_ROUNDS: usize = 3;
const GN_ITERS: usize = 15;

fn reprojection_error(k: &Intrinsics, r: &Matrix3<f64>, t: &Vector3<f64>, p: &Vector3<f64>, px: [f64; 2]) -> f64 {
    match k.project(&(r * p + t)) {
        Some(q) => (q[0] - px[0]).hypot(q[1] - px[1]),
        None => f64::INFINITY,
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval(c: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &a in c.iter().rev() {
        d = d * x + v;
        v = v * x + a;
    }
    (v, d)
}

/// Real roots of `c[0] + c[1] x + ... + c[4] x^4`, polished by Newton steps.
fn quartic_real_roots(c: &[f64; 5]) -> Vec<f64> {
    let lead = c[4];
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(lead.abs() > 1e-12 * scale) {
        return Vec::new();
    }
    let mut comp = Matrix4::zeros();
    for i in 0..3 {
        comp[(i + 1, i)] = 1.0;
    }
    for i in 0..4 {
        comp[(i, 3)] = -c[i] / lead;
    }
    comp.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let (v, d) = poly_eval(c, x);
                if d == 0.0 {
                    break;
                }
                let step = v / d;
                x -= step;
                if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Rigid transform `(R, t)` with `q_k ~ R p_k + t` in the least-squares sense.
pub(crate) fn kabsch(p: &[Vector3<f64>], q: &[Vector3<f64>]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = p.len() as f64;
    let cp = p.iter().sum::<Vector3<f64>>() / n;
    let cq = q.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += (a - cp) * (b - cq).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    if !r.iter().all(|x| x.is_finite()) {
        return None;
    }
    Some((r, cq - r * cp))
}

/// Pose candidates from three world points and their unit bearings.
pub fn p3p(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if !(a2 > 0.0 && b2 > 0.0 && c2 > 0.0) {
        return Vec::new();
    }
    let cos_a = bearings[1].dot(&bearings[2]);
    let cos_b = bearings[0].dot(&bearings[2]);
    let cos_g = bearings[0].dot(&bearings[1]);

    // distances s_k along the bearings; u = s2/s1, v = s3/s1. Eliminating
    // u^2 gives u = N(v) / D(v), then substituting into
    // 1 + u^2 - 2u cos_g = (c^2/b^2)(1 + v^2 - 2v cos_b) yields a quartic.
    let k = (a2 - c2) / b2;
    let num = [1.0 + k, -2.0 * k * cos_b, k - 1.0];
    let den = [2.0 * cos_g, -2.0 * cos_a];
    let base = [1.0, -2.0 * cos_b, 1.0];
    let d2 = poly_mul(&den, &den);
    let n2 = poly_mul(&num, &num);
    let nd = poly_mul(&num, &den);
    let bd2 = poly_mul(&base, &d2);
    let mut quartic = [0.0; 5];
    for i in 0..5 {
        let get = |p: &[f64]| p.get(i).copied().unwrap_or(0.0);
        quartic[i] = get(&d2) + get(&n2) - 2.0 * cos_g * get(&nd) - c2 / b2 * get(&bd2);
    }

    let mut out = Vec::new();
    for v in quartic_real_roots(&quartic) {
        let (dv, _) = poly_eval(&den, v);
        if dv.abs() < 1e-12 || !(v > 0.0) {
            continue;
        }
        let u = poly_eval(&num, v).0 / dv;
        let q = 1.0 + v * v - 2.0 * v * cos_b;
        if !(u > 0.0) || !(q > 0.0) {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let cam = [bearings[0] * s1, bearings[1] * (u * s1), bearings[2] * (v * s1)];
        if let Some(pose) = kabsch(world, &cam) {
            out.push(pose);
        }
    }
    out
}

fn count_inliers(
    k: &Intrinsics,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    points: &[Vector3<f64>],
    pixels: &[[f64; 2]],
    thr: f64,
) -> Vec<bool> {
    points
        .iter()
        .zip(pixels)
        .map(|(p, px)| reprojection_error(k, r, t, p, *px) < thr)
        .collect()
}

/// Levenberg-Marquardt on the reprojection error with a left-multiplied
/// rotation increment.
fn refine(
    k: &Intrinsics,
    mut r: Matrix3<f64>,
    mut t: Vector3<f64>,
    points: &[Vector3<f64>],
    pixels: &[[f64; 2]],
) -> (Matrix3<f64>, Vector3<f64>) {
    let cost = |r: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
        points
            .iter()
            .zip(pixels)
            .map(|(p, px)| reprojection_error(k, r, t, p, *px).powi(2))
            .sum()
    };
    let mut lambda = 1e-6;
    let mut current = cost(&r, &t);
    for _ in 0..GN_ITERS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p, px) in points.iter().zip(pixels) {
            let c = r * p + t;
            if !(c.z > 0.0) {
                continue;
            }
            let (x, y, z) = (c.x, c.y, c.z);
            let res = [k.fx * x / z + k.cx - px[0], k.fy * y / z + k.cy - px[1]];
            // d(pixel)/d(c)
            let dp = [
                [k.fx / z, 0.0, -k.fx * x / (z * z)],
                [0.0, k.fy / z, -k.fy * y / (z * z)],
            ];
            // dc = -[c]x dtheta + dt
            let skew = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0);
            for row in 0..2 {
                let d = Vector3::new(dp[row][0], dp[row][1], dp[row][2]);
                let jr = -(skew.transpose() * d);
                let j = Vector6::new(jr.x, jr.y, jr.z, d.x, d.y, d.z);
                jtj += j * j.transpose();
                jtr += j * res[row];
            }
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let dr = Rotation3::from_scaled_axis(Vector3::new(step[0], step[1], step[2]));
            let r_new = dr.matrix() * r;
            let t_new = dr.matrix() * t + Vector3::new(step[3], step[4], step[5]);
            let c_new = cost(&r_new, &t_new);
            if c_new <= current {
                let done = current - c_new <= 1e-15 * (1.0 + current);
                r = r_new;
                t = t_new;
                current = c_new;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (orthonormalize(&r), t)
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*r, true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => {
            let d = (u * vt).determinant().signum();
            u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt
        }
        _ => *r,
    }
}

/// RANSAC over P3P hypotheses followed by inlier refinement.
///
/// Each hypothesis uses four distinct correspondences: three for the
/// minimal solver and the fourth to choose among its solutions. Hypotheses
/// are scored in parallel and selected by inlier count, then by sample
/// index, so the output depends only on the seed.
pub fn estimate_relative_pose(
    points: &[Vector3<f64>],
    pixels: &[[f64; 2]],
    k: &Intrinsics,
    cfg: &RansacConfig,
) -> Result<RelativePose> {
    if points.len() != pixels.len() {
        return Err(Error::shape("correspondences", points.len(), pixels.len()));
    }
    let n = points.len();
    if n < MIN_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_POINTS,
            got: n,
        });
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite()))
        || pixels.iter().any(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(Error::InvalidInput("correspondences contain non-finite values".into()));
    }
    if !(k.fx > 0.0 && k.fy > 0.0) {
        return Err(Error::InvalidInput(
            "intrinsics must have positive focal lengths".into(),
        ));
    }

    let mut r = rng(cfg.seed);
    let samples: Vec<Vec<usize>> = (0..cfg.iterations).map(|_| sample(&mut r, n, 4).into_vec()).collect();
    let bearings: Vec<Vector3<f64>> = pixels.iter().map(|p| k.bearing(*p)).collect();

    let scored: Vec<Option<(usize, Matrix3<f64>, Vector3<f64>)>> = samples
        .par_iter()
        .map(|s| {
            let world = [points[s[0]], points[s[1]], points[s[2]]];
            let rays = [bearings[s[0]], bearings[s[1]], bearings[s[2]]];
            let best = p3p(&world, &rays).into_iter().min_by(|a, b| {
                let ea = reprojection_error(k, &a.0, &a.1, &points[s[3]], pixels[s[3]]);
                let eb = reprojection_error(k, &b.0, &b.1, &points[s[3]], pixels[s[3]]);
                ea.total_cmp(&eb)
            })?;
            let count = count_inliers(k, &best.0, &best.1, points, pixels, cfg.threshold_px)
                .iter()
                .filter(|v| **v)
                .count();
            Some((count, best.0, best.1))
        })
        .collect();

    let mut best: Option<&(usize, Matrix3<f64>, Vector3<f64>)> = None;
    for h in scored.iter().flatten() {
        if best.is_none_or(|b| h.0 > b.0) {
            best = Some(h);
        }
    }
    let best_count = best.map_or(0, |b| b.0);
    let Some(&(_, mut rot, mut trans)) = best.filter(|b| b.0 >= MIN_POINTS) else {
        return Err(Error::NoConsensus {
            best_inliers: best_count,
            needed: MIN_POINTS,
        });
    };

    let mut inliers = count_inliers(k, &rot, &trans, points, pixels, cfg.threshold_px);
    for _ in 0..REFINE_ROUNDS {
        let (p_in, x_in): (Vec<Vector3<f64>>, Vec<[f64; 2]>) = points
            .iter()
            .zip(pixels)
            .zip(&inliers)
            .filter(|(_, i)| **i)
            .map(|((p, x), _)| (*p, *x))
            .unzip();
        let (r_new, t_new) = refine(k, rot, trans, &p_in, &x_in);
        let next = count_inliers(k, &r_new, &t_new, points, pixels, cfg.threshold_px);
        if next.iter().filter(|v| **v).count() < MIN_POINTS {
            break;
        }
        rot = r_new;
        trans = t_new;
        let same = next == inliers;
        inliers = next;
        if same {
            break;
        }
    }
    if !rot.iter().chain(trans.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numerical("pose refinement produced non-finite values".into()));
    }
    let count = inliers.iter().filter(|v| **v).count();
    Ok(RelativePose {
        rotation: rot,
        translation: trans,
        inlier_ratio: count as f64 / n as f64,
        inliers,
    })
}
