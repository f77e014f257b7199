//! Reverse-mode pass over the blending equations.
//!
//! Per pixel the blend is replayed front to back to recover each splat's
//! alpha and transmittance, then walked back to front with the suffix sum
//! `R_{i-1} = f_i a_i + (1 - a_i) R_i`, which gives
//! `dL/da_i = T_i (f_i - R_i)` without dividing by `1 - a_i`.
//! Screen-space gradients are accumulated per tile and merged in tile
//! order, then chained through the projection to the 3D parameters.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::camera::Camera;
use super::forward::{fingerprint, splat_alpha, ForwardState};
use super::project::{projection_terms, shade};
use crate::error::{Error, Result};
use crate::field::covariance::quaternion_grad;
use crate::field::sh::{eval_basis, eval_basis_grad, MAX_SH_COEFFS};
use crate::field::{num_coeffs, sigmoid, SemanticGaussianField};
use crate::image::Image;

/// Gradients of a scalar loss with respect to the render outputs. Missing
/// channels are treated as zero.
#[derive(Debug, Clone, Default)]
pub struct UpstreamGradients {
    pub color: Option<Image>,
    pub depth: Option<Image>,
    pub alpha: Option<Image>,
    pub feature: Option<Image>,
}

/// Gradient for one Gaussian, laid out like [`crate::field::SemanticGaussian`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGradient {
    pub center: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub sh: Vec<[f64; 3]>,
    pub semantic: Vec<f64>,
}

impl GaussianGradient {
    fn zeros(n_sh: usize, n_feat: usize) -> Self {
        Self {
            center: [0.0; 3],
            log_scale: [0.0; 3],
            rotation: [0.0; 4],
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]; n_sh],
            semantic: vec![0.0; n_feat],
        }
    }

    /// Same ordering as [`crate::field::SemanticGaussian::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(11 + 3 * self.sh.len() + self.semantic.len());
        v.extend_from_slice(&self.center);
        v.extend_from_slice(&self.log_scale);
        v.extend_from_slice(&self.rotation);
        v.push(self.opacity_logit);
        for c in &self.sh {
            v.extend_from_slice(c);
        }
        v.extend_from_slice(&self.semantic);
        v
    }
}

/// Screen-space gradient of one projected splat.
#[derive(Debug, Clone)]
struct SplatGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    semantic: Vec<f64>,
}

impl SplatGrad {
    fn zeros(n_feat: usize) -> Self {
        Self {
            mean2d: [0.0; 2],
            conic: [0.0; 3],
            opacity: 0.0,
            color: [0.0; 3],
            depth: 0.0,
            semantic: vec![0.0; n_feat],
        }
    }

    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
        for (a, b) in self.semantic.iter_mut().zip(&o.semantic) {
            *a += b;
        }
    }
}

fn check_upstream(img: &Option<Image>, cam: &Camera, channels: usize, what: &'static str) -> Result<()> {
    if let Some(img) = img {
        if img.width() != cam.width || img.height() != cam.height || img.channels() != channels {
            return Err(Error::shape(
                what,
                format!("{}x{}x{}", cam.height, cam.width, channels),
                img.shape_string(),
            ));
        }
    }
    Ok(())
}

#[inline]
fn read<'a>(img: &'a Option<Image>, p: usize) -> Option<&'a [f64]> {
    img.as_ref().map(|i| i.pixel(p))
}

fn backward_tile(
    t: usize,
    state: &ForwardState,
    cam: &Camera,
    up: &UpstreamGradients,
    n_feat: usize,
) -> Vec<SplatGrad> {
    let list = &state.grid.lists[t];
    let mut acc = vec![SplatGrad::zeros(n_feat); list.len()];
    if list.is_empty() {
        return acc;
    }
    let (x0, y0, x1, y1) = state.grid.bounds(t, cam.width, cam.height);
    let bg = state.background;
    let mut alphas = Vec::with_capacity(list.len());
    let mut trans = Vec::with_capacity(list.len());
    for y in y0..y1 {
        for x in x0..x1 {
            let p = y * cam.width + x;
            let n = state.n_contrib[p] as usize;
            if n == 0 {
                continue;
            }
            let g_color = read(&up.color, p);
            let g_depth = read(&up.depth, p).map_or(0.0, |v| v[0]);
            let g_alpha = read(&up.alpha, p).map_or(0.0, |v| v[0]);
            let g_feat = read(&up.feature, p);
            let (px, py) = (x as f64, y as f64);

            alphas.clear();
            trans.clear();
            let mut tr = 1.0;
            for &gi in &list[..n] {
                let (a, w, d) = splat_alpha(&state.projected[gi as usize], px, py);
                alphas.push((a, w, d));
                trans.push(tr);
                tr *= 1.0 - a;
            }

            let mut suffix = g_color.map_or(0.0, |g| g[0] * bg[0] + g[1] * bg[1] + g[2] * bg[2]);
            for k in (0..n).rev() {
                let sp = &state.projected[list[k] as usize];
                let (a, w, [dx, dy]) = alphas[k];
                let tk = trans[k];
                let weight = a * tk;
                let mut f = g_alpha + g_depth * sp.view_depth;
                let ga = &mut acc[k];
                if let Some(gc) = g_color {
                    for ch in 0..3 {
                        f += gc[ch] * sp.color[ch];
                        ga.color[ch] += gc[ch] * weight;
                    }
                }
                if let Some(gf) = g_feat {
                    for j in 0..n_feat {
                        f += gf[j] * sp.semantic[j];
                        ga.semantic[j] += gf[j] * weight;
                    }
                }
                ga.depth += g_depth * weight;

                let d_alpha = tk * (f - suffix);
                suffix = f * a + (1.0 - a) * suffix;

                ga.opacity += d_alpha * w;
                let d_q = -0.5 * w * sp.opacity * d_alpha;
                ga.conic[0] += d_q * dx * dx;
                ga.conic[1] += d_q * 2.0 * dx * dy;
                ga.conic[2] += d_q * dy * dy;
                let [ca, cb, cc] = sp.conic;
                ga.mean2d[0] -= d_q * 2.0 * (ca * dx + cb * dy);
                ga.mean2d[1] -= d_q * 2.0 * (cb * dx + cc * dy);
            }
        }
    }
    acc
}

/// Exact gradients of the blend with respect to every Gaussian parameter.
///
/// `state` must come from [`super::render`] on the same field, camera and
/// background; culled Gaussians receive zero gradient.
pub fn render_backward(
    field: &SemanticGaussianField,
    cam: &Camera,
    state: &ForwardState,
    upstream: &UpstreamGradients,
) -> Result<Vec<GaussianGradient>> {
    if fingerprint(field, cam, state.background, state.sh_degree) != state.fingerprint {
        return Err(Error::InvalidState(
            "field or camera differ from the ones used in the forward pass".into(),
        ));
    }
    let n_feat = field.feature_dim();
    check_upstream(&upstream.color, cam, 3, "color gradient")?;
    check_upstream(&upstream.depth, cam, 1, "depth gradient")?;
    check_upstream(&upstream.alpha, cam, 1, "alpha gradient")?;
    check_upstream(&upstream.feature, cam, n_feat, "feature gradient")?;

    let tile_ids: Vec<usize> = (0..state.grid.lists.len()).collect();
    let run = |t: &usize| backward_tile(*t, state, cam, upstream, n_feat);
    let per_tile: Vec<Vec<SplatGrad>> = if state.parallel {
        tile_ids.par_iter().map(run).collect()
    } else {
        tile_ids.iter().map(run).collect()
    };

    let mut splat_grads = vec![SplatGrad::zeros(n_feat); state.projected.len()];
    for (list, grads) in state.grid.lists.iter().zip(&per_tile) {
        for (&gi, g) in list.iter().zip(grads) {
            splat_grads[gi as usize].add(g);
        }
    }

    let n_sh = num_coeffs(field.sh_degree());
    let mut out = vec![GaussianGradient::zeros(n_sh, n_feat); field.len()];
    let center = cam.center();
    for (sp, sg) in state.projected.iter().zip(&splat_grads) {
        let g = &field.gaussians()[sp.index];
        let terms = projection_terms(g, cam, &center)?
            .ok_or_else(|| Error::InvalidState("projected gaussian is now culled".into()))?;
        let grad = &mut out[sp.index];

        grad.semantic.copy_from_slice(&sg.semantic);
        let o = sigmoid(g.opacity_logit);
        grad.opacity_logit = sg.opacity * o * (1.0 - o);

        // conic = cov2d^-1, so dL/dcov = -A dL/dA A (full-matrix form)
        let a = Matrix2::new(sp.conic[0], sp.conic[1], sp.conic[1], sp.conic[2]);
        let g_a = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
        let g_cov2d = -(a * g_a * a);

        let jw = terms.jw;
        let g_sigma3: Matrix3<f64> = jw.transpose() * g_cov2d * jw;
        let g_jw = 2.0 * g_cov2d * jw * terms.sigma3;
        let g_j = g_jw * cam.rotation.transpose();

        let t = terms.cam_point;
        let (x, y, z) = (t.x, t.y, t.z);
        let (fx, fy) = (cam.fx, cam.fy);
        let mut g_t: Vector3<f64> = terms.jacobian.transpose() * Vector2::from(sg.mean2d);
        g_t.z += sg.depth;
        let z2 = z * z;
        let z3 = z2 * z;
        g_t.x += g_j[(0, 2)] * (-fx / z2);
        g_t.y += g_j[(1, 2)] * (-fy / z2);
        g_t.z += g_j[(0, 0)] * (-fx / z2)
            + g_j[(0, 2)] * (2.0 * fx * x / z3)
            + g_j[(1, 1)] * (-fy / z2)
            + g_j[(1, 2)] * (2.0 * fy * y / z3);
        let mut g_mu = cam.rotation.transpose() * g_t;

        // covariance = R diag(exp(2s)) R^T
        let r = terms.rotation;
        let d = Vector3::from(g.log_scale.map(|s| (2.0 * s).exp()));
        let rt_g_r = r.transpose() * g_sigma3 * r;
        for k in 0..3 {
            grad.log_scale[k] = 2.0 * d[k] * rt_g_r[(k, k)];
        }
        let g_r = 2.0 * g_sigma3 * r * Matrix3::from_diagonal(&d);
        grad.rotation = quaternion_grad(g.rotation, &g_r);

        // SH color through the clamp and the view direction
        let raw = shade(g, terms.view_dir, state.sh_degree);
        let mut g_c = [0.0; 3];
        for ch in 0..3 {
            if (0.0..=1.0).contains(&raw[ch]) {
                g_c[ch] = sg.color[ch];
            }
        }
        let degree = state.sh_degree;
        let k_used = num_coeffs(degree);
        let mut basis = [0.0; MAX_SH_COEFFS];
        let mut dbasis = [[0.0; 3]; MAX_SH_COEFFS];
        eval_basis(terms.view_dir, degree, &mut basis);
        eval_basis_grad(terms.view_dir, degree, &mut dbasis);
        let mut g_dir = [0.0; 3];
        for k in 0..k_used {
            let mut s = 0.0;
            for ch in 0..3 {
                grad.sh[k][ch] = basis[k] * g_c[ch];
                s += g.sh[k][ch] * g_c[ch];
            }
            for ax in 0..3 {
                g_dir[ax] += s * dbasis[k][ax];
            }
        }
        let dir = terms.view_dir;
        let dot = g_dir[0] * dir[0] + g_dir[1] * dir[1] + g_dir[2] * dir[2];
        for ax in 0..3 {
            g_mu[ax] += (g_dir[ax] - dot * dir[ax]) / terms.view_dist;
        }
        grad.center = [g_mu.x, g_mu.y, g_mu.z];
    }
    Ok(out)
}
