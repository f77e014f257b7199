use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;

use super::camera::Camera;
use super::project::{project_with_degree, Projected2DGaussian};
use super::{TILE_SIZE, TRANSMITTANCE_MIN};
use crate::error::{Error, Result};
use crate::field::{sh, SemanticGaussianField};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    /// Rasterize tiles on the rayon pool instead of sequentially. Both paths
    /// produce bit-identical images.
    pub parallel: bool,
    /// Evaluate only the first `(k+1)^2` SH bands; `None` uses the field's degree.
    pub sh_degree: Option<u32>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            parallel: true,
            sh_degree: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub depth: Image,
    pub alpha: Image,
    pub feature: Image,
}

#[derive(Debug, Clone)]
pub(crate) struct TileGrid {
    pub tiles_x: usize,
    /// Per tile, indices into the sorted projected list, front to back.
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn build(projected: &[Projected2DGaussian], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (k, p) in projected.iter().enumerate() {
            let Some((x0, x1)) = tile_span(p.mean2d[0], p.radius, tiles_x) else {
                continue;
            };
            let Some((y0, y1)) = tile_span(p.mean2d[1], p.radius, tiles_y) else {
                continue;
            };
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    lists[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Self { tiles_x, lists }
    }

    /// Pixel bounds `(x0, y0, x1, y1)` (exclusive upper) of tile `t`.
    pub fn bounds(&self, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
    }
}

/// Range of tile indices along one axis touched by `[center - r, center + r]`.
fn tile_span(center: f64, radius: f64, tiles: usize) -> Option<(usize, usize)> {
    let ts = TILE_SIZE as f64;
    let lo = ((center - radius - (ts - 1.0)) / ts).ceil().max(0.0);
    let hi = ((center + radius) / ts).floor().min(tiles as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Evaluates the per-pixel opacity of a splat: `(alpha, gaussian weight, delta)`.
#[inline]
pub(crate) fn splat_alpha(p: &Projected2DGaussian, px: f64, py: f64) -> (f64, f64, [f64; 2]) {
    let dx = px - p.mean2d[0];
    let dy = py - p.mean2d[1];
    let q = p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
    let w = (-0.5 * q).exp();
    (p.opacity * w, w, [dx, dy])
}

/// Cached result of a forward pass, consumed by [`super::render_backward`].
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub(crate) fingerprint: u64,
    pub(crate) sh_degree: u32,
    pub(crate) parallel: bool,
    pub(crate) background: [f64; 3],
    pub(crate) projected: Vec<Projected2DGaussian>,
    pub(crate) grid: TileGrid,
    /// Number of tile-list entries blended at each pixel.
    pub(crate) n_contrib: Vec<u32>,
}

impl ForwardState {
    pub fn projected(&self) -> &[Projected2DGaussian] {
        &self.projected
    }

    pub fn contributors(&self) -> &[u32] {
        &self.n_contrib
    }
}

pub(crate) fn fingerprint(field: &SemanticGaussianField, cam: &Camera, background: [f64; 3], sh_degree: u32) -> u64 {
    let mut h = DefaultHasher::new();
    field.sh_degree().hash(&mut h);
    field.feature_dim().hash(&mut h);
    field.len().hash(&mut h);
    for g in field.gaussians() {
        for v in g.params() {
            v.to_bits().hash(&mut h);
        }
    }
    for v in [cam.fx, cam.fy, cam.cx, cam.cy] {
        v.to_bits().hash(&mut h);
    }
    cam.width.hash(&mut h);
    cam.height.hash(&mut h);
    for v in cam.rotation.iter().chain(cam.translation.iter()) {
        v.to_bits().hash(&mut h);
    }
    for v in background {
        v.to_bits().hash(&mut h);
    }
    sh_degree.hash(&mut h);
    h.finish()
}

pub(crate) fn effective_degree(field: &SemanticGaussianField, opts: &RenderOptions) -> Result<u32> {
    match opts.sh_degree {
        None => Ok(field.sh_degree()),
        Some(k) => {
            sh::check_degree(k)?;
            if k > field.sh_degree() {
                return Err(Error::InvalidInput(format!(
                    "requested SH degree {k} exceeds the field's degree {}",
                    field.sh_degree()
                )));
            }
            Ok(k)
        }
    }
}

struct TileOutput {
    color: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
    feature: Vec<f64>,
    n_contrib: Vec<u32>,
}

fn render_tile(
    t: usize,
    grid: &TileGrid,
    projected: &[Projected2DGaussian],
    cam: &Camera,
    background: [f64; 3],
    n_feat: usize,
) -> TileOutput {
    let (x0, y0, x1, y1) = grid.bounds(t, cam.width, cam.height);
    let npix = (x1 - x0) * (y1 - y0);
    let mut out = TileOutput {
        color: Vec::with_capacity(npix * 3),
        depth: Vec::with_capacity(npix),
        alpha: Vec::with_capacity(npix),
        feature: Vec::with_capacity(npix * n_feat),
        n_contrib: Vec::with_capacity(npix),
    };
    let list = &grid.lists[t];
    let mut feat = vec![0.0; n_feat];
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64, y as f64);
            let mut trans = 1.0;
            let mut color = [0.0; 3];
            let mut depth = 0.0;
            let mut acc = 0.0;
            feat.iter_mut().for_each(|v| *v = 0.0);
            let mut n = 0u32;
            for (k, &gi) in list.iter().enumerate() {
                let p = &projected[gi as usize];
                let (a, _, _) = splat_alpha(p, px, py);
                let w = a * trans;
                for ch in 0..3 {
                    color[ch] += w * p.color[ch];
                }
                for (f, s) in feat.iter_mut().zip(&p.semantic) {
                    *f += w * s;
                }
                depth += w * p.view_depth;
                acc += w;
                trans *= 1.0 - a;
                n = k as u32 + 1;
                if trans < TRANSMITTANCE_MIN {
                    break;
                }
            }
            for ch in 0..3 {
                out.color.push(color[ch] + trans * background[ch]);
            }
            out.depth.push(depth);
            out.alpha.push(acc);
            out.feature.extend_from_slice(&feat);
            out.n_contrib.push(n);
        }
    }
    out
}

/// Renders with default options (tile-parallel, the field's SH degree).
pub fn render_forward(field: &SemanticGaussianField, cam: &Camera, background: [f64; 3]) -> Result<RenderOutput> {
    render(field, cam, background, &RenderOptions::default()).map(|(out, _)| out)
}

/// Renders and returns the state needed for a backward pass.
pub fn render(
    field: &SemanticGaussianField,
    cam: &Camera,
    background: [f64; 3],
    opts: &RenderOptions,
) -> Result<(RenderOutput, ForwardState)> {
    cam.validate()?;
    field.validate()?;
    if background.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("background color is not finite".into()));
    }
    let degree = effective_degree(field, opts)?;
    let projected = project_with_degree(field, cam, degree)?;
    let grid = TileGrid::build(&projected, cam.width, cam.height);
    let n_feat = field.feature_dim();
    let (w, h) = (cam.width, cam.height);

    let tile_ids: Vec<usize> = (0..grid.lists.len()).collect();
    let run = |t: &usize| render_tile(*t, &grid, &projected, cam, background, n_feat);
    let tiles: Vec<TileOutput> = if opts.parallel {
        tile_ids.par_iter().map(run).collect()
    } else {
        tile_ids.iter().map(run).collect()
    };

    let mut color = Image::zeros(w, h, 3);
    let mut depth = Image::zeros(w, h, 1);
    let mut alpha = Image::zeros(w, h, 1);
    let mut feature = Image::zeros(w, h, n_feat);
    let mut n_contrib = vec![0u32; w * h];
    for (t, tile) in tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = grid.bounds(t, w, h);
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * w + x;
                color.pixel_mut(p).copy_from_slice(&tile.color[i * 3..i * 3 + 3]);
                depth.pixel_mut(p)[0] = tile.depth[i];
                alpha.pixel_mut(p)[0] = tile.alpha[i];
                feature
                    .pixel_mut(p)
                    .copy_from_slice(&tile.feature[i * n_feat..(i + 1) * n_feat]);
                n_contrib[p] = tile.n_contrib[i];
                i += 1;
            }
        }
    }

    let state = ForwardState {
        fingerprint: fingerprint(field, cam, background, degree),
        sh_degree: degree,
        parallel: opts.parallel,
        background,
        projected,
        grid,
        n_contrib,
    };
    Ok((
        RenderOutput {
            color,
            depth,
            alpha,
            feature,
        },
        state,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SemanticGaussian;

    #[test]
    fn tile_span_covers_footprint() {
        assert_eq!(tile_span(8.0, 3.0, 2), Some((0, 0)));
        assert_eq!(tile_span(15.5, 1.0, 2), Some((0, 1)));
        assert_eq!(tile_span(-10.0, 3.0, 2), None);
        assert_eq!(tile_span(40.0, 3.0, 2), None);
        assert_eq!(tile_span(-2.0, 3.0, 2), Some((0, 0)));
    }

    #[test]
    fn empty_field_renders_background() {
        let field = SemanticGaussianField::empty(0, 3).unwrap();
        let cam = Camera::centered(10.0, 20, 18).unwrap();
        let out = render_forward(&field, &cam, [0.1, 0.2, 0.3]).unwrap();
        for p in 0..cam.width * cam.height {
            assert_eq!(out.color.pixel(p), &[0.1, 0.2, 0.3]);
            assert_eq!(out.alpha.pixel(p)[0], 0.0);
            assert_eq!(out.depth.pixel(p)[0], 0.0);
            assert_eq!(out.feature.pixel(p), &[0.0; 3]);
        }
    }

    #[test]
    fn non_finite_gaussian_rejected() {
        let g = SemanticGaussian::new(
            [0.0, 0.0, f64::NAN],
            [0.0; 3],
            [1.0, 0.0, 0.0, 0.0],
            0.0,
            vec![[0.0; 3]],
            vec![0.0],
        )
        .unwrap();
        let field = SemanticGaussianField::new(0, 1, vec![g]).unwrap();
        let cam = Camera::centered(10.0, 8, 8).unwrap();
        assert!(matches!(
            render_forward(&field, &cam, [0.0; 3]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sh_degree_override_is_bounded() {
        let field = SemanticGaussianField::empty(1, 1).unwrap();
        let cam = Camera::centered(10.0, 8, 8).unwrap();
        let opts = RenderOptions {
            sh_degree: Some(2),
            ..Default::default()
        };
        assert!(render(&field, &cam, [0.0; 3], &opts).is_err());
    }
}
