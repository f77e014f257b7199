//! Structural similarity with an 11x11 Gaussian window (sigma 1.5).
//!
//! The window is truncated at the image border and renormalized over the
//! in-bounds taps, so the output has the input's size and constant images
//! produce the closed-form SSIM of two constants at every pixel.

use crate::error::Result;
use crate::image::Image;

pub const WINDOW_RADIUS: usize = 5;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn taps() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let r = WINDOW_RADIUS as isize;
    std::array::from_fn(|i| {
        let k = (i as isize - r) as f64;
        (-k * k / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
    })
}

/// Normalized tap weights of output position `p` along an axis of length `n`:
/// `(first input index, weights)`.
fn row_weights(p: usize, n: usize, g: &[f64]) -> (usize, Vec<f64>) {
    let lo = p.saturating_sub(WINDOW_RADIUS);
    let hi = (p + WINDOW_RADIUS).min(n - 1);
    let off = WINDOW_RADIUS + lo - p;
    let w: Vec<f64> = g[off..off + (hi - lo + 1)].to_vec();
    let z: f64 = w.iter().sum();
    (lo, w.into_iter().map(|v| v / z).collect())
}

/// Separable window filter (or its transpose) of a single-channel plane.
fn filter(plane: &[f64], width: usize, height: usize, transpose: bool) -> Vec<f64> {
    let g = taps();
    let rows: Vec<_> = (0..width).map(|x| row_weights(x, width, &g)).collect();
    let cols: Vec<_> = (0..height).map(|y| row_weights(y, height, &g)).collect();
    let mut tmp = vec![0.0; width * height];
    let mut out = vec![0.0; width * height];
    if !transpose {
        for y in 0..height {
            for x in 0..width {
                let (lo, w) = &rows[x];
                tmp[y * width + x] = w.iter().enumerate().map(|(k, wk)| wk * plane[y * width + lo + k]).sum();
            }
        }
        for y in 0..height {
            let (lo, w) = &cols[y];
            for x in 0..width {
                out[y * width + x] = w.iter().enumerate().map(|(k, wk)| wk * tmp[(lo + k) * width + x]).sum();
            }
        }
    } else {
        for y in 0..height {
            let (lo, w) = &cols[y];
            for x in 0..width {
                let v = plane[y * width + x];
                for (k, wk) in w.iter().enumerate() {
                    tmp[(lo + k) * width + x] += wk * v;
                }
            }
        }
        for y in 0..height {
            for x in 0..width {
                let (lo, w) = &rows[x];
                let v = tmp[y * width + x];
                for (k, wk) in w.iter().enumerate() {
                    out[y * width + lo + k] += wk * v;
                }
            }
        }
    }
    out
}

struct ChannelStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn channel_stats(x: &[f64], y: &[f64], w: usize, h: usize) -> ChannelStats {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter(x, w, h, false);
    let mu_y = filter(y, w, h, false);
    let exx = filter(&xx, w, h, false);
    let eyy = filter(&yy, w, h, false);
    let exy = filter(&xy, w, h, false);
    let n = w * h;
    ChannelStats {
        var_x: (0..n).map(|i| exx[i] - mu_x[i] * mu_x[i]).collect(),
        var_y: (0..n).map(|i| eyy[i] - mu_y[i] * mu_y[i]).collect(),
        cov: (0..n).map(|i| exy[i] - mu_x[i] * mu_y[i]).collect(),
        mu_x,
        mu_y,
    }
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(img.channels()).copied().collect()
}

/// Per-pixel SSIM map, one plane per channel.
pub fn ssim_map(x: &Image, y: &Image) -> Result<Image> {
    x.check_same_shape(y, "ssim inputs")?;
    let (w, h, nc) = (x.width(), x.height(), x.channels());
    let mut out = Image::zeros(w, h, nc);
    for c in 0..nc {
        let s = channel_stats(&plane(x, c), &plane(y, c), w, h);
        for p in 0..w * h {
            let num = (2.0 * s.mu_x[p] * s.mu_y[p] + C1) * (2.0 * s.cov[p] + C2);
            let den = (s.mu_x[p] * s.mu_x[p] + s.mu_y[p] * s.mu_y[p] + C1) * (s.var_x[p] + s.var_y[p] + C2);
            out.pixel_mut(p)[c] = num / den;
        }
    }
    Ok(out)
}

/// Mean SSIM over pixels and channels.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    let m = ssim_map(x, y)?;
    Ok(m.data().iter().sum::<f64>() / m.data().len() as f64)
}

/// Gradient of [`ssim`] with respect to `x`.
pub fn ssim_grad(x: &Image, y: &Image) -> Result<Image> {
    x.check_same_shape(y, "ssim inputs")?;
    let (w, h, nc) = (x.width(), x.height(), x.channels());
    let scale = 1.0 / (w * h * nc) as f64;
    let mut grad = Image::zeros(w, h, nc);
    for c in 0..nc {
        let xp = plane(x, c);
        let yp = plane(y, c);
        let s = channel_stats(&xp, &yp, w, h);
        // upstream on the filtered moments mu_x, E[x^2], E[xy]
        let mut g_mu = vec![0.0; w * h];
        let mut g_exx = vec![0.0; w * h];
        let mut g_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let (mx, my) = (s.mu_x[p], s.mu_y[p]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * s.cov[p] + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = s.var_x[p] + s.var_y[p] + C2;
            let d_mx = (2.0 * my * a2) / (b1 * b2) - a1 * a2 * 2.0 * mx / (b1 * b1 * b2);
            let d_var = -a1 * a2 / (b1 * b2 * b2);
            let d_cov = 2.0 * a1 / (b1 * b2);
            // var_x = E[x^2] - mu_x^2, cov = E[xy] - mu_x mu_y
            g_mu[p] = scale * (d_mx - 2.0 * mx * d_var - my * d_cov);
            g_exx[p] = scale * d_var;
            g_exy[p] = scale * d_cov;
        }
        let t_mu = filter(&g_mu, w, h, true);
        let t_exx = filter(&g_exx, w, h, true);
        let t_exy = filter(&g_exy, w, h, true);
        for p in 0..w * h {
            grad.pixel_mut(p)[c] = t_mu[p] + 2.0 * xp[p] * t_exx[p] + yp[p] * t_exy[p];
        }
    }
    Ok(grad)
}

/// Structural dissimilarity `(1 - SSIM) / 2`.
pub fn dssim(x: &Image, y: &Image) -> Result<f64> {
    Ok((1.0 - ssim(x, y)?) / 2.0)
}

pub fn dssim_grad(x: &Image, y: &Image) -> Result<Image> {
    Ok(ssim_grad(x, y)?.scaled(-0.5))
}
