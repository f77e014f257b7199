//! Central finite-difference check of [`super::render_backward`].

use rand::Rng;

use super::backward::{render_backward, UpstreamGradients};
use super::camera::Camera;
use super::forward::{render, RenderOptions, RenderOutput};
use crate::error::Result;
use crate::field::SemanticGaussianField;
use crate::image::Image;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;

/// One parameter whose analytic and numerical derivatives disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub gaussian: usize,
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    /// Largest `|a - n| / max(|a|, |n|)` among entries above the absolute floor.
    pub max_rel_err: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Whether an analytic derivative matches its finite-difference estimate.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= ABS_TOL || err <= REL_TOL * analytic.abs().max(numeric.abs())
}

fn dot(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Random upstream weights on every render output.
pub fn random_upstream(rng: &mut impl Rng, cam: &Camera, feature_dim: usize) -> UpstreamGradients {
    let (w, h) = (cam.width, cam.height);
    let mut img = |c| Image::from_fn(w, h, c, |_, _, _| rng.gen_range(-1.0..1.0));
    UpstreamGradients {
        color: Some(img(3)),
        depth: Some(img(1)),
        alpha: Some(img(1)),
        feature: Some(img(feature_dim)),
    }
}

/// `<upstream, outputs>`, the scalar whose gradient is checked.
pub fn readout(out: &RenderOutput, up: &UpstreamGradients) -> f64 {
    let mut s = 0.0;
    for (img, g) in [
        (&out.color, &up.color),
        (&out.depth, &up.depth),
        (&out.alpha, &up.alpha),
        (&out.feature, &up.feature),
    ] {
        if let Some(g) = g {
            s += dot(img, g);
        }
    }
    s
}

/// Compares every parameter gradient of the readout against central
/// differences with step [`FD_STEP`].
pub fn gradcheck(
    field: &SemanticGaussianField,
    cam: &Camera,
    background: [f64; 3],
    upstream: &UpstreamGradients,
) -> Result<GradcheckReport> {
    let opts = RenderOptions {
        parallel: false,
        sh_degree: None,
    };
    let (_, state) = render(field, cam, background, &opts)?;
    let grads = render_backward(field, cam, &state, upstream)?;
    let eval =
        |f: &SemanticGaussianField| -> Result<f64> { Ok(readout(&render(f, cam, background, &opts)?.0, upstream)) };
    let mut report = GradcheckReport::default();
    let mut work = field.clone();
    for (gi, grad) in grads.iter().enumerate() {
        let base = field.gaussians()[gi].params();
        let analytic = grad.flat();
        for (k, &a) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[k] = base[k] + FD_STEP;
            work.gaussians_mut()[gi].set_params(&p)?;
            let fp = eval(&work)?;
            p[k] = base[k] - FD_STEP;
            work.gaussians_mut()[gi].set_params(&p)?;
            let fm = eval(&work)?;
            work.gaussians_mut()[gi].set_params(&base)?;
            let n = (fp - fm) / (2.0 * FD_STEP);

            let err = (a - n).abs();
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if err > ABS_TOL {
                report.max_rel_err = report.max_rel_err.max(err / a.abs().max(n.abs()));
            }
            if !grad_close(a, n) {
                report.failures.push(GradMismatch {
                    gaussian: gi,
                    param: k,
                    analytic: a,
                    numeric: n,
                });
            }
        }
    }
    Ok(report)
}
