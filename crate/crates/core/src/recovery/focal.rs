use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::PointMap;

/// Points at or below this depth are ignored.
pub const MIN_DEPTH: f64 = 1e-6;
/// Residual floor in the reweighting step.
pub const RESIDUAL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeiszfeldConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for WeiszfeldConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalEstimate {
    pub focal: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the warm start and after every iteration.
    pub objective: Vec<f64>,
    /// Rounding error bound of an objective evaluation; differences below
    /// this are not meaningful.
    pub noise_floor: f64,
}

impl FocalEstimate {
    /// Whether the objective never increased by more than the noise floor.
    pub fn is_monotone(&self) -> bool {
        self.objective.windows(2).all(|w| w[1] <= w[0] + self.noise_floor)
    }
}

struct Sample {
    a: [f64; 2],
    b: [f64; 2],
    w: f64,
}

fn objective(s: &[Sample], f: f64) -> f64 {
    s.iter()
        .map(|s| s.w * ((s.a[0] - f * s.b[0]).hypot(s.a[1] - f * s.b[1])))
        .sum()
}

/// Focal length minimizing `sum O |(i - W/2, j - H/2) - f (X/Z, Y/Z)|`
/// by iteratively reweighted least squares, warm-started from the weighted
/// least-squares solution. `weights` defaults to the point-map confidence.
pub fn estimate_focal_weiszfeld(
    pointmap: &PointMap,
    weights: Option<&Image>,
    cfg: &WeiszfeldConfig,
) -> Result<FocalEstimate> {
    let (w, h) = (pointmap.width(), pointmap.height());
    let weights = weights.unwrap_or(pointmap.confidence());
    if weights.width() != w || weights.height() != h || weights.channels() != 1 {
        return Err(Error::shape(
            "focal weights",
            format!("{h}x{w}x1"),
            weights.shape_string(),
        ));
    }
    let mut samples = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let o = weights.pixel(p)[0];
            let q = pointmap.point(p);
            if !pointmap.valid()[p] || !(o > 0.0) || !o.is_finite() || !(q[2] > MIN_DEPTH) {
                continue;
            }
            samples.push(Sample {
                a: [x as f64 - w as f64 / 2.0, y as f64 - h as f64 / 2.0],
                b: [q[0] / q[2], q[1] / q[2]],
                w: o,
            });
        }
    }
    if samples.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "focal estimation needs at least 2 usable pixels, found {}",
            samples.len()
        )));
    }

    let solve = |wt: &dyn Fn(&Sample) -> f64| -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for s in &samples {
            let k = wt(s);
            num += k * (s.a[0] * s.b[0] + s.a[1] * s.b[1]);
            den += k * (s.b[0] * s.b[0] + s.b[1] * s.b[1]);
        }
        let f = num / den;
        if !f.is_finite() {
            return Err(Error::Numerical(format!("focal iterate is not finite ({num}/{den})")));
        }
        Ok(f)
    };

    let mut f = solve(&|s| s.w)?;
    let mut history = vec![objective(&samples, f)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let prev = f;
        f = solve(&|s| {
            let r = (s.a[0] - prev * s.b[0]).hypot(s.a[1] - prev * s.b[1]);
            s.w / r.max(RESIDUAL_FLOOR)
        })?;
        iterations += 1;
        history.push(objective(&samples, f));
        if ((f - prev) / prev).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    if !(f > 0.0) {
        return Err(Error::Numerical(format!("estimated focal {f} is not positive")));
    }
    // each residual cancels terms of size |a|, so evaluation error scales
    // with sum O |a|
    let noise_floor = 64.0 * f64::EPSILON * samples.iter().map(|s| s.w * s.a[0].hypot(s.a[1])).sum::<f64>();
    Ok(FocalEstimate {
        focal: f,
        iterations,
        converged,
        objective: history,
        noise_floor,
    })
}

/// Arithmetic mean of the per-view focal lengths.
pub fn average_focal(estimates: &[FocalEstimate]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("no focal estimates to average".into()));
    }
    Ok(estimates.iter().map(|e| e.focal).sum::<f64>() / estimates.len() as f64)
}
