//! Training objectives: scale-normalized point-map regression with
//! confidence weighting, D-SSIM photometric loss, cosine feature
//! distillation, and their weighted sum. Every loss has an analytic
//! gradient alongside it.

pub mod ssim;

pub use ssim::{dssim, dssim_grad, ssim, ssim_grad};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{RenderOutput, UpstreamGradients};

/// Per-pixel 3D points with confidence and validity.
///
/// Invalid pixels may hold non-finite coordinates; they are excluded from
/// every sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    points: Image,
    confidence: Image,
    valid: Vec<bool>,
}

impl PointMap {
    pub fn new(points: Image, confidence: Image, valid: Vec<bool>) -> Result<Self> {
        if points.channels() != 3 {
            return Err(Error::shape("point map", "HxWx3", points.shape_string()));
        }
        if confidence.channels() != 1 || confidence.width() != points.width() || confidence.height() != points.height()
        {
            return Err(Error::shape(
                "confidence map",
                format!("{}x{}x1", points.height(), points.width()),
                confidence.shape_string(),
            ));
        }
        if valid.len() != points.num_pixels() {
            return Err(Error::shape("validity mask", points.num_pixels(), valid.len()));
        }
        if let Some(m) = confidence.data().iter().find(|m| !(**m >= 1.0)) {
            return Err(Error::InvariantViolation(format!(
                "confidence must be >= 1 everywhere, found {m}"
            )));
        }
        for (p, &v) in valid.iter().enumerate() {
            if v && points.pixel(p).iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "valid pixel {p} has non-finite coordinates"
                )));
            }
        }
        Ok(Self {
            points,
            confidence,
            valid,
        })
    }

    /// Unit confidence; pixels with any non-finite coordinate are invalid.
    pub fn from_points(points: Image) -> Result<Self> {
        let valid = (0..points.num_pixels())
            .map(|p| points.pixel(p).iter().all(|c| c.is_finite()))
            .collect();
        let conf = Image::filled(points.width(), points.height(), 1, 1.0);
        Self::new(points, conf, valid)
    }

    pub fn with_confidence(self, confidence: Image) -> Result<Self> {
        Self::new(self.points, confidence, self.valid)
    }

    pub fn with_valid(self, valid: Vec<bool>) -> Result<Self> {
        Self::new(self.points, self.confidence, valid)
    }

    pub fn width(&self) -> usize {
        self.points.width()
    }

    pub fn height(&self) -> usize {
        self.points.height()
    }

    pub fn points(&self) -> &Image {
        &self.points
    }

    pub fn confidence(&self) -> &Image {
        &self.confidence
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn point(&self, p: usize) -> [f64; 3] {
        let s = self.points.pixel(p);
        [s[0], s[1], s[2]]
    }

    /// Same map with every point multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self.points.scaled(s),
            ..self.clone()
        }
    }

    fn same_grid(&self, other: &PointMap) -> bool {
        self.width() == other.width() && self.height() == other.height()
    }
}

/// Confidence parameterization `M = 1 + exp(raw)`, which keeps `M > 1`.
pub fn confidence_from_raw(raw: f64) -> f64 {
    1.0 + raw.exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// D-SSIM weight.
    pub lambda1: f64,
    /// Semantic distillation weight.
    pub lambda2: f64,
    /// Confidence-weighted geometry weight.
    pub lambda3: f64,
    /// Log-confidence regularizer.
    pub alpha_conf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.25,
            lambda2: 0.3,
            lambda3: 1.5,
            alpha_conf: 0.2,
        }
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn masked_norm(maps: [&PointMap; 2], masks: [&[bool]; 2]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (m, mask) in maps.iter().zip(masks) {
        for (p, _) in mask.iter().enumerate().filter(|(_, v)| **v) {
            let pt = m.point(p);
            if pt.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "point {p} is non-finite inside the evaluation mask"
                )));
            }
            sum += norm3(pt);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("no valid pixels in either point map".into()));
    }
    Ok(sum / count as f64)
}

/// Mean distance to the origin over the valid pixels of both maps.
pub fn pointmap_norm(p1: &PointMap, p2: &PointMap) -> Result<f64> {
    masked_norm([p1, p2], [p1.valid(), p2.valid()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthLoss {
    /// Per-pixel distances for each view; zero outside the mask.
    pub per_pixel: [Image; 2],
    /// Sum of both maps.
    pub total: f64,
    pub pred_norm: f64,
    pub gt_norm: f64,
}

fn check_pairs(pred: [&PointMap; 2], gt: [&PointMap; 2]) -> Result<()> {
    for v in 0..2 {
        if !pred[v].same_grid(gt[v]) {
            return Err(Error::shape(
                "point map pair",
                format!("{}x{}", gt[v].height(), gt[v].width()),
                format!("{}x{}", pred[v].height(), pred[v].width()),
            ));
        }
    }
    Ok(())
}

/// `|| P / z - P_gt / z_gt ||` per ground-truth-valid pixel, where `z` and
/// `z_gt` are the mean point norms of each pair over that mask.
pub fn depth_regression_loss(pred: [&PointMap; 2], gt: [&PointMap; 2]) -> Result<DepthLoss> {
    check_pairs(pred, gt)?;
    let masks = [gt[0].valid(), gt[1].valid()];
    let z = masked_norm(pred, masks)?;
    let z_gt = masked_norm(gt, masks)?;
    if !(z > 0.0) || !(z_gt > 0.0) {
        return Err(Error::Degenerate("point map normalization factor is zero".into()));
    }
    let mut total = 0.0;
    let per_pixel = [0, 1].map(|v| {
        let (w, h) = (gt[v].width(), gt[v].height());
        let mut img = Image::zeros(w, h, 1);
        for p in 0..w * h {
            if masks[v][p] {
                let a = pred[v].point(p);
                let b = gt[v].point(p);
                let d = norm3([0, 1, 2].map(|k| a[k] / z - b[k] / z_gt));
                img.pixel_mut(p)[0] = d;
                total += d;
            }
        }
        img
    });
    Ok(DepthLoss {
        per_pixel,
        total,
        pred_norm: z,
        gt_norm: z_gt,
    })
}

/// Gradient of `sum_v sum_p weight_v(p) * loss_v(p)` with respect to the
/// predicted points, including the dependence of the normalization factor.
pub fn depth_regression_grad(pred: [&PointMap; 2], gt: [&PointMap; 2], weights: [&Image; 2]) -> Result<[Image; 2]> {
    let loss = depth_regression_loss(pred, gt)?;
    let (z, z_gt) = (loss.pred_norm, loss.gt_norm);
    let masks = [gt[0].valid(), gt[1].valid()];
    let count: usize = masks.iter().map(|m| m.iter().filter(|v| **v).count()).sum();
    let mut grads = [0, 1].map(|v| Image::zeros(gt[v].width(), gt[v].height(), 3));
    let mut g_z = 0.0;
    for v in 0..2 {
        for p in 0..masks[v].len() {
            if !masks[v][p] {
                continue;
            }
            let a = pred[v].point(p);
            let b = gt[v].point(p);
            let diff = [0, 1, 2].map(|k| a[k] / z - b[k] / z_gt);
            let d = norm3(diff);
            if d == 0.0 {
                continue;
            }
            let u = weights[v].pixel(p)[0];
            let g = grads[v].pixel_mut(p);
            for k in 0..3 {
                let unit = diff[k] / d;
                g[k] += u * unit / z;
                g_z -= u * unit * a[k] / (z * z);
            }
        }
    }
    // z = (1/count) sum ||P||
    for v in 0..2 {
        for p in 0..masks[v].len() {
            if !masks[v][p] {
                continue;
            }
            let a = pred[v].point(p);
            let n = norm3(a);
            if n == 0.0 {
                continue;
            }
            let g = grads[v].pixel_mut(p);
            for k in 0..3 {
                g[k] += g_z * a[k] / (n * count as f64);
            }
        }
    }
    Ok(grads)
}

/// `sum_{valid} M * loss - alpha * log M`.
pub fn confidence_loss(loss_map: &Image, confidence: &Image, valid: &[bool], alpha_conf: f64) -> Result<f64> {
    check_conf_inputs(loss_map, confidence, valid)?;
    let mut total = 0.0;
    for (p, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        let m = confidence.pixel(p)[0];
        total += m * loss_map.pixel(p)[0] - alpha_conf * m.ln();
    }
    Ok(total)
}

/// Gradients of [`confidence_loss`] with respect to the loss map and `M`.
pub fn confidence_loss_grad(
    loss_map: &Image,
    confidence: &Image,
    valid: &[bool],
    alpha_conf: f64,
) -> Result<(Image, Image)> {
    check_conf_inputs(loss_map, confidence, valid)?;
    let (w, h) = (loss_map.width(), loss_map.height());
    let mut g_loss = Image::zeros(w, h, 1);
    let mut g_conf = Image::zeros(w, h, 1);
    for (p, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        let m = confidence.pixel(p)[0];
        g_loss.pixel_mut(p)[0] = m;
        g_conf.pixel_mut(p)[0] = loss_map.pixel(p)[0] - alpha_conf / m;
    }
    Ok((g_loss, g_conf))
}

fn check_conf_inputs(loss_map: &Image, confidence: &Image, valid: &[bool]) -> Result<()> {
    loss_map.check_same_shape(confidence, "confidence loss")?;
    if valid.len() != loss_map.num_pixels() {
        return Err(Error::shape("validity mask", loss_map.num_pixels(), valid.len()));
    }
    if let Some(m) = confidence.data().iter().find(|m| !(**m >= 1.0)) {
        return Err(Error::InvariantViolation(format!("confidence must be >= 1, found {m}")));
    }
    Ok(())
}

/// Mean over pixels of `1 - cos(S_hat, S)`. Rendered pixels with zero norm
/// count as orthogonal (loss 1); teacher pixels must be non-zero.
pub fn semantic_cosine_loss(rendered: &Image, teacher: &Image) -> Result<f64> {
    rendered.check_same_shape(teacher, "semantic feature maps")?;
    let mut total = 0.0;
    for p in 0..rendered.num_pixels() {
        // rounding can push the cosine of parallel vectors just past 1
        total += 1.0 - cosine_at(rendered.pixel(p), teacher.pixel(p), p)?.0.clamp(-1.0, 1.0);
    }
    Ok(total / rendered.num_pixels() as f64)
}

/// `(cosine, |s|, |t|)`; cosine is 0 when `s` is zero.
fn cosine_at(s: &[f64], t: &[f64], p: usize) -> Result<(f64, f64, f64)> {
    let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(nt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "teacher feature at pixel {p} has zero norm"
        )));
    }
    let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ns == 0.0 {
        return Ok((0.0, 0.0, nt));
    }
    let dot: f64 = s.iter().zip(t).map(|(a, b)| a * b).sum();
    Ok((dot / (ns * nt), ns, nt))
}

/// Gradient of [`semantic_cosine_loss`] with respect to the rendered map.
pub fn semantic_cosine_grad(rendered: &Image, teacher: &Image) -> Result<Image> {
    rendered.check_same_shape(teacher, "semantic feature maps")?;
    let n = rendered.num_pixels() as f64;
    let mut g = Image::zeros(rendered.width(), rendered.height(), rendered.channels());
    for p in 0..rendered.num_pixels() {
        let s = rendered.pixel(p);
        let t = teacher.pixel(p);
        let (cos, ns, nt) = cosine_at(s, t, p)?;
        if ns == 0.0 {
            continue;
        }
        let out = g.pixel_mut(p);
        for k in 0..s.len() {
            out[k] = -(t[k] / (ns * nt) - cos * s[k] / (ns * ns)) / n;
        }
    }
    Ok(g)
}

/// Mean absolute error.
pub fn photometric_l1(x: &Image, y: &Image) -> Result<f64> {
    x.check_same_shape(y, "photometric images")?;
    let s: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / x.data().len() as f64)
}

pub fn photometric_l1_grad(x: &Image, y: &Image) -> Result<Image> {
    x.check_same_shape(y, "photometric images")?;
    let n = x.data().len() as f64;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| {
            if a > b {
                1.0 / n
            } else if a < b {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Image::from_vec(x.width(), x.height(), x.channels(), data)
}

/// Predicted and ground-truth point maps of both input views.
#[derive(Debug, Clone, Copy)]
pub struct PointMapPair<'a> {
    pub pred: [&'a PointMap; 2],
    pub gt: [&'a PointMap; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct LossTargets<'a> {
    pub color: &'a Image,
    pub feature: &'a Image,
}

/// Unweighted components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub dssim: f64,
    pub semantic: f64,
    /// Confidence-weighted geometry loss summed over both views.
    pub confidence: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_components(photometric: f64, dssim: f64, semantic: f64, confidence: f64, w: &LossWeights) -> Self {
        Self {
            photometric,
            dssim,
            semantic,
            confidence,
            total: photometric + w.lambda1 * dssim + w.lambda2 * semantic + w.lambda3 * confidence,
        }
    }
}

fn geometry_term(pm: &PointMapPair<'_>, alpha_conf: f64) -> Result<(f64, DepthLoss)> {
    let depth = depth_regression_loss(pm.pred, pm.gt)?;
    let mut conf = 0.0;
    for v in 0..2 {
        conf += confidence_loss(
            &depth.per_pixel[v],
            pm.pred[v].confidence(),
            pm.gt[v].valid(),
            alpha_conf,
        )?;
    }
    Ok((conf, depth))
}

/// `|C - C_hat| + l1 D-SSIM + l2 L_dist + l3 sum_v L_conf`.
pub fn total_loss(
    render: &RenderOutput,
    targets: &LossTargets<'_>,
    pointmaps: Option<&PointMapPair<'_>>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let photo = photometric_l1(&render.color, targets.color)?;
    let ds = dssim(&render.color, targets.color)?;
    let sem = semantic_cosine_loss(&render.feature, targets.feature)?;
    let conf = match pointmaps {
        Some(pm) => geometry_term(pm, weights.alpha_conf)?.0,
        None => 0.0,
    };
    let out = LossBreakdown::from_components(photo, ds, sem, conf, weights);
    if !out.total.is_finite() {
        return Err(Error::Numerical("total loss is not finite".into()));
    }
    Ok(out)
}

/// Gradients of [`total_loss`].
#[derive(Debug, Clone)]
pub struct TotalLossGradients {
    /// Feeds straight into [`crate::raster::render_backward`].
    pub render: UpstreamGradients,
    /// With respect to the predicted points of each view.
    pub points: Option<[Image; 2]>,
    /// With respect to the predicted confidence `M` of each view.
    pub confidence: Option<[Image; 2]>,
}

pub fn total_loss_grad(
    render: &RenderOutput,
    targets: &LossTargets<'_>,
    pointmaps: Option<&PointMapPair<'_>>,
    weights: &LossWeights,
) -> Result<TotalLossGradients> {
    let mut g_color = photometric_l1_grad(&render.color, targets.color)?;
    let g_ds = dssim_grad(&render.color, targets.color)?;
    for (a, b) in g_color.data_mut().iter_mut().zip(g_ds.data()) {
        *a += weights.lambda1 * b;
    }
    let g_feat = semantic_cosine_grad(&render.feature, targets.feature)?.scaled(weights.lambda2);

    let (points, confidence) = match pointmaps {
        Some(pm) => {
            let (_, depth) = geometry_term(pm, weights.alpha_conf)?;
            let mut w_loss = Vec::with_capacity(2);
            let mut g_conf = Vec::with_capacity(2);
            for v in 0..2 {
                let (gl, gm) = confidence_loss_grad(
                    &depth.per_pixel[v],
                    pm.pred[v].confidence(),
                    pm.gt[v].valid(),
                    weights.alpha_conf,
                )?;
                w_loss.push(gl.scaled(weights.lambda3));
                g_conf.push(gm.scaled(weights.lambda3));
            }
            let g_pts = depth_regression_grad(pm.pred, pm.gt, [&w_loss[0], &w_loss[1]])?;
            let g_conf: [Image; 2] = g_conf.try_into().expect("two views");
            (Some(g_pts), Some(g_conf))
        }
        None => (None, None),
    };
    Ok(TotalLossGradients {
        render: UpstreamGradients {
            color: Some(g_color),
            feature: Some(g_feat),
            ..Default::default()
        },
        points,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{random_image, rng};
    use rand::Rng;

    fn map_from(points: &[[f64; 3]], valid: &[bool]) -> PointMap {
        let data = points.iter().flatten().copied().collect();
        let img = Image::from_vec(points.len(), 1, 3, data).unwrap();
        PointMap::from_points(img).unwrap().with_valid(valid.to_vec()).unwrap()
    }

    fn random_map(r: &mut impl Rng, w: usize, h: usize) -> PointMap {
        let pts = random_image(r, w, h, 3, -2.0, 2.0);
        let valid = (0..w * h).map(|_| r.gen_bool(0.7)).collect();
        PointMap::from_points(pts).unwrap().with_valid(valid).unwrap()
    }

    #[test]
    fn norm_of_points_at_distance_two() {
        let a = map_from(
            &[[2.0, 0.0, 0.0], [0.0, 0.0, -2.0], [9.0, 9.0, 9.0]],
            &[true, true, false],
        );
        let b = map_from(&[[0.0, 2.0, 0.0], [1.2, 1.6, 0.0]], &[true, true]);
        assert!((pointmap_norm(&a, &b).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn norm_of_origin_points_is_zero() {
        let a = map_from(&[[0.0; 3]; 2], &[true, true]);
        assert_eq!(pointmap_norm(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn norm_requires_valid_pixels() {
        let a = map_from(&[[1.0; 3]; 2], &[false, false]);
        assert!(matches!(pointmap_norm(&a, &a), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn norm_matches_loop_oracle() {
        let mut r = rng(5);
        for _ in 0..10 {
            let a = random_map(&mut r, 5, 4);
            let b = random_map(&mut r, 5, 4);
            let mut sum = 0.0;
            let mut n = 0.0;
            for m in [&a, &b] {
                for p in 0..20 {
                    if m.valid()[p] {
                        let q = m.points().pixel(p);
                        sum += (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                        n += 1.0;
                    }
                }
            }
            assert!((pointmap_norm(&a, &b).unwrap() - sum / n).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_loss_scale_invariant() {
        let mut r = rng(6);
        let g1 = random_map(&mut r, 4, 3);
        let g2 = random_map(&mut r, 4, 3);
        let zero = depth_regression_loss([&g1, &g2], [&g1, &g2]).unwrap();
        assert_eq!(zero.total, 0.0);
        let p1 = g1.scaled(3.0);
        let p2 = g2.scaled(3.0);
        assert!(depth_regression_loss([&p1, &p2], [&g1, &g2]).unwrap().total < 1e-12);
    }

    #[test]
    fn depth_loss_matches_loop_oracle() {
        let mut r = rng(7);
        let g = [random_map(&mut r, 4, 3), random_map(&mut r, 4, 3)];
        let p = [
            PointMap::from_points(random_image(&mut r, 4, 3, 3, -2.0, 2.0)).unwrap(),
            PointMap::from_points(random_image(&mut r, 4, 3, 3, -2.0, 2.0)).unwrap(),
        ];
        let got = depth_regression_loss([&p[0], &p[1]], [&g[0], &g[1]]).unwrap();
        // oracle
        let norm = |maps: &[PointMap; 2]| {
            let mut s = 0.0;
            let mut n = 0.0;
            for v in 0..2 {
                for i in 0..12 {
                    if g[v].valid()[i] {
                        let q = maps[v].points().pixel(i);
                        s += q.iter().map(|c| c * c).sum::<f64>().sqrt();
                        n += 1.0;
                    }
                }
            }
            s / n
        };
        let (z, zg) = (norm(&p), norm(&g));
        let mut want = 0.0;
        for v in 0..2 {
            for i in 0..12 {
                if g[v].valid()[i] {
                    let a = p[v].points().pixel(i);
                    let b = g[v].points().pixel(i);
                    want += (0..3).map(|k| (a[k] / z - b[k] / zg).powi(2)).sum::<f64>().sqrt();
                }
            }
        }
        assert!((got.total - want).abs() < 1e-10);
    }

    #[test]
    fn depth_grad_matches_finite_differences() {
        let mut r = rng(8);
        let g = [random_map(&mut r, 3, 3), random_map(&mut r, 3, 3)];
        let p = [
            PointMap::from_points(random_image(&mut r, 3, 3, 3, -2.0, 2.0)).unwrap(),
            PointMap::from_points(random_image(&mut r, 3, 3, 3, -2.0, 2.0)).unwrap(),
        ];
        let wts = [
            random_image(&mut r, 3, 3, 1, 1.0, 3.0),
            random_image(&mut r, 3, 3, 1, 1.0, 3.0),
        ];
        let f = |p: &[PointMap; 2]| {
            let l = depth_regression_loss([&p[0], &p[1]], [&g[0], &g[1]]).unwrap();
            (0..2)
                .map(|v| {
                    l.per_pixel[v]
                        .data()
                        .iter()
                        .zip(wts[v].data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum::<f64>()
        };
        let grads = depth_regression_grad([&p[0], &p[1]], [&g[0], &g[1]], [&wts[0], &wts[1]]).unwrap();
        let h = 1e-6;
        for v in 0..2 {
            for i in 0..27 {
                let mut pp = p.clone();
                let mut pm = p.clone();
                let mut a = pp[v].points().clone();
                a.data_mut()[i] += h;
                pp[v] = PointMap::from_points(a).unwrap();
                let mut b = pm[v].points().clone();
                b.data_mut()[i] -= h;
                pm[v] = PointMap::from_points(b).unwrap();
                let fd = (f(&pp) - f(&pm)) / (2.0 * h);
                let an = grads[v].data()[i];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-7,
                    "{v} {i}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn confidence_loss_examples() {
        let loss = Image::from_vec(2, 1, 1, vec![0.3, 0.4]).unwrap();
        let ones = Image::filled(2, 1, 1, 1.0);
        assert!((confidence_loss(&loss, &ones, &[true, true], 0.2).unwrap() - 0.7).abs() < 1e-15);

        let d = 0.37;
        let l = Image::from_vec(1, 1, 1, vec![d]).unwrap();
        let m = Image::from_vec(1, 1, 1, vec![std::f64::consts::E]).unwrap();
        let got = confidence_loss(&l, &m, &[true], 0.2).unwrap();
        assert!((got - (std::f64::consts::E * d - 0.2)).abs() < 1e-15);

        let bad = Image::from_vec(1, 1, 1, vec![0.5]).unwrap();
        assert!(matches!(
            confidence_loss(&l, &bad, &[true], 0.2),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn confidence_loss_matches_loop_oracle() {
        let mut r = rng(10);
        let l = random_image(&mut r, 5, 5, 1, 0.0, 2.0);
        let m = random_image(&mut r, 5, 5, 1, 1.0, 4.0);
        let valid: Vec<bool> = (0..25).map(|_| r.gen_bool(0.6)).collect();
        let mut want = 0.0;
        for i in 0..25 {
            if valid[i] {
                want += m.data()[i] * l.data()[i] - 0.2 * m.data()[i].ln();
            }
        }
        assert!((confidence_loss(&l, &m, &valid, 0.2).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn cosine_loss_examples() {
        let s = Image::from_vec(2, 1, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        assert!(semantic_cosine_loss(&s, &s).unwrap().abs() < 1e-15);
        assert!((semantic_cosine_loss(&s.scaled(-1.0), &s).unwrap() - 2.0).abs() < 1e-15);
        let a = Image::from_vec(2, 1, 2, vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        let b = Image::from_vec(2, 1, 2, vec![0.0, 2.0, -1.0, 0.0]).unwrap();
        assert_eq!(semantic_cosine_loss(&a, &b).unwrap(), 1.0);
        // zero rendered pixel counts as orthogonal, zero teacher pixel is an error
        let z = Image::zeros(2, 1, 2);
        assert_eq!(semantic_cosine_loss(&z, &b).unwrap(), 1.0);
        assert!(semantic_cosine_loss(&b, &z).is_err());
    }

    #[test]
    fn cosine_grad_matches_finite_differences() {
        let mut r = rng(12);
        let s = random_image(&mut r, 3, 2, 4, -1.0, 1.0);
        let t = random_image(&mut r, 3, 2, 4, -1.0, 1.0);
        let g = semantic_cosine_grad(&s, &t).unwrap();
        let h = 1e-6;
        for i in 0..s.data().len() {
            let mut a = s.clone();
            let mut b = s.clone();
            a.data_mut()[i] += h;
            b.data_mut()[i] -= h;
            let fd = (semantic_cosine_loss(&a, &t).unwrap() - semantic_cosine_loss(&b, &t).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn weighted_total() {
        let w = LossWeights::default();
        assert_eq!(LossBreakdown::from_components(0.0, 0.0, 0.0, 0.0, &w).total, 0.0);
        assert_eq!(LossBreakdown::from_components(1.0, 1.0, 1.0, 1.0, &w).total, 3.05);
        let mut r = rng(13);
        for _ in 0..20 {
            let c: [f64; 4] = std::array::from_fn(|_| r.gen_range(0.0..3.0));
            let b = LossBreakdown::from_components(c[0], c[1], c[2], c[3], &w);
            let want = c[0] + 0.25 * c[1] + 0.3 * c[2] + 1.5 * c[3];
            assert!((b.total - want).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_confidence_is_at_least_one() {
        for raw in [-50.0, -1.0, 0.0, 3.0] {
            assert!(confidence_from_raw(raw) >= 1.0);
        }
    }
}
