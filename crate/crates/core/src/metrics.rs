//! Evaluation: image quality, open-vocabulary segmentation scores, depth
//! accuracy and PCA visualization of feature maps.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::image::Image;

pub use crate::loss::ssim::{ssim, ssim_map};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;
/// Ratio threshold of the depth inlier metric.
pub const TAU_THRESHOLD: f64 = 1.03;
pub const IGNORE_LABEL: u32 = u32::MAX;
pub const DEFAULT_CLASSES: [&str; 8] = ["Wall", "Floor", "Ceiling", "Chair", "Table", "Bed", "Sofa", "Others"];

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
}

/// `10 log10(max^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(x: &Image, y: &Image, max_val: f64) -> Result<f64> {
    x.check_same_shape(y, "psnr inputs")?;
    if !(max_val > 0.0) {
        return Err(Error::InvalidInput(format!(
            "psnr peak value must be positive, got {max_val}"
        )));
    }
    let n = x.data().len();
    if n == 0 {
        return Err(Error::EmptyInput("psnr of empty images".into()));
    }
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    classes: Vec<String>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>, classes: Vec<String>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape("label map", width * height, labels.len()));
        }
        if let Some(l) = labels
            .iter()
            .find(|l| **l != IGNORE_LABEL && **l as usize >= classes.len())
        {
            return Err(Error::InvalidInput(format!(
                "label {l} is out of range for {} classes",
                classes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            classes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }
}

/// One embedding per class name.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet {
    classes: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl TextEmbeddingSet {
    pub fn new(classes: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if classes.len() != embeddings.len() {
            return Err(Error::shape("text embeddings", classes.len(), embeddings.len()));
        }
        if classes.is_empty() {
            return Err(Error::EmptyInput("no classes".into()));
        }
        let dim = embeddings[0].len();
        for (c, e) in classes.iter().zip(&embeddings) {
            if e.len() != dim {
                return Err(Error::shape("text embedding width", dim, e.len()));
            }
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "embedding of '{c}' has zero or non-finite norm"
                )));
            }
        }
        Ok(Self { classes, embeddings })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }

    /// Index of the catch-all class: "Others" if present, else the last.
    pub fn fallback_class(&self) -> u32 {
        let i = self
            .classes
            .iter()
            .position(|c| c.eq_ignore_ascii_case("others"))
            .unwrap_or(self.classes.len() - 1);
        i as u32
    }
}

/// Per-pixel argmax of cosine similarity; ties go to the lower class index
/// and zero-norm pixels to the fallback class.
pub fn open_vocab_segment(features: &Image, text: &TextEmbeddingSet) -> Result<LabelMap> {
    if features.channels() != text.dim() {
        return Err(Error::shape("feature dimension", text.dim(), features.channels()));
    }
    let norms: Vec<f64> = text
        .embeddings()
        .iter()
        .map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let fallback = text.fallback_class();
    let mut labels = Vec::with_capacity(features.num_pixels());
    for p in 0..features.num_pixels() {
        let s = features.pixel(p);
        let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !ns.is_finite() {
            return Err(Error::InvalidInput(format!("feature at pixel {p} is not finite")));
        }
        if ns == 0.0 {
            labels.push(fallback);
            continue;
        }
        let mut best = (0u32, f64::NEG_INFINITY);
        for (c, (e, ne)) in text.embeddings().iter().zip(&norms).enumerate() {
            let cos = s.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / (ns * ne);
            if cos > best.1 {
                best = (c as u32, cos);
            }
        }
        labels.push(best.0);
    }
    LabelMap::new(features.width(), features.height(), labels, text.classes().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScores {
    pub miou: f64,
    pub accuracy: f64,
    /// `None` for classes absent from both maps.
    pub per_class_iou: Vec<Option<f64>>,
}

/// Mean IoU over classes present in either map, and pixel accuracy. Pixels
/// with the ignore label in either map are skipped.
pub fn miou_pixel_acc(pred: &LabelMap, gt: &LabelMap) -> Result<SegmentationScores> {
    if pred.classes != gt.classes {
        return Err(Error::InvalidInput(
            "prediction and ground truth use different class lists".into(),
        ));
    }
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::shape(
            "label maps",
            format!("{}x{}", gt.height, gt.width),
            format!("{}x{}", pred.height, pred.width),
        ));
    }
    let k = gt.classes.len();
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fneg = vec![0usize; k];
    let mut total = 0usize;
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if p == IGNORE_LABEL || g == IGNORE_LABEL {
            continue;
        }
        total += 1;
        if p == g {
            tp[g as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fneg[g as usize] += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("every pixel is ignored".into()));
    }
    let per_class_iou: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let den = tp[c] + fp[c] + fneg[c];
            (den > 0).then(|| tp[c] as f64 / den as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    Ok(SegmentationScores {
        miou: present.iter().sum::<f64>() / present.len() as f64,
        accuracy: tp.iter().sum::<usize>() as f64 / total as f64,
        per_class_iou,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthScores {
    /// Mean absolute relative error, in percent.
    pub rel: f64,
    /// Percentage of pixels with `max(p/g, g/p) < 1.03`.
    pub tau: f64,
}

/// Depth accuracy over the mask (all pixels when `None`). Inputs are
/// expected to be median-aligned already.
pub fn depth_rel_tau(pred: &Image, gt: &Image, mask: Option<&[bool]>) -> Result<DepthScores> {
    pred.check_same_shape(gt, "depth maps")?;
    if pred.channels() != 1 {
        return Err(Error::shape("depth map", "HxWx1", pred.shape_string()));
    }
    if let Some(m) = mask {
        if m.len() != pred.num_pixels() {
            return Err(Error::shape("depth mask", pred.num_pixels(), m.len()));
        }
    }
    let mut rel = 0.0;
    let mut inliers = 0usize;
    let mut n = 0usize;
    for (p, (&d, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ground-truth depth {g} at pixel {p} is not positive"
            )));
        }
        if !d.is_finite() {
            return Err(Error::InvalidInput(format!(
                "predicted depth at pixel {p} is not finite"
            )));
        }
        rel += (d - g).abs() / g;
        if (d / g).max(g / d) < TAU_THRESHOLD {
            inliers += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("depth mask selects no pixels".into()));
    }
    Ok(DepthScores {
        rel: 100.0 * rel / n as f64,
        tau: 100.0 * inliers as f64 / n as f64,
    })
}

/// Eigenvalues below this fraction of the largest are treated as zero.
const PCA_RANK_TOL: f64 = 1e-10;

/// Projects each pixel's feature onto the top three principal components
/// and min-max normalizes each to `[0, 1]`. Each component's largest
/// loading is made positive. Missing components are filled with 0.5.
pub fn pca_visualize(features: &Image) -> Result<Image> {
    let (w, h, n) = (features.width(), features.height(), features.channels());
    if w * h < 3 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 3 pixels, got {}",
            w * h
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 3 feature channels, got {n}"
        )));
    }
    if !features.is_finite() {
        return Err(Error::InvalidInput("feature map is not finite".into()));
    }
    let px = w * h;
    let mut x = DMatrix::from_row_slice(px, n, features.data());
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let cov = (x.transpose() * &x) / px as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let top = eig.eigenvalues[order[0]];

    let mut out = Image::filled(w, h, 3, 0.5);
    for (ch, &k) in order.iter().take(3).enumerate() {
        if !(top > 0.0) || eig.eigenvalues[k] <= PCA_RANK_TOL * top {
            continue;
        }
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, c)| if c.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v = -v;
        }
        let proj = &x * v;
        let (lo, hi) = proj
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
        if !(hi > lo) {
            continue;
        }
        for p in 0..px {
            out.pixel_mut(p)[ch] = (proj[p] - lo) / (hi - lo);
        }
    }
    Ok(out)
}
