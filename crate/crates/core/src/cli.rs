//! Command-line interface. Every command prints one `key:value` line first,
//! followed by human-readable detail.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, ErrorKind};
use crate::fusion::{attention_gradcheck, random_matrix, AttentionBlockParams, TokenMatrix, TokenRole};
use crate::image::Image;
use crate::io::{self, Tensor, TensorTag};
use crate::loss::{total_loss, LossBreakdown, LossTargets, LossWeights, PointMap, PointMapPair};
use crate::metrics::{self, LabelMap, TextEmbeddingSet, IGNORE_LABEL};
use crate::raster::gradcheck::{gradcheck, random_upstream};
use crate::raster::{render, RenderOptions, RenderOutput};
use crate::recovery::{self, RansacConfig, RecoveryConfig};
use crate::synthetic::{random_scene, rng, SceneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "lsm",
    version,
    about = "Semantic Gaussian rendering, camera recovery and evaluation"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render color, depth and features of a field from a camera.
    Render(RenderArgs),
    /// Recover intrinsics and relative pose from two point maps.
    RecoverCameras(RecoverArgs),
    /// Depth accuracy (rel, tau) after median alignment.
    EvalDepth(EvalDepthArgs),
    /// Open-vocabulary segmentation scores (mIoU, pixel accuracy).
    EvalSeg(EvalSegArgs),
    /// Image quality (PSNR, SSIM) of a rendered view against a reference.
    EvalImage(EvalImageArgs),
    /// Training loss between rendered and target directories.
    Loss(LossArgs),
    /// PCA visualization of a feature map.
    VizFeatures(VizArgs),
    /// Gradient and invariant checks on synthetic data.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Camera index when the camera file holds several.
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long)]
    out_rgb: PathBuf,
    #[arg(long)]
    out_depth: PathBuf,
    #[arg(long)]
    out_feature: PathBuf,
    /// Full-precision color as an image tensor.
    #[arg(long)]
    out_rgb_tensor: Option<PathBuf>,
    #[arg(long)]
    out_alpha: Option<PathBuf>,
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    background: [f64; 3],
    #[arg(long)]
    sh_degree: Option<u32>,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    #[arg(long)]
    pointmap1: PathBuf,
    #[arg(long)]
    conf1: PathBuf,
    #[arg(long)]
    pointmap2: PathBuf,
    #[arg(long)]
    conf2: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    ransac_seed: u64,
    #[arg(long, default_value_t = 256)]
    ransac_iters: usize,
    #[arg(long, default_value_t = 2.0)]
    inlier_px: f64,
}

#[derive(Args, Debug)]
struct EvalDepthArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Skip median alignment of the prediction.
    #[arg(long)]
    no_align: bool,
}

#[derive(Args, Debug)]
struct EvalImageArgs {
    /// PNG or image tensor.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args, Debug)]
struct EvalSegArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated class names, one per text embedding.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long)]
    render_dir: PathBuf,
    #[arg(long)]
    target_dir: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    l1: f64,
    #[arg(long, default_value_t = 0.3)]
    l2: f64,
    #[arg(long, default_value_t = 1.5)]
    l3: f64,
    #[arg(long, default_value_t = 0.2)]
    alpha_conf: f64,
}

#[derive(Args, Debug)]
struct VizArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected r,g,b, got '{s}'"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad component '{p}': {e}"))?;
        if !(0.0..=1.0).contains(o) {
            return Err(format!("component {o} is outside [0, 1]"));
        }
    }
    Ok(out)
}

/// An error with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn code_for(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Numerical => EXIT_NUMERICAL,
        ErrorKind::Data | ErrorKind::Io => EXIT_DATA,
    }
}

/// Attaches the offending flag and path to a library error.
fn ctx<T>(r: crate::Result<T>, flag: &str, path: &Path) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure {
        code: code_for(&e),
        message: format!("{flag} '{}': {e}", path.display()),
    })
}

fn lib<T>(r: crate::Result<T>, what: &str) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure {
        code: code_for(&e),
        message: format!("{what}: {e}"),
    })
}

fn load_image_tensor(path: &Path, flag: &str, tags: &[TensorTag]) -> std::result::Result<Image, Failure> {
    let t = ctx(io::load_tensor(path), flag, path)?;
    if !tags.contains(&t.tag()) {
        let names: Vec<&str> = tags.iter().map(|t| t.name()).collect();
        return Err(Failure {
            code: EXIT_DATA,
            message: format!(
                "{flag} '{}': expected a {} tensor, found {}",
                path.display(),
                names.join(" or "),
                t.tag().name()
            ),
        });
    }
    ctx(t.to_image(), flag, path)
}

fn load_pointmap(points: &Path, pflag: &str, conf: Option<(&Path, &str)>) -> std::result::Result<PointMap, Failure> {
    let pts = load_image_tensor(points, pflag, &[TensorTag::PointMap])?;
    let pm = ctx(PointMap::from_points(pts), pflag, points)?;
    match conf {
        Some((path, flag)) => {
            let c = load_image_tensor(path, flag, &[TensorTag::Confidence])?;
            ctx(pm.with_confidence(c), flag, path)
        }
        None => Ok(pm),
    }
}

fn load_mask(path: &Path, flag: &str) -> std::result::Result<Vec<bool>, Failure> {
    let m = load_image_tensor(path, flag, &[TensorTag::Mask])?;
    Ok(m.data().iter().map(|v| *v != 0.0).collect())
}

fn write_out(out: &mut dyn Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes()).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("writing output: {e}"),
    })
}

fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> CmdResult {
    let loaded = ctx(io::load_field(&a.field), "--field", &a.field)?;
    let cams = ctx(io::load_cameras(&a.camera), "--camera", &a.camera)?;
    let cam = cams.get(a.view).ok_or_else(|| {
        Failure::usage(format!(
            "--view {}: camera file '{}' holds {} camera(s)",
            a.view,
            a.camera.display(),
            cams.len()
        ))
    })?;
    let opts = RenderOptions {
        parallel: true,
        sh_degree: a.sh_degree,
    };
    let (img, state) = lib(render(&loaded.field, cam, a.background, &opts), "render")?;
    ctx(io::save_png(&a.out_rgb, &img.color), "--out-rgb", &a.out_rgb)?;
    let depth = lib(Tensor::from_image(TensorTag::Depth, &img.depth), "depth")?;
    ctx(io::save_tensor(&a.out_depth, &depth), "--out-depth", &a.out_depth)?;
    let feat = lib(Tensor::from_image(TensorTag::Feature, &img.feature), "feature")?;
    ctx(io::save_tensor(&a.out_feature, &feat), "--out-feature", &a.out_feature)?;
    if let Some(p) = &a.out_rgb_tensor {
        let t = lib(Tensor::from_image(TensorTag::Image, &img.color), "color")?;
        ctx(io::save_tensor(p, &t), "--out-rgb-tensor", p)?;
    }
    if let Some(p) = &a.out_alpha {
        let t = lib(Tensor::from_image(TensorTag::Image, &img.alpha), "alpha")?;
        ctx(io::save_tensor(p, &t), "--out-alpha", p)?;
    }
    write_out(
        out,
        &format!(
            "gaussians:{} visible:{} width:{} height:{}\n\
             rendered {} of {} gaussians at {}x{}; quaternions renormalized on load: {}\n",
            loaded.field.len(),
            state.projected().len(),
            cam.width,
            cam.height,
            state.projected().len(),
            loaded.field.len(),
            cam.width,
            cam.height,
            loaded.quaternion_corrections
        ),
    )
}

fn cmd_recover(a: &RecoverArgs, out: &mut dyn Write) -> CmdResult {
    if !(a.inlier_px > 0.0) {
        return Err(Failure::usage(format!(
            "--inlier-px must be positive, got {}",
            a.inlier_px
        )));
    }
    if a.ransac_iters == 0 {
        return Err(Failure::usage("--ransac-iters must be positive"));
    }
    let pm1 = load_pointmap(&a.pointmap1, "--pointmap1", Some((&a.conf1, "--conf1")))?;
    let pm2 = load_pointmap(&a.pointmap2, "--pointmap2", Some((&a.conf2, "--conf2")))?;
    let cfg = RecoveryConfig {
        ransac: RansacConfig {
            iterations: a.ransac_iters,
            threshold_px: a.inlier_px,
            seed: a.ransac_seed,
        },
        ..RecoveryConfig::default()
    };
    let rec = lib(recovery::recover_cameras(&pm1, &pm2, &cfg), "camera recovery")?;
    ctx(
        io::save_cameras(&a.out, &[rec.first.clone(), rec.second.clone()]),
        "--out",
        &a.out,
    )?;
    let t = rec.pose.translation;
    write_out(
        out,
        &format!(
            "focal:{:.6} f1:{:.6} f2:{:.6} inlier_ratio:{:.4}\n\
             averaged focal {:.4} px from views ({:.4}, {:.4}); view 2 translation ({:.6}, {:.6}, {:.6})\n",
            rec.focal,
            rec.focal_estimates[0].focal,
            rec.focal_estimates[1].focal,
            rec.pose.inlier_ratio,
            rec.focal,
            rec.focal_estimates[0].focal,
            rec.focal_estimates[1].focal,
            t.x,
            t.y,
            t.z
        ),
    )
}

fn cmd_eval_depth(a: &EvalDepthArgs, out: &mut dyn Write) -> CmdResult {
    let tags = [TensorTag::Depth, TensorTag::Image];
    let pred = load_image_tensor(&a.pred, "--pred", &tags)?;
    let gt = load_image_tensor(&a.gt, "--gt", &tags)?;
    let mask = a.mask.as_ref().map(|m| load_mask(m, "--mask")).transpose()?;
    let (pred, scale) = if a.no_align {
        (pred, 1.0)
    } else {
        lib(
            recovery::align_depth_median(&pred, &gt, mask.as_deref()),
            "median alignment",
        )?
    };
    let s = lib(metrics::depth_rel_tau(&pred, &gt, mask.as_deref()), "depth metrics")?;
    write_out(
        out,
        &format!(
            "rel:{:.2} tau:{:.2}\n\
             absolute relative error {:.4}%, inliers below ratio {} {:.4}%, alignment scale {:.6}\n",
            s.rel,
            s.tau,
            s.rel,
            metrics::TAU_THRESHOLD,
            s.tau,
            scale
        ),
    )
}

fn cmd_eval_seg(a: &EvalSegArgs, out: &mut dyn Write) -> CmdResult {
    let feats = load_image_tensor(&a.features, "--features", &[TensorTag::Feature])?;
    let text = ctx(io::load_tensor(&a.text), "--text", &a.text)?;
    ctx(
        text.expect_tag(TensorTag::Text, "--text").map(|_| ()),
        "--text",
        &a.text,
    )?;
    let (k, n) = (text.dims()[0], text.dims()[1]);
    let emb: Vec<Vec<f64>> = text
        .data()
        .chunks(n.max(1))
        .take(k)
        .map(|r| r.iter().map(|v| *v as f64).collect())
        .collect();
    let names = match &a.classes {
        Some(c) if c.len() != k => {
            return Err(Failure::usage(format!(
                "--classes lists {} names for {k} embeddings",
                c.len()
            )));
        }
        Some(c) => c.clone(),
        None if k == metrics::DEFAULT_CLASSES.len() => metrics::default_class_names(),
        None => (0..k).map(|i| format!("class{i}")).collect(),
    };
    let text = ctx(TextEmbeddingSet::new(names.clone(), emb), "--text", &a.text)?;
    let gt_t = load_image_tensor(&a.gt, "--gt", &[TensorTag::Labels])?;
    let mut labels = Vec::with_capacity(gt_t.num_pixels());
    for v in gt_t.data() {
        if *v == -1.0 {
            labels.push(IGNORE_LABEL);
        } else if *v >= 0.0 && v.fract() == 0.0 {
            labels.push(*v as u32);
        } else {
            return Err(Failure {
                code: EXIT_DATA,
                message: format!("--gt '{}': label {v} is not a class index or -1", a.gt.display()),
            });
        }
    }
    let gt = ctx(LabelMap::new(gt_t.width(), gt_t.height(), labels, names), "--gt", &a.gt)?;
    let pred = lib(metrics::open_vocab_segment(&feats, &text), "segmentation")?;
    let s = lib(metrics::miou_pixel_acc(&pred, &gt), "segmentation scores")?;
    let mut text_out = format!("miou:{:.4} acc:{:.4}\n", s.miou, s.accuracy);
    for (name, iou) in text.classes().iter().zip(&s.per_class_iou) {
        match iou {
            Some(v) => text_out.push_str(&format!("  {name}: IoU {v:.4}\n")),
            None => text_out.push_str(&format!("  {name}: absent\n")),
        }
    }
    write_out(out, &text_out)
}

fn load_rgb_file(path: &Path, flag: &str) -> std::result::Result<Image, Failure> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        ctx(io::load_png(path), flag, path)
    } else {
        load_image_tensor(path, flag, &[TensorTag::Image])
    }
}

fn cmd_eval_image(a: &EvalImageArgs, out: &mut dyn Write) -> CmdResult {
    let pred = load_rgb_file(&a.pred, "--pred")?;
    let gt = load_rgb_file(&a.gt, "--gt")?;
    let p = lib(metrics::psnr(&pred, &gt, 1.0), "PSNR")?;
    let s = lib(metrics::ssim(&pred, &gt), "SSIM")?;
    write_out(
        out,
        &format!(
            "psnr:{p:.2} ssim:{s:.4} lpips:n/a\n\
             PSNR {p:.4} dB (capped at {}), SSIM {s:.6}; LPIPS needs a pretrained network and is not computed\n",
            metrics::PSNR_CAP
        ),
    )
}

fn load_color(dir: &Path, flag: &str) -> std::result::Result<Image, Failure> {
    let t = dir.join("rgb.lsmt");
    if t.exists() {
        return load_image_tensor(&t, flag, &[TensorTag::Image]);
    }
    let p = dir.join("rgb.png");
    ctx(io::load_png(&p), flag, &p)
}

fn cmd_loss(a: &LossArgs, out: &mut dyn Write) -> CmdResult {
    let weights = LossWeights {
        lambda1: a.l1,
        lambda2: a.l2,
        lambda3: a.l3,
        alpha_conf: a.alpha_conf,
    };
    let color = load_color(&a.render_dir, "--render-dir")?;
    let feature = load_image_tensor(
        &a.render_dir.join("feature.lsmt"),
        "--render-dir",
        &[TensorTag::Feature],
    )?;
    let t_color = load_color(&a.target_dir, "--target-dir")?;
    let t_feature = load_image_tensor(
        &a.target_dir.join("feature.lsmt"),
        "--target-dir",
        &[TensorTag::Feature],
    )?;

    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for v in 1..=2 {
        let pp = a.render_dir.join(format!("pointmap{v}.lsmt"));
        let gp = a.target_dir.join(format!("pointmap{v}.lsmt"));
        if !pp.exists() && !gp.exists() {
            continue;
        }
        let cp = a.render_dir.join(format!("conf{v}.lsmt"));
        let conf = cp.exists().then_some((cp.as_path(), "--render-dir"));
        pred.push(load_pointmap(&pp, "--render-dir", conf)?);
        let mut g = load_pointmap(&gp, "--target-dir", None)?;
        let mp = a.target_dir.join(format!("mask{v}.lsmt"));
        if mp.exists() {
            let m = load_mask(&mp, "--target-dir")?;
            let valid: Vec<bool> = m.iter().zip(g.valid()).map(|(a, b)| *a && *b).collect();
            g = ctx(g.with_valid(valid), "--target-dir", &mp)?;
        }
        gt.push(g);
    }
    if pred.len() == 1 {
        return Err(Failure {
            code: EXIT_DATA,
            message: "point maps must be given for both views or neither".into(),
        });
    }
    let pair = (pred.len() == 2).then(|| PointMapPair {
        pred: [&pred[0], &pred[1]],
        gt: [&gt[0], &gt[1]],
    });
    let (w, h) = (color.width(), color.height());
    let render_out = RenderOutput {
        color,
        depth: Image::zeros(w, h, 1),
        alpha: Image::zeros(w, h, 1),
        feature,
    };
    let targets = LossTargets {
        color: &t_color,
        feature: &t_feature,
    };
    let b: LossBreakdown = lib(total_loss(&render_out, &targets, pair.as_ref(), &weights), "loss")?;
    write_out(
        out,
        &format!(
            "total:{:.6} photometric:{:.6} dssim:{:.6} semantic:{:.6} confidence:{:.6}\n\
             total loss {:.2} with weights l1={} l2={} l3={} alpha_conf={}{}\n",
            b.total,
            b.photometric,
            b.dssim,
            b.semantic,
            b.confidence,
            b.total,
            a.l1,
            a.l2,
            a.l3,
            a.alpha_conf,
            if pair.is_some() { "" } else { " (no point maps)" }
        ),
    )
}

fn cmd_viz(a: &VizArgs, out: &mut dyn Write) -> CmdResult {
    let feats = load_image_tensor(&a.features, "--features", &[TensorTag::Feature])?;
    let img = lib(metrics::pca_visualize(&feats), "PCA")?;
    ctx(io::save_png(&a.out, &img), "--out", &a.out)?;
    write_out(
        out,
        &format!(
            "width:{} height:{} channels:{}\nwrote PCA visualization of {}-dimensional features\n",
            img.width(),
            img.height(),
            feats.channels(),
            feats.channels()
        ),
    )
}

struct SelftestTally {
    passed: usize,
    failed: Vec<String>,
    lines: Vec<String>,
}

impl SelftestTally {
    fn check(&mut self, name: String, ok: bool, detail: String) {
        self.lines
            .push(format!("  [{}] {name}: {detail}", if ok { "ok" } else { "FAIL" }));
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(name);
        }
    }
}

fn cmd_selftest(a: &SelftestArgs, out: &mut dyn Write) -> CmdResult {
    let mut t = SelftestTally {
        passed: 0,
        failed: Vec::new(),
        lines: Vec::new(),
    };
    let cfg = SceneConfig::default();
    for s in 0..3 {
        let seed = a.seed.wrapping_mul(1000).wrapping_add(s);
        let (field, cam) = lib(random_scene(seed, &cfg), "scene")?;
        let up = random_upstream(&mut rng(seed ^ 0x5eed), &cam, field.feature_dim());
        let rep = lib(gradcheck(&field, &cam, [0.2, 0.4, 0.6], &up), "gradcheck")?;
        t.check(
            format!("rasterizer gradients, scene {seed}"),
            rep.passed(),
            format!("{} entries, max abs error {:.2e}", rep.checked, rep.max_abs_err),
        );
        let serial = RenderOptions {
            parallel: false,
            sh_degree: None,
        };
        let (a_out, _) = lib(render(&field, &cam, [0.0; 3], &serial), "render")?;
        let (b_out, _) = lib(render(&field, &cam, [0.0; 3], &RenderOptions::default()), "render")?;
        let perm: Vec<usize> = (0..field.len()).rev().collect();
        let (c_out, _) = lib(render(&field.permuted(&perm), &cam, [0.0; 3], &serial), "render")?;
        let alpha_ok = a_out.alpha.data().iter().all(|v| (0.0..=1.0).contains(v));
        t.check(
            format!("blending invariants, scene {seed}"),
            a_out == b_out && a_out == c_out && alpha_ok,
            "serial = parallel = permuted, alpha in [0, 1]".into(),
        );
    }
    let mut r = rng(a.seed);
    let params = lib(AttentionBlockParams::random(&mut r, 8, 1, 0.5), "attention")?;
    let p = lib(
        TokenMatrix::new(TokenRole::Point, random_matrix(&mut r, 4, 8)),
        "tokens",
    )?;
    let f = lib(
        TokenMatrix::new(TokenRole::Semantic, random_matrix(&mut r, 4, 8)),
        "tokens",
    )?;
    let w = random_matrix(&mut r, 4, 8);
    let rep = lib(attention_gradcheck(&params, &p, &f, &w), "attention gradcheck")?;
    t.check(
        "attention gradients".into(),
        rep.passed(),
        format!("{} entries, max error {:.2e}", rep.checked, rep.max_error),
    );
    let total = LossBreakdown::from_components(1.0, 1.0, 1.0, 1.0, &LossWeights::default()).total;
    t.check(
        "loss weighting".into(),
        total == 3.05,
        format!("unit components give {total}"),
    );

    let status = if t.failed.is_empty() { "pass" } else { "fail" };
    let mut text = format!(
        "selftest:{status} checks:{} failures:{}\n",
        t.passed + t.failed.len(),
        t.failed.len()
    );
    for l in &t.lines {
        text.push_str(l);
        text.push('\n');
    }
    write_out(out, &text)?;
    if t.failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("selftest failed: {}", t.failed.join(", ")),
        })
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Render(a) => cmd_render(a, out),
        Command::RecoverCameras(a) => cmd_recover(a, out),
        Command::EvalDepth(a) => cmd_eval_depth(a, out),
        Command::EvalSeg(a) => cmd_eval_seg(a, out),
        Command::EvalImage(a) => cmd_eval_image(a, out),
        Command::Loss(a) => cmd_loss(a, out),
        Command::VizFeatures(a) => cmd_viz(a, out),
        Command::Selftest(a) => cmd_selftest(a, out),
    }
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with_output<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let mut buf: Vec<u8> = Vec::new();
    let result = match cli.threads {
        Some(0) => Err(Failure::usage("--threads must be positive")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &mut buf)),
            Err(e) => Err(Failure::usage(format!("--threads {n}: {e}"))),
        },
        None => dispatch(&cli.command, &mut buf),
    };
    let _ = out.write_all(&buf).and_then(|_| out.flush());
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Runs the CLI on the process's standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_output(argv, &mut stdout.lock(), &mut stderr.lock())
}
