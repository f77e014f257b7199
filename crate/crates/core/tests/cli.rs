use std::path::Path;
use std::process::{Command, Output};

use lsm_core::field::SemanticGaussianField;
use lsm_core::image::Image;
use lsm_core::io::{self, Tensor, TensorTag};
use lsm_core::raster::{render_forward, Camera};
use lsm_core::synthetic::{pointmap_from_depth, random_image, rng, two_view_scene};

fn lsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsm"))
        .args(args)
        .output()
        .expect("spawn lsm")
}

fn first_line(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .next()
        .unwrap_or("")
        .to_string()
}

fn value(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}:")))
        .unwrap_or_else(|| panic!("no {key} in '{line}'"))
        .parse()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn save_depth(path: &Path, img: &Image) {
    io::save_tensor(path, &Tensor::from_image(TensorTag::Depth, img).unwrap()).unwrap();
}

#[test]
fn empty_field_renders_background() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("f.sgf");
    let cam = dir.path().join("c.json");
    io::save_field(&field, &SemanticGaussianField::empty(0, 3).unwrap()).unwrap();
    io::save_camera(&cam, &Camera::centered(5.0, 6, 4).unwrap()).unwrap();
    let rgb = dir.path().join("rgb.png");
    let depth = dir.path().join("d.lsmt");
    let feat = dir.path().join("s.lsmt");
    let o = lsm(&[
        "render",
        "--field",
        p(&field),
        "--camera",
        p(&cam),
        "--out-rgb",
        p(&rgb),
        "--out-depth",
        p(&depth),
        "--out-feature",
        p(&feat),
        "--background",
        "0.2,0.4,1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first_line(&o), "gaussians:0 visible:0 width:6 height:4");
    let img = io::load_png(&rgb).unwrap();
    for px in img.data().chunks(3) {
        assert_eq!(px, [51.0 / 255.0, 102.0 / 255.0, 1.0]);
    }
    let d = io::load_tensor(&depth).unwrap();
    assert_eq!(d.dims(), [4, 6]);
    assert!(d.data().iter().all(|v| *v == 0.0));
    let f = io::load_tensor(&feat).unwrap();
    assert_eq!(f.dims(), [4, 6, 3]);
}

#[test]
fn eval_depth_reports_rel_and_tau() {
    let dir = tempfile::tempdir().unwrap();
    let gt = random_image(&mut rng(3), 7, 5, 1, 1.0, 4.0);
    let gp = dir.path().join("gt.lsmt");
    save_depth(&gp, &gt);
    let cases = [
        (1.0, "rel:0.00 tau:100.00"),
        (1.02, "rel:2.00 tau:100.00"),
        (1.05, "rel:5.00 tau:0.00"),
    ];
    for (s, want) in cases {
        let pp = dir.path().join(format!("pred{s}.lsmt"));
        save_depth(&pp, &gt.scaled(s));
        let o = lsm(&["eval-depth", "--pred", p(&pp), "--gt", p(&gp), "--no-align"]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(first_line(&o), want);
    }
    // median alignment removes a global scale
    let pp = dir.path().join("scaled.lsmt");
    save_depth(&pp, &gt.scaled(3.0));
    let o = lsm(&["eval-depth", "--pred", p(&pp), "--gt", p(&gp)]);
    assert_eq!(first_line(&o), "rel:0.00 tau:100.00");
}

#[test]
fn loss_of_identical_directories_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(9);
    let color = random_image(&mut r, 16, 12, 3, 0.0, 1.0);
    let feat = random_image(&mut r, 16, 12, 5, -1.0, 1.0);
    let pts = random_image(&mut r, 16, 12, 3, 0.5, 2.0);
    for sub in ["render", "target"] {
        let d = dir.path().join(sub);
        std::fs::create_dir(&d).unwrap();
        io::save_tensor(
            d.join("rgb.lsmt"),
            &Tensor::from_image(TensorTag::Image, &color).unwrap(),
        )
        .unwrap();
        io::save_tensor(
            d.join("feature.lsmt"),
            &Tensor::from_image(TensorTag::Feature, &feat).unwrap(),
        )
        .unwrap();
        for v in 1..=2 {
            let t = Tensor::from_image(TensorTag::PointMap, &pts).unwrap();
            io::save_tensor(d.join(format!("pointmap{v}.lsmt")), &t).unwrap();
        }
    }
    let o = lsm(&[
        "loss",
        "--render-dir",
        p(&dir.path().join("render")),
        "--target-dir",
        p(&dir.path().join("target")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let line = first_line(&o);
    assert!(line.starts_with("total:0.000000 "), "{line}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("total loss 0.00"));
}

#[test]
fn eval_seg_with_matching_text_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h, k, n) = (5, 4, 3, 4);
    let emb: Vec<f32> = (0..k * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let mut feats = Image::zeros(w, h, n);
    let mut labels = Image::zeros(w, h, 1);
    for px in 0..w * h {
        let c = px % k;
        feats.pixel_mut(px)[c] = 2.0;
        labels.pixel_mut(px)[0] = if px == 7 { -1.0 } else { c as f64 };
    }
    let fp = dir.path().join("s.lsmt");
    let tp = dir.path().join("t.lsmt");
    let lp = dir.path().join("l.lsmt");
    io::save_tensor(&fp, &Tensor::from_image(TensorTag::Feature, &feats).unwrap()).unwrap();
    io::save_tensor(&tp, &Tensor::new(TensorTag::Text, vec![k, n], emb).unwrap()).unwrap();
    io::save_tensor(&lp, &Tensor::from_image(TensorTag::Labels, &labels).unwrap()).unwrap();
    let o = lsm(&[
        "eval-seg",
        "--features",
        p(&fp),
        "--text",
        p(&tp),
        "--gt",
        p(&lp),
        "--classes",
        "a,b,c",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first_line(&o), "miou:1.0000 acc:1.0000");

    let o = lsm(&[
        "eval-seg",
        "--features",
        p(&fp),
        "--text",
        p(&tp),
        "--gt",
        p(&lp),
        "--classes",
        "a,b",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn viz_features_writes_png() {
    let dir = tempfile::tempdir().unwrap();
    let feats = random_image(&mut rng(4), 6, 5, 8, -1.0, 1.0);
    let fp = dir.path().join("s.lsmt");
    let out = dir.path().join("pca.png");
    io::save_tensor(&fp, &Tensor::from_image(TensorTag::Feature, &feats).unwrap()).unwrap();
    let o = lsm(&["viz-features", "--features", p(&fp), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first_line(&o), "width:6 height:5 channels:8");
    let img = io::load_png(&out).unwrap();
    assert_eq!((img.width(), img.height()), (6, 5));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lsm(&[]).status.code(), Some(2));
    assert_eq!(lsm(&["render"]).status.code(), Some(2));
    assert_eq!(lsm(&["eval-depth", "--pred", "x"]).status.code(), Some(2));
    assert_eq!(lsm(&["--help"]).status.code(), Some(0));
    assert_eq!(lsm(&["--threads", "0", "selftest"]).status.code(), Some(2));

    let missing = dir.path().join("missing.lsmt");
    let o = lsm(&["eval-depth", "--pred", p(&missing), "--gt", p(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--pred"));

    let garbage = dir.path().join("garbage.lsmt");
    std::fs::write(&garbage, b"not a tensor").unwrap();
    let o = lsm(&["eval-depth", "--pred", p(&garbage), "--gt", p(&garbage)]);
    assert_eq!(o.status.code(), Some(3));

    // confidence below one violates the point-map contract
    let pm = dir.path().join("pm.lsmt");
    let conf = dir.path().join("conf.lsmt");
    let pts = random_image(&mut rng(1), 4, 4, 3, 1.0, 2.0);
    io::save_tensor(&pm, &Tensor::from_image(TensorTag::PointMap, &pts).unwrap()).unwrap();
    let c = Image::filled(4, 4, 1, 0.5);
    io::save_tensor(&conf, &Tensor::from_image(TensorTag::Confidence, &c).unwrap()).unwrap();
    let out = dir.path().join("cams.json");
    let o = lsm(&[
        "recover-cameras",
        "--pointmap1",
        p(&pm),
        "--conf1",
        p(&conf),
        "--pointmap2",
        p(&pm),
        "--conf2",
        p(&conf),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));

    // zero ground-truth depth is invalid
    let z = dir.path().join("z.lsmt");
    save_depth(&z, &Image::zeros(3, 3, 1));
    let o = lsm(&["eval-depth", "--pred", p(&z), "--gt", p(&z), "--no-align"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn selftest_passes() {
    let o = lsm(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(first_line(&o).starts_with("selftest:pass "));
}

#[test]
fn recover_and_rerender_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (field, cams) = two_view_scene(5, 40, 48, 36, 40.0).unwrap();
    io::save_field(d.join("field.sgf"), &field).unwrap();
    for (v, cam) in cams.iter().enumerate() {
        let out = render_forward(&field, cam, [0.0; 3]).unwrap();
        let pm = pointmap_from_depth(&out.depth, &out.alpha, cam, &cams[0], 0.5).unwrap();
        let t = Tensor::from_image(TensorTag::PointMap, pm.points()).unwrap();
        io::save_tensor(d.join(format!("pm{v}.lsmt")), &t).unwrap();
        let conf = Image::from_fn(cam.width, cam.height, 1, |x, y, _| 1.0 + out.alpha.get(x, y, 0));
        let c = Tensor::from_image(TensorTag::Confidence, &conf).unwrap();
        io::save_tensor(d.join(format!("c{v}.lsmt")), &c).unwrap();
    }
    let cams_path = d.join("cams.json");
    let o = lsm(&[
        "recover-cameras",
        "--pointmap1",
        p(&d.join("pm0.lsmt")),
        "--conf1",
        p(&d.join("c0.lsmt")),
        "--pointmap2",
        p(&d.join("pm1.lsmt")),
        "--conf2",
        p(&d.join("c1.lsmt")),
        "--out",
        p(&cams_path),
        "--ransac-seed",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let focal = value(&first_line(&o), "focal");
    assert!((focal - 40.0).abs() < 1e-6, "{focal}");
    let rec = io::load_cameras(&cams_path).unwrap();
    assert_eq!(rec.len(), 2);
    for (a, b) in rec.iter().zip(&cams) {
        assert!((a.rotation - b.rotation).norm() < 1e-6);
        assert!((a.translation - b.translation).norm() < 1e-6);
    }
    for view in ["0", "1"] {
        let o = lsm(&[
            "render",
            "--field",
            p(&d.join("field.sgf")),
            "--camera",
            p(&cams_path),
            "--view",
            view,
            "--out-rgb",
            p(&d.join(format!("rgb{view}.png"))),
            "--out-depth",
            p(&d.join("d.lsmt")),
            "--out-feature",
            p(&d.join("f.lsmt")),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = lsm(&[
        "render",
        "--field",
        p(&d.join("field.sgf")),
        "--camera",
        p(&cams_path),
        "--view",
        "2",
        "--out-rgb",
        p(&d.join("x.png")),
        "--out-depth",
        p(&d.join("d.lsmt")),
        "--out-feature",
        p(&d.join("f.lsmt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_image_reports_psnr_ssim_and_lpips_placeholder() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(&mut rng(6), 12, 12, 3, 0.0, 1.0);
    let a = dir.path().join("a.lsmt");
    io::save_tensor(&a, &Tensor::from_image(TensorTag::Image, &img).unwrap()).unwrap();
    let png = dir.path().join("a.png");
    io::save_png(&png, &img).unwrap();
    let o = lsm(&["eval-image", "--pred", p(&a), "--gt", p(&a)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first_line(&o), "psnr:100.00 ssim:1.0000 lpips:n/a");
    let o = lsm(&["eval-image", "--pred", p(&png), "--gt", p(&a)]);
    let line = first_line(&o);
    // 8-bit quantization error is at most half a step
    assert!(value(&line, "psnr") > 20.0 * (2.0 * 255.0f64).log10() - 1e-9, "{line}");
}
