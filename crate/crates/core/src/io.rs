//! File formats.
//!
//! Field files (`SGF1`) and tensor files (`LSMT`) are little-endian with a
//! fixed header followed by a flat 32-bit float payload. Cameras are JSON.
//! Color images are 8-bit PNG.
//!
//! Field header, 24 bytes:
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | `[u8; 4]` | `SGF1` |
//! | 4 | `u8` | endianness, 1 = little |
//! | 5 | `u8` | SH degree K |
//! | 6 | `u16` | reserved, 0 |
//! | 8 | `u32` | feature dim N |
//! | 12 | `u64` | gaussian count |
//! | 20 | `u32` | floats per record, `11 + 3 (K+1)^2 + N` |
//!
//! Tensor header: `LSMT`, `u8` endianness, `u8` element type (1 = f32),
//! `u8` tag, `u8` rank, then `rank` dimensions as `u64`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{num_coeffs, SemanticGaussian, SemanticGaussianField, MAX_SH_DEGREE};
use crate::image::Image;
use crate::raster::Camera;

pub const FIELD_MAGIC: &[u8; 4] = b"SGF1";
pub const TENSOR_MAGIC: &[u8; 4] = b"LSMT";
const LITTLE_ENDIAN: u8 = 1;
const DTYPE_F32: u8 = 1;
const FIELD_HEADER_LEN: usize = 24;

/// Loaded quaternions whose norm is off by more than this are renormalized.
pub const QUATERNION_RENORM_TOL: f64 = 1e-6;
/// Renormalizations larger than this are reported.
pub const QUATERNION_FLAG_TOL: f64 = 1e-4;

fn record_floats(sh_degree: u32, feature_dim: usize) -> usize {
    SemanticGaussian::param_count(sh_degree, feature_dim)
}

fn put_f32s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes a field; every value is rounded to 32 bits.
pub fn field_to_bytes(field: &SemanticGaussianField) -> Vec<u8> {
    let k = field.sh_degree();
    let n = field.feature_dim();
    let rec = record_floats(k, n);
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 4 * rec * field.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.push(LITTLE_ENDIAN);
    out.push(k as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(field.len() as u64).to_le_bytes());
    out.extend_from_slice(&(rec as u32).to_le_bytes());
    for g in field.gaussians() {
        put_f32s(&mut out, g.params());
    }
    out
}

/// A loaded field and the number of quaternions whose renormalization
/// exceeded [`QUATERNION_FLAG_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedField {
    pub field: SemanticGaussianField,
    pub quaternion_corrections: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("payload size overflows".into()))?,
        )?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader<'_>, magic: &[u8; 4], what: &str) -> Result<()> {
    let m = r.take(4)?;
    if m != magic {
        return Err(Error::Format(format!("bad {what} magic {m:?}")));
    }
    let e = r.u8()?;
    if e != LITTLE_ENDIAN {
        return Err(Error::Format(format!("unsupported endianness flag {e}")));
    }
    Ok(())
}

pub fn field_from_bytes(bytes: &[u8]) -> Result<LoadedField> {
    let mut r = Reader { bytes, pos: 0 };
    check_magic(&mut r, FIELD_MAGIC, "field")?;
    let k = r.u8()? as u32;
    if k > MAX_SH_DEGREE {
        return Err(Error::UnsupportedShDegree(k));
    }
    let _reserved = r.u16()?;
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(Error::Format("feature dimension must be positive".into()));
    }
    let count = r.u64()?;
    let rec = r.u32()? as usize;
    if rec != record_floats(k, n) {
        return Err(Error::Format(format!(
            "record length {rec} does not match degree {k} and feature dim {n}"
        )));
    }
    let count = usize::try_from(count).map_err(|_| Error::Format("gaussian count too large".into()))?;
    let payload = r.f32s(
        count
            .checked_mul(rec)
            .ok_or_else(|| Error::Format("payload size overflows".into()))?,
    )?;
    r.expect_end()?;

    let n_sh = num_coeffs(k);
    let mut corrections = 0;
    let mut gaussians = Vec::with_capacity(count);
    for rec_vals in payload.chunks_exact(rec.max(1)).take(count) {
        let v: Vec<f64> = rec_vals.iter().map(|x| *x as f64).collect();
        let mut q = [v[6], v[7], v[8], v[9]];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 1e-8) || !norm.is_finite() {
            return Err(Error::DegenerateRotation(norm));
        }
        if (norm - 1.0).abs() > QUATERNION_RENORM_TOL {
            q = q.map(|c| c / norm);
            if (norm - 1.0).abs() > QUATERNION_FLAG_TOL {
                corrections += 1;
            }
        }
        let sh = (0..n_sh)
            .map(|i| [v[11 + 3 * i], v[12 + 3 * i], v[13 + 3 * i]])
            .collect();
        gaussians.push(SemanticGaussian {
            center: [v[0], v[1], v[2]],
            log_scale: [v[3], v[4], v[5]],
            rotation: q,
            opacity_logit: v[10],
            sh,
            semantic: v[11 + 3 * n_sh..].to_vec(),
        });
    }
    let field = SemanticGaussianField::new(k, n, gaussians)?;
    field.validate()?;
    Ok(LoadedField {
        field,
        quaternion_corrections: corrections,
    })
}

pub fn save_field(path: impl AsRef<Path>, field: &SemanticGaussianField) -> Result<()> {
    Ok(fs::write(path, field_to_bytes(field))?)
}

pub fn load_field(path: impl AsRef<Path>) -> Result<LoadedField> {
    field_from_bytes(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorTag {
    /// `H x W x 3`.
    PointMap,
    /// `H x W` or `H x W x 1`.
    Confidence,
    /// `H x W` or `H x W x 1`.
    Depth,
    /// `H x W x N`.
    Feature,
    /// `H x W x C`, C in {1, 3}.
    Image,
    /// `H x W`, nonzero = valid.
    Mask,
    /// `H x W` class indices, -1 = ignore.
    Labels,
    /// `K x N` text embeddings, one row per class.
    Text,
}

impl TensorTag {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Result<Self> {
        use TensorTag::*;
        [PointMap, Confidence, Depth, Feature, Image, Mask, Labels, Text]
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown tensor tag {c}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            TensorTag::PointMap => "pointmap",
            TensorTag::Confidence => "confidence",
            TensorTag::Depth => "depth",
            TensorTag::Feature => "feature",
            TensorTag::Image => "image",
            TensorTag::Mask => "mask",
            TensorTag::Labels => "labels",
            TensorTag::Text => "text",
        }
    }

    fn check_dims(self, dims: &[usize]) -> Result<()> {
        let ok = match self {
            TensorTag::PointMap => dims.len() == 3 && dims[2] == 3,
            TensorTag::Confidence | TensorTag::Depth => dims.len() == 2 || (dims.len() == 3 && dims[2] == 1),
            TensorTag::Feature => dims.len() == 3 && dims[2] >= 1,
            TensorTag::Image => dims.len() == 3 && (dims[2] == 1 || dims[2] == 3),
            TensorTag::Mask | TensorTag::Labels | TensorTag::Text => dims.len() == 2,
        };
        if !ok {
            return Err(Error::Format(format!(
                "{} tensor cannot have dims {dims:?}",
                self.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    tag: TensorTag,
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(tag: TensorTag, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Format("rank-0 tensors are not supported".into()));
        }
        tag.check_dims(&dims)?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        if len != data.len() {
            return Err(Error::shape("tensor payload", len, data.len()));
        }
        Ok(Self { tag, dims, data })
    }

    /// Rank-3 `H x W x C` tensor from an image, rounded to 32 bits.
    pub fn from_image(tag: TensorTag, img: &Image) -> Result<Self> {
        let dims = match tag {
            TensorTag::Confidence | TensorTag::Depth | TensorTag::Mask | TensorTag::Labels if img.channels() == 1 => {
                vec![img.height(), img.width()]
            }
            _ => vec![img.height(), img.width(), img.channels()],
        };
        Self::new(tag, dims, img.data().iter().map(|v| *v as f32).collect())
    }

    pub fn tag(&self) -> TensorTag {
        self.tag
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Interprets the tensor as `H x W x C` (rank 2 means one channel).
    pub fn to_image(&self) -> Result<Image> {
        let (h, w, c) = match self.dims.as_slice() {
            [h, w] => (*h, *w, 1),
            [h, w, c] => (*h, *w, *c),
            d => return Err(Error::Format(format!("tensor with dims {d:?} is not an image"))),
        };
        Image::from_vec(w, h, c, self.data.iter().map(|v| *v as f64).collect())
    }

    pub fn expect_tag(&self, tag: TensorTag, what: &str) -> Result<&Self> {
        if self.tag != tag {
            return Err(Error::Format(format!(
                "{what}: expected a {} tensor, found {}",
                tag.name(),
                self.tag.name()
            )));
        }
        Ok(self)
    }
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(LITTLE_ENDIAN);
    out.push(DTYPE_F32);
    out.push(t.tag.code());
    out.push(t.dims.len() as u8);
    for d in &t.dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    check_magic(&mut r, TENSOR_MAGIC, "tensor")?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported element type {dtype}")));
    }
    let tag = TensorTag::from_code(r.u8()?)?;
    let rank = r.u8()? as usize;
    if rank == 0 {
        return Err(Error::Format("rank-0 tensors are not supported".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension too large".into()))?);
    }
    tag.check_dims(&dims)?;
    let len = dims
        .iter()
        .try_fold(1usize, |a, d| a.checked_mul(*d))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let data = r.f32s(len)?;
    r.expect_end()?;
    Tensor::new(tag, dims, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    Ok(fs::write(path, tensor_to_bytes(t))?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    tensor_from_bytes(&fs::read(path)?)
}

/// JSON form of a camera. `R` is row-major world-to-camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&Camera> for CameraJson {
    fn from(c: &Camera) -> Self {
        let r = c.rotation;
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            r: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl CameraJson {
    pub fn to_camera(&self) -> Result<Camera> {
        Camera::new(
            (self.fx, self.fy),
            (self.cx, self.cy),
            (self.width, self.height),
            Matrix3::from_row_slice(&self.r),
            Vector3::from(self.t),
        )
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraFile {
    One(CameraJson),
    Many(Vec<CameraJson>),
}

/// Reads a camera file holding one camera object or an array of them.
pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let text = fs::read_to_string(path)?;
    match serde_json::from_str::<CameraFile>(&text)? {
        CameraFile::One(c) => Ok(vec![c.to_camera()?]),
        CameraFile::Many(v) => v.iter().map(CameraJson::to_camera).collect(),
    }
}

pub fn save_camera(path: impl AsRef<Path>, cam: &Camera) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&CameraJson::from(cam))?;
    s.push('\n');
    Ok(fs::write(path, s)?)
}

pub fn save_cameras(path: impl AsRef<Path>, cams: &[Camera]) -> Result<()> {
    let v: Vec<CameraJson> = cams.iter().map(CameraJson::from).collect();
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(fs::write(path, s)?)
}

/// 8-bit quantization with round-to-nearest after clamping to `[0, 1]`.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel image as an 8-bit PNG.
pub fn save_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|v| quantize_u8(*v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)?,
        3 => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)?,
        c => {
            return Err(Error::InvalidInput(format!(
                "PNG output needs 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

/// Reads a PNG as RGB with values in `[0, 1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Image::from_vec(
        w as usize,
        h as usize,
        3,
        img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
    )
}
