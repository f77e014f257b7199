//! Semantic anisotropic Gaussians: geometry, view-dependent appearance and a
//! per-primitive semantic embedding.

pub(crate) mod covariance;
pub mod sh;

pub use covariance::{covariance_from_scale_rotation, rotation_from_quaternion};
pub use sh::{num_coeffs, sh_basis_eval, ShBasis, MAX_SH_DEGREE};

use crate::error::{Error, Result};

/// Default SH degree for newly created fields.
pub const DEFAULT_SH_DEGREE: u32 = 3;

/// One primitive of the scene.
///
/// Scale is stored as its natural log and opacity as a logit so every
/// parameter is unconstrained. The quaternion is `(w, x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGaussian {
    pub center: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// `(K+1)^2` RGB coefficients, band-major.
    pub sh: Vec<[f64; 3]>,
    pub semantic: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl SemanticGaussian {
    /// Creates a Gaussian, normalizing the rotation quaternion.
    pub fn new(
        center: [f64; 3],
        log_scale: [f64; 3],
        rotation: [f64; 4],
        opacity_logit: f64,
        sh: Vec<[f64; 3]>,
        semantic: Vec<f64>,
    ) -> Result<Self> {
        let rotation = normalize_quaternion(rotation)?;
        Ok(Self {
            center,
            log_scale,
            rotation,
            opacity_logit,
            sh,
            semantic,
        })
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    /// Number of scalar parameters in the flat layout of [`Self::params`].
    pub fn param_count(sh_degree: u32, feature_dim: usize) -> usize {
        3 + 3 + 4 + 1 + 3 * num_coeffs(sh_degree) + feature_dim
    }

    /// Flattens the parameters as position, log-scale, quaternion,
    /// opacity logit, SH (coefficient-major, RGB inner), semantic.
    pub fn params(&self) -> Vec<f64> {
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

    /// Inverse of [`Self::params`]; the quaternion is written unmodified.
    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let want = 11 + 3 * self.sh.len() + self.semantic.len();
        if p.len() != want {
            return Err(Error::shape("gaussian parameter vector", want, p.len()));
        }
        self.center.copy_from_slice(&p[0..3]);
        self.log_scale.copy_from_slice(&p[3..6]);
        self.rotation.copy_from_slice(&p[6..10]);
        self.opacity_logit = p[10];
        let mut o = 11;
        for c in &mut self.sh {
            c.copy_from_slice(&p[o..o + 3]);
            o += 3;
        }
        self.semantic.copy_from_slice(&p[o..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

pub(crate) fn normalize_quaternion(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 1e-8) || !n.is_finite() {
        return Err(Error::DegenerateRotation(n));
    }
    Ok(q.map(|v| v / n))
}

/// View-dependent color `sum_i c_i B_i(d)` clamped to `[0, 1]`.
///
/// `direction` should be unit length; it is normalized otherwise.
pub fn color_from_sh(g: &SemanticGaussian, direction: [f64; 3]) -> Result<[f64; 3]> {
    let raw = color_from_sh_unclamped(g, direction)?;
    Ok(raw.map(|c| c.clamp(0.0, 1.0)))
}

/// The pre-clamp color, which is what gradients are taken through.
pub fn color_from_sh_unclamped(g: &SemanticGaussian, direction: [f64; 3]) -> Result<[f64; 3]> {
    let degree = degree_from_coeffs(g.sh.len())?;
    let basis = sh_basis_eval(direction, degree)?;
    let mut c = [0.0; 3];
    for (coeff, b) in g.sh.iter().zip(&basis.values) {
        for ch in 0..3 {
            c[ch] += coeff[ch] * b;
        }
    }
    Ok(c)
}

pub fn degree_from_coeffs(n: usize) -> Result<u32> {
    match n {
        1 => Ok(0),
        4 => Ok(1),
        9 => Ok(2),
        16 => Ok(3),
        _ => Err(Error::InvalidInput(format!(
            "{n} SH coefficients per channel does not correspond to a degree in 0..=3"
        ))),
    }
}

/// Colored point `(x, y, z, r, g, b)` lifted from a point map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPrimitive {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

impl PointPrimitive {
    pub fn new(position: [f64; 3], color: [f64; 3]) -> Result<Self> {
        if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput(format!("point color {color:?} outside [0, 1]")));
        }
        Ok(Self { position, color })
    }
}

/// Ordered set of Gaussians sharing an SH degree and semantic width.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGaussianField {
    sh_degree: u32,
    feature_dim: usize,
    gaussians: Vec<SemanticGaussian>,
}

impl SemanticGaussianField {
    pub fn new(sh_degree: u32, feature_dim: usize, gaussians: Vec<SemanticGaussian>) -> Result<Self> {
        sh::check_degree(sh_degree)?;
        if feature_dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        let field = Self {
            sh_degree,
            feature_dim,
            gaussians,
        };
        field.check_members()?;
        Ok(field)
    }

    pub fn empty(sh_degree: u32, feature_dim: usize) -> Result<Self> {
        Self::new(sh_degree, feature_dim, Vec::new())
    }

    pub fn sh_degree(&self) -> u32 {
        self.sh_degree
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[SemanticGaussian] {
        &self.gaussians
    }

    /// Mutable access for optimizers and finite-difference probes. The
    /// slice cannot change length; per-member widths are re-checked by
    /// [`Self::validate`].
    pub fn gaussians_mut(&mut self) -> &mut [SemanticGaussian] {
        &mut self.gaussians
    }

    pub fn push(&mut self, g: SemanticGaussian) -> Result<()> {
        self.check_member(&g, self.gaussians.len())?;
        self.gaussians.push(g);
        Ok(())
    }

    /// Returns a copy with the Gaussians reordered by `perm` (`out[i] = self[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            gaussians: perm.iter().map(|&i| self.gaussians[i].clone()).collect(),
            ..self.clone()
        }
    }

    fn check_member(&self, g: &SemanticGaussian, i: usize) -> Result<()> {
        let k = num_coeffs(self.sh_degree);
        if g.sh.len() != k {
            return Err(Error::InvalidInput(format!(
                "gaussian {i}: {} SH coefficients, field degree {} needs {k}",
                g.sh.len(),
                self.sh_degree
            )));
        }
        if g.semantic.len() != self.feature_dim {
            return Err(Error::InvalidInput(format!(
                "gaussian {i}: semantic width {} differs from field width {}",
                g.semantic.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    fn check_members(&self) -> Result<()> {
        self.gaussians
            .iter()
            .enumerate()
            .try_for_each(|(i, g)| self.check_member(g, i))
    }

    /// Checks widths and that every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        self.check_members()?;
        for (i, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::InvalidInput(format!("gaussian {i} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian(sh: Vec<[f64; 3]>) -> SemanticGaussian {
        SemanticGaussian::new([0.0; 3], [0.0; 3], [1.0, 0.0, 0.0, 0.0], 0.0, sh, vec![0.0; 2]).unwrap()
    }

    #[test]
    fn dc_term_reproduces_color() {
        let g = gaussian(vec![[2.0 * PI.sqrt(), 0.0, 0.0]]);
        for d in [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]] {
            let c = color_from_sh(&g, d).unwrap();
            assert!((c[0] - 1.0).abs() < 1e-12);
            assert_eq!(c[1], 0.0);
            assert_eq!(c[2], 0.0);
        }
    }

    #[test]
    fn zero_coefficients_give_black() {
        let g = gaussian(vec![[0.0; 3]; 16]);
        assert_eq!(color_from_sh(&g, [0.0, 0.6, 0.8]).unwrap(), [0.0; 3]);
    }

    #[test]
    fn band_one_is_odd() {
        let mut sh = vec![[0.0; 3]; 4];
        sh[1] = [0.3, -0.2, 0.1];
        sh[2] = [0.5, 0.4, -0.7];
        sh[3] = [-0.1, 0.9, 0.2];
        let g = gaussian(sh);
        let d = [0.48, -0.6, 0.64];
        let a = color_from_sh_unclamped(&g, d).unwrap();
        let b = color_from_sh_unclamped(&g, d.map(|v| -v)).unwrap();
        for ch in 0..3 {
            assert!((a[ch] + b[ch]).abs() < 1e-14);
        }
    }

    #[test]
    fn constructor_normalizes_quaternion() {
        let g =
            SemanticGaussian::new([0.0; 3], [0.0; 3], [2.0, 0.0, 0.0, 0.0], 0.0, vec![[0.0; 3]], vec![1.0]).unwrap();
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert!(SemanticGaussian::new([0.0; 3], [0.0; 3], [0.0; 4], 0.0, vec![[0.0; 3]], vec![1.0]).is_err());
    }

    #[test]
    fn field_rejects_mismatched_members() {
        let g = gaussian(vec![[0.0; 3]; 4]);
        assert!(SemanticGaussianField::new(1, 2, vec![g.clone()]).is_ok());
        assert!(SemanticGaussianField::new(2, 2, vec![g.clone()]).is_err());
        assert!(SemanticGaussianField::new(1, 3, vec![g]).is_err());
        assert!(SemanticGaussianField::new(4, 3, vec![]).is_err());
        assert!(SemanticGaussianField::new(0, 0, vec![]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut g = gaussian(vec![[0.1, 0.2, 0.3]; 4]);
        let mut p = g.params();
        assert_eq!(p.len(), SemanticGaussian::param_count(1, 2));
        p[0] = 5.0;
        *p.last_mut().unwrap() = -3.0;
        g.set_params(&p).unwrap();
        assert_eq!(g.center[0], 5.0);
        assert_eq!(g.semantic[1], -3.0);
        assert_eq!(g.params(), p);
    }

    #[test]
    fn activated_values_in_range() {
        for x in [-800.0, -30.0, -1.0, 0.0, 2.5, 30.0] {
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s));
        }
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);
        assert!((logit(sigmoid(0.7)) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn point_primitive_color_range() {
        assert!(PointPrimitive::new([0.0; 3], [0.0, 0.5, 1.0]).is_ok());
        assert!(PointPrimitive::new([0.0; 3], [0.0, 1.5, 1.0]).is_err());
    }
}
