//! Cross-modal attention block: point tokens attend to themselves, then to
//! image or semantic tokens, then pass through a feed-forward layer. Each
//! sub-block is pre-normalized and residual. Gradients are written out by
//! hand and checked against finite differences.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const MLP_EXPANSION: usize = 4;

type Mat = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Point,
    Image,
    Semantic,
}

/// `n x d` token matrix, one token per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    role: TokenRole,
    tokens: Mat,
}

impl TokenMatrix {
    pub fn new(role: TokenRole, tokens: Mat) -> Result<Self> {
        if !tokens.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("token matrix has non-finite entries".into()));
        }
        Ok(Self { role, tokens })
    }

    pub fn role(&self) -> TokenRole {
        self.role
    }

    pub fn tokens(&self) -> &Mat {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(s: &Mat) -> Mat {
    let mut out = s.clone();
    for mut row in out.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn scaled_dot_attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat> {
    if q.ncols() != k.ncols() {
        return Err(Error::shape("query/key width", q.ncols(), k.ncols()));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::shape("key/value count", k.nrows(), v.nrows()));
    }
    if k.nrows() == 0 {
        return Err(Error::EmptyInput("attention needs at least one key".into()));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    Ok(softmax_rows(&((q * k.transpose()) * scale)) * v)
}

/// Per-token normalization followed by a learned affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    /// `1 x d`.
    pub gain: Mat,
    /// `1 x d`.
    pub bias: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `d x 4d`.
    pub w1: Mat,
    /// `1 x 4d`.
    pub b1: Mat,
    /// `4d x d`.
    pub w2: Mat,
    /// `1 x d`.
    pub b2: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlockParams {
    pub heads: usize,
    pub norm_self: LayerNorm,
    pub self_attn: AttentionWeights,
    pub norm_query: LayerNorm,
    pub norm_context: LayerNorm,
    pub cross_attn: AttentionWeights,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl AttentionBlockParams {
    /// Every parameter zero; the block is then the identity on `P`.
    pub fn zeros(d: usize, heads: usize) -> Result<Self> {
        Self::build(d, heads, |r, c| Mat::zeros(r, c))
    }

    /// Weights drawn uniformly from `[-scale, scale]`, norm gains around 1.
    pub fn random(rng: &mut impl Rng, d: usize, heads: usize, scale: f64) -> Result<Self> {
        let mut p = Self::build(d, heads, |r, c| Mat::zeros(r, c))?;
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            let is_gain = matches!(i, 0 | 6 | 8 | 14);
            t.apply(|v| {
                *v = rng.gen_range(-scale..scale) + if is_gain { 1.0 } else { 0.0 };
            });
        }
        Ok(p)
    }

    fn build(d: usize, heads: usize, mut z: impl FnMut(usize, usize) -> Mat) -> Result<Self> {
        if d == 0 || heads == 0 || d % heads != 0 {
            return Err(Error::InvalidInput(format!(
                "model width {d} must be a positive multiple of the head count {heads}"
            )));
        }
        let h = MLP_EXPANSION * d;
        let mut norm = || LayerNorm {
            gain: z(1, d),
            bias: z(1, d),
        };
        let (n1, n2, n3, n4) = (norm(), norm(), norm(), norm());
        let mut attn = || AttentionWeights {
            wq: z(d, d),
            wk: z(d, d),
            wv: z(d, d),
            wo: z(d, d),
        };
        let (a1, a2) = (attn(), attn());
        Ok(Self {
            heads,
            norm_self: n1,
            self_attn: a1,
            norm_query: n2,
            norm_context: n3,
            cross_attn: a2,
            norm_mlp: n4,
            mlp: Mlp {
                w1: z(d, h),
                b1: z(1, h),
                w2: z(h, d),
                b2: z(1, d),
            },
        })
    }

    pub fn width(&self) -> usize {
        self.norm_self.gain.ncols()
    }

    /// Parameter tensors in a fixed order.
    pub fn tensors(&self) -> [&Mat; 20] {
        [
            &self.norm_self.gain,
            &self.norm_self.bias,
            &self.self_attn.wq,
            &self.self_attn.wk,
            &self.self_attn.wv,
            &self.self_attn.wo,
            &self.norm_query.gain,
            &self.norm_query.bias,
            &self.norm_context.gain,
            &self.norm_context.bias,
            &self.cross_attn.wq,
            &self.cross_attn.wk,
            &self.cross_attn.wv,
            &self.cross_attn.wo,
            &self.norm_mlp.gain,
            &self.norm_mlp.bias,
            &self.mlp.w1,
            &self.mlp.b1,
            &self.mlp.w2,
            &self.mlp.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 20] {
        [
            &mut self.norm_self.gain,
            &mut self.norm_self.bias,
            &mut self.self_attn.wq,
            &mut self.self_attn.wk,
            &mut self.self_attn.wv,
            &mut self.self_attn.wo,
            &mut self.norm_query.gain,
            &mut self.norm_query.bias,
            &mut self.norm_context.gain,
            &mut self.norm_context.bias,
            &mut self.cross_attn.wq,
            &mut self.cross_attn.wk,
            &mut self.cross_attn.wv,
            &mut self.cross_attn.wo,
            &mut self.norm_mlp.gain,
            &mut self.norm_mlp.bias,
            &mut self.mlp.w1,
            &mut self.mlp.b1,
            &mut self.mlp.w2,
            &mut self.mlp.b2,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        let h = MLP_EXPANSION * d;
        let want = [
            (1, d),
            (1, d),
            (d, d),
            (d, d),
            (d, d),
            (d, d),
            (1, d),
            (1, d),
            (1, d),
            (1, d),
            (d, d),
            (d, d),
            (d, d),
            (d, d),
            (1, d),
            (1, d),
            (d, h),
            (1, h),
            (h, d),
            (1, d),
        ];
        for (t, (r, c)) in self.tensors().iter().zip(want) {
            if t.shape() != (r, c) {
                return Err(Error::shape(
                    "attention parameter",
                    format!("{r}x{c}"),
                    format!("{}x{}", t.nrows(), t.ncols()),
                ));
            }
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput("attention parameters are not finite".into()));
            }
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::InvalidInput(format!(
                "width {d} is not divisible by {} heads",
                self.heads
            )));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.fill(0.0);
        }
        g
    }
}

struct NormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Mat, p: &LayerNorm) -> (Mat, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.row_iter_mut() {
        let mean = row.sum() / d;
        row.add_scalar_mut(-mean);
        let var = row.norm_squared() / d;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= s;
        inv_std.push(s);
    }
    let mut y = xhat.clone();
    for mut row in y.row_iter_mut() {
        row.component_mul_assign(&p.gain);
        row += &p.bias;
    }
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(gy: &Mat, p: &LayerNorm, c: &NormCache, g: &mut LayerNorm) -> Mat {
    let d = gy.ncols() as f64;
    let mut gx = Mat::zeros(gy.nrows(), gy.ncols());
    for i in 0..gy.nrows() {
        let gy_row = gy.row(i);
        let xh = c.xhat.row(i);
        g.gain += gy_row.component_mul(&xh);
        g.bias += gy_row;
        let gxh = gy_row.component_mul(&p.gain);
        let m1 = gxh.sum() / d;
        let m2 = gxh.dot(&xh) / d;
        for j in 0..gy.ncols() {
            gx[(i, j)] = c.inv_std[i] * (gxh[j] - m1 - xh[j] * m2);
        }
    }
    gx
}

struct AttnCache {
    xq: Mat,
    xkv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    concat: Mat,
}

fn attention(xq: &Mat, xkv: &Mat, w: &AttentionWeights, heads: usize) -> (Mat, AttnCache) {
    let q = xq * &w.wq;
    let k = xkv * &w.wk;
    let v = xkv * &w.wv;
    let dk = q.ncols() / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = Mat::zeros(q.nrows(), q.ncols());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dk;
        let qh = q.columns(cols, dk);
        let kh = k.columns(cols, dk);
        let a = softmax_rows(&((qh * kh.transpose()) * scale));
        concat.columns_mut(cols, dk).copy_from(&(&a * v.columns(cols, dk)));
        probs.push(a);
    }
    let out = &concat * &w.wo;
    (
        out,
        AttnCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

/// Returns gradients with respect to the query and context inputs.
fn attention_backward(gout: &Mat, w: &AttentionWeights, c: &AttnCache, g: &mut AttentionWeights) -> (Mat, Mat) {
    let heads = c.probs.len();
    let dk = c.q.ncols() / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    g.wo += c.concat.transpose() * gout;
    let gconcat = gout * w.wo.transpose();
    let mut gq = Mat::zeros(c.q.nrows(), c.q.ncols());
    let mut gk = Mat::zeros(c.k.nrows(), c.k.ncols());
    let mut gv = Mat::zeros(c.v.nrows(), c.v.ncols());
    for (h, a) in c.probs.iter().enumerate() {
        let cols = h * dk;
        let go = gconcat.columns(cols, dk);
        let vh = c.v.columns(cols, dk);
        let ga = go * vh.transpose();
        gv.columns_mut(cols, dk).copy_from(&(a.transpose() * go));
        // softmax: gS = A * (gA - rowsum(gA * A))
        let mut gs = a.component_mul(&ga);
        for i in 0..gs.nrows() {
            let s = gs.row(i).sum();
            for j in 0..gs.ncols() {
                gs[(i, j)] -= a[(i, j)] * s;
            }
        }
        gs *= scale;
        gq.columns_mut(cols, dk).copy_from(&(&gs * c.k.columns(cols, dk)));
        gk.columns_mut(cols, dk)
            .copy_from(&(gs.transpose() * c.q.columns(cols, dk)));
    }
    g.wq += c.xq.transpose() * &gq;
    g.wk += c.xkv.transpose() * &gk;
    g.wv += c.xkv.transpose() * &gv;
    let gxq = gq * w.wq.transpose();
    let gxkv = gk * w.wk.transpose() + gv * w.wv.transpose();
    (gxq, gxkv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct MlpCache {
    x: Mat,
    pre: Mat,
    act: Mat,
}

fn add_row(m: &mut Mat, b: &Mat) {
    for mut row in m.row_iter_mut() {
        row += b;
    }
}

fn mlp(x: &Mat, p: &Mlp) -> (Mat, MlpCache) {
    let mut pre = x * &p.w1;
    add_row(&mut pre, &p.b1);
    let act = pre.map(gelu);
    let mut out = &act * &p.w2;
    add_row(&mut out, &p.b2);
    (out, MlpCache { x: x.clone(), pre, act })
}

fn mlp_backward(gout: &Mat, p: &Mlp, c: &MlpCache, g: &mut Mlp) -> Mat {
    g.w2 += c.act.transpose() * gout;
    for row in gout.row_iter() {
        g.b2 += row;
    }
    let gact = gout * p.w2.transpose();
    let gpre = gact.zip_map(&c.pre, |a, x| a * gelu_grad(x));
    g.w1 += c.x.transpose() * &gpre;
    for row in gpre.row_iter() {
        g.b1 += row;
    }
    gpre * p.w1.transpose()
}

struct BlockCache {
    n_self: NormCache,
    a_self: AttnCache,
    n_query: NormCache,
    n_ctx: NormCache,
    a_cross: AttnCache,
    n_mlp: NormCache,
    mlp: MlpCache,
}

fn check_inputs(p: &TokenMatrix, f: &TokenMatrix, params: &AttentionBlockParams) -> Result<()> {
    params.validate()?;
    let d = params.width();
    if p.width() != d {
        return Err(Error::shape("point token width", d, p.width()));
    }
    if f.width() != d {
        return Err(Error::shape("context token width", d, f.width()));
    }
    if f.is_empty() {
        return Err(Error::EmptyInput("context tokens are empty".into()));
    }
    if p.is_empty() {
        return Err(Error::EmptyInput("point tokens are empty".into()));
    }
    Ok(())
}

fn forward(p: &Mat, f: &Mat, w: &AttentionBlockParams) -> (Mat, BlockCache) {
    let (x, n_self) = layer_norm(p, &w.norm_self);
    let (a, a_self) = attention(&x, &x, &w.self_attn, w.heads);
    let p1 = p + a;
    let (xq, n_query) = layer_norm(&p1, &w.norm_query);
    let (xc, n_ctx) = layer_norm(f, &w.norm_context);
    let (a, a_cross) = attention(&xq, &xc, &w.cross_attn, w.heads);
    let p2 = p1 + a;
    let (xm, n_mlp) = layer_norm(&p2, &w.norm_mlp);
    let (m, mlp_cache) = mlp(&xm, &w.mlp);
    (
        p2 + m,
        BlockCache {
            n_self,
            a_self,
            n_query,
            n_ctx,
            a_cross,
            n_mlp,
            mlp: mlp_cache,
        },
    )
}

/// `P <- P + SelfAttn(norm P)`, `P <- P + CrossAttn(norm P, norm F)`,
/// `P <- P + MLP(norm P)`.
pub fn cross_modal_fuse(p: &TokenMatrix, f: &TokenMatrix, params: &AttentionBlockParams) -> Result<TokenMatrix> {
    check_inputs(p, f, params)?;
    let (out, _) = forward(&p.tokens, &f.tokens, params);
    TokenMatrix::new(p.role, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseGradients {
    pub params: AttentionBlockParams,
    pub points: Mat,
    pub context: Mat,
}

/// Gradients of `sum(upstream * cross_modal_fuse(P, F))`.
pub fn cross_modal_fuse_backward(
    p: &TokenMatrix,
    f: &TokenMatrix,
    params: &AttentionBlockParams,
    upstream: &Mat,
) -> Result<FuseGradients> {
    check_inputs(p, f, params)?;
    if upstream.shape() != p.tokens.shape() {
        return Err(Error::shape(
            "fusion upstream gradient",
            format!("{}x{}", p.len(), p.width()),
            format!("{}x{}", upstream.nrows(), upstream.ncols()),
        ));
    }
    let (_, c) = forward(&p.tokens, &f.tokens, params);
    let mut g = params.zeros_like();

    let g_xm = mlp_backward(upstream, &params.mlp, &c.mlp, &mut g.mlp);
    let g_p2 = upstream + layer_norm_backward(&g_xm, &params.norm_mlp, &c.n_mlp, &mut g.norm_mlp);

    let (g_xq, g_xc) = attention_backward(&g_p2, &params.cross_attn, &c.a_cross, &mut g.cross_attn);
    let g_f = layer_norm_backward(&g_xc, &params.norm_context, &c.n_ctx, &mut g.norm_context);
    let g_p1 = &g_p2 + layer_norm_backward(&g_xq, &params.norm_query, &c.n_query, &mut g.norm_query);

    let (g_xs, g_xs_kv) = attention_backward(&g_p1, &params.self_attn, &c.a_self, &mut g.self_attn);
    let g_p = &g_p1 + layer_norm_backward(&(g_xs + g_xs_kv), &params.norm_self, &c.n_self, &mut g.norm_self);

    Ok(FuseGradients {
        params: g,
        points: g_p,
        context: g_f,
    })
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Magnitude below which errors are measured in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    /// Parameter tensor index, or `"points"` / `"context"`.
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionGradReport {
    pub checked: usize,
    /// Largest `|a - n| / max(|a|, |n|, floor)`.
    pub max_error: f64,
    pub failures: Vec<GradFailure>,
}

impl AttentionGradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks every parameter and input gradient of the readout
/// `sum(weights * out)` against central differences.
pub fn attention_gradcheck(
    params: &AttentionBlockParams,
    p: &TokenMatrix,
    f: &TokenMatrix,
    weights: &Mat,
) -> Result<AttentionGradReport> {
    let grads = cross_modal_fuse_backward(p, f, params, weights)?;
    let readout = |pp: &Mat, ff: &Mat, w: &AttentionBlockParams| forward(pp, ff, w).0.dot(weights);
    let h = GRADCHECK_STEP;
    let mut report = AttentionGradReport::default();
    let mut record = |tensor: String, index: usize, a: f64, n: f64| {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_FLOOR);
        report.checked += 1;
        report.max_error = report.max_error.max(err);
        if !(err < GRADCHECK_TOL) {
            report.failures.push(GradFailure {
                tensor,
                index,
                analytic: a,
                numeric: n,
            });
        }
    };

    let mut work = params.clone();
    for (t, g) in grads.params.tensors().iter().enumerate() {
        for i in 0..g.len() {
            let base = params.tensors()[t][i];
            work.tensors_mut()[t][i] = base + h;
            let fp = readout(&p.tokens, &f.tokens, &work);
            work.tensors_mut()[t][i] = base - h;
            let fm = readout(&p.tokens, &f.tokens, &work);
            work.tensors_mut()[t][i] = base;
            record(t.to_string(), i, g[i], (fp - fm) / (2.0 * h));
        }
    }
    for (name, which) in [("points", 0), ("context", 1)] {
        let g = if which == 0 { &grads.points } else { &grads.context };
        for i in 0..g.len() {
            let mut pp = p.tokens.clone();
            let mut ff = f.tokens.clone();
            let target = if which == 0 { &mut pp } else { &mut ff };
            let base = target[i];
            target[i] = base + h;
            let fp = readout(&pp, &ff, params);
            let target = if which == 0 { &mut pp } else { &mut ff };
            target[i] = base - h;
            let fm = readout(&pp, &ff, params);
            record(name.to_string(), i, g[i], (fp - fm) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Random `rows x cols` matrix with entries in `[-1, 1)`.
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::rng;

    #[test]
    fn singleton_key_returns_value_row() {
        let mut r = rng(1);
        let q = random_matrix(&mut r, 3, 4);
        let k = random_matrix(&mut r, 1, 4);
        let v = random_matrix(&mut r, 1, 5);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn zero_query_averages_values() {
        let mut r = rng(2);
        let q = Mat::zeros(2, 3);
        let k = random_matrix(&mut r, 4, 3);
        let v = random_matrix(&mut r, 4, 2);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mean = (0..4).map(|m| v[(m, j)]).sum::<f64>() / 4.0;
                assert!((out[(i, j)] - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_by_two_matches_scalar_evaluation() {
        let q = Mat::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let k = Mat::from_row_slice(2, 2, &[0.2, -1.0, 0.7, 0.4]);
        let v = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        let s = 2f64.sqrt();
        for i in 0..2 {
            let l0 = (q[(i, 0)] * k[(0, 0)] + q[(i, 1)] * k[(0, 1)]) / s;
            let l1 = (q[(i, 0)] * k[(1, 0)] + q[(i, 1)] * k[(1, 1)]) / s;
            let (e0, e1) = (l0.exp(), l1.exp());
            for j in 0..3 {
                let want = (e0 * v[(0, j)] + e1 * v[(1, j)]) / (e0 + e1);
                assert!((out[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let s = Mat::from_row_slice(1, 3, &[1000.0, 1000.0, -1000.0]);
        let a = softmax_rows(&s);
        assert_eq!(a[(0, 0)], 0.5);
        assert_eq!(a[(0, 2)], 0.0);
    }

    #[test]
    fn dimension_errors() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 4);
        assert!(scaled_dot_attention(&a, &b, &b).is_err());
        assert!(scaled_dot_attention(&a, &a, &Mat::zeros(3, 2)).is_err());
        assert!(AttentionBlockParams::zeros(6, 4).is_err());
        let p = AttentionBlockParams::zeros(4, 1).unwrap();
        let t = TokenMatrix::new(TokenRole::Point, Mat::zeros(3, 4)).unwrap();
        let empty = TokenMatrix::new(TokenRole::Image, Mat::zeros(0, 4)).unwrap();
        assert!(matches!(cross_modal_fuse(&t, &empty, &p), Err(Error::EmptyInput(_))));
        let wide = TokenMatrix::new(TokenRole::Image, Mat::zeros(2, 5)).unwrap();
        assert!(cross_modal_fuse(&t, &wide, &p).is_err());
        let mut bad = Mat::zeros(2, 4);
        bad[(0, 0)] = f64::NAN;
        assert!(TokenMatrix::new(TokenRole::Point, bad).is_err());
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
