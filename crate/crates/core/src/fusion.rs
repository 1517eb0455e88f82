//! Market-vector construction: plain concatenation or multi-head cross-modal
//! attention with numeric queries and text keys/values.
//!
//! Attention forward pass for one sample with numeric vector `x` and text
//! tokens `y_1..y_n`:
//!
//! ```text
//! X   = drop(LN_x(x W_x))               1 x d_model
//! Y_j = drop(LN_y(y_j W_y))             n x d_model
//! per head h:  Q = X Wq_h, K = Y Wk_h, V = Y Wv_h
//!              w = softmax(K Q / sqrt(d_k)),  head_h = w^T V
//! A   = [head_1 .. head_H]              1 x d_model
//! m   = [X ; A] W_f                     1 x d_out
//! ```
//!
//! `fusion_backward` differentiates this map exactly given the forward cache.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Concat,
    Attention,
}

/// Where attention keys/values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    /// One token per prior-day article.
    ArticleTokens,
    /// A single token: the day's mean embedding.
    PooledSingle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_n: usize,
    pub d_t: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_out: usize,
    pub dropout_p: f64,
    pub mode: FusionMode,
    pub token_source: TokenSource,
    pub seed: u64,
}

impl FusionConfig {
    /// Attention config with the default widths (d_model 64, 4 heads, d_out = d_model, p = 0.1).
    pub fn attention(d_n: usize, d_t: usize, seed: u64) -> Self {
        FusionConfig {
            d_n,
            d_t,
            d_model: 64,
            heads: 4,
            d_out: 64,
            dropout_p: 0.1,
            mode: FusionMode::Attention,
            token_source: TokenSource::ArticleTokens,
            seed,
        }
    }

    pub fn concat(d_n: usize, d_t: usize) -> Self {
        FusionConfig {
            d_n,
            d_t,
            d_model: 0,
            heads: 0,
            d_out: d_n + d_t,
            dropout_p: 0.0,
            mode: FusionMode::Concat,
            token_source: TokenSource::PooledSingle,
            seed: 0,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_n == 0 || self.d_t == 0 {
            return Err(Error::Validation("d_n and d_t must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Validation(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        match self.mode {
            FusionMode::Concat => {
                if self.d_out != self.d_n + self.d_t {
                    return Err(Error::Validation(
                        "concat mode requires d_out = d_n + d_t".into(),
                    ));
                }
            }
            FusionMode::Attention => {
                if self.heads == 0 || self.d_model == 0 || self.d_out == 0 {
                    return Err(Error::Validation(
                        "d_model, heads and d_out must be positive".into(),
                    ));
                }
                if !self.d_model.is_multiple_of(self.heads) {
                    return Err(Error::Validation(format!(
                        "d_model {} is not divisible by {} heads",
                        self.d_model, self.heads
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
}

/// Learned attention-fusion weights. The same type holds gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams<T> {
    pub w_x: Array2<T>,
    pub w_y: Array2<T>,
    pub heads: Vec<HeadParams<T>>,
    pub w_f: Array2<T>,
    pub ln_x_gain: Array1<T>,
    pub ln_x_bias: Array1<T>,
    pub ln_y_gain: Array1<T>,
    pub ln_y_bias: Array1<T>,
}

fn mat<T>(a: &Array2<T>) -> ((usize, usize), &[T]) {
    (a.dim(), a.as_slice().expect("standard layout"))
}

fn vec<T>(a: &Array1<T>) -> ((usize, usize), &[T]) {
    ((1, a.len()), a.as_slice().expect("standard layout"))
}

impl<T: Scalar> FusionParams<T> {
    pub fn zeros(cfg: &FusionConfig) -> Self {
        let (dm, dk) = (cfg.d_model, cfg.d_k());
        FusionParams {
            w_x: Array2::zeros((cfg.d_n, dm)),
            w_y: Array2::zeros((cfg.d_t, dm)),
            heads: (0..cfg.heads)
                .map(|_| HeadParams {
                    w_q: Array2::zeros((dm, dk)),
                    w_k: Array2::zeros((dm, dk)),
                    w_v: Array2::zeros((dm, dk)),
                })
                .collect(),
            w_f: Array2::zeros((2 * dm, cfg.d_out)),
            ln_x_gain: Array1::zeros(dm),
            ln_x_bias: Array1::zeros(dm),
            ln_y_gain: Array1::zeros(dm),
            ln_y_bias: Array1::zeros(dm),
        }
    }

    /// Parameter blocks in declared order: name, (rows, cols), row-major values.
    /// Vectors are reported as one row.
    pub fn blocks(&self) -> Vec<(String, (usize, usize), &[T])> {
        let mut out = Vec::new();
        let (d, v) = mat(&self.w_x);
        out.push(("W_x".to_string(), d, v));
        let (d, v) = mat(&self.w_y);
        out.push(("W_y".to_string(), d, v));
        for (h, hp) in self.heads.iter().enumerate() {
            for (tag, a) in [("W_Q", &hp.w_q), ("W_K", &hp.w_k), ("W_V", &hp.w_v)] {
                let (d, v) = mat(a);
                out.push((format!("head{h}.{tag}"), d, v));
            }
        }
        let (d, v) = mat(&self.w_f);
        out.push(("W_f".to_string(), d, v));
        for (tag, a) in [
            ("ln_x.gain", &self.ln_x_gain),
            ("ln_x.bias", &self.ln_x_bias),
            ("ln_y.gain", &self.ln_y_gain),
            ("ln_y.bias", &self.ln_y_bias),
        ] {
            let (d, v) = vec(a);
            out.push((tag.to_string(), d, v));
        }
        out
    }

    /// Mutable parameter blocks, same order as [`FusionParams::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.w_x.as_slice_mut().expect("standard layout"));
        out.push(self.w_y.as_slice_mut().expect("standard layout"));
        for hp in &mut self.heads {
            out.push(hp.w_q.as_slice_mut().expect("standard layout"));
            out.push(hp.w_k.as_slice_mut().expect("standard layout"));
            out.push(hp.w_v.as_slice_mut().expect("standard layout"));
        }
        out.push(self.w_f.as_slice_mut().expect("standard layout"));
        out.push(self.ln_x_gain.as_slice_mut().expect("standard layout"));
        out.push(self.ln_x_bias.as_slice_mut().expect("standard layout"));
        out.push(self.ln_y_gain.as_slice_mut().expect("standard layout"));
        out.push(self.ln_y_bias.as_slice_mut().expect("standard layout"));
        out
    }

    /// `self += alpha * other`, blockwise.
    pub fn scaled_add(&mut self, alpha: T, other: &FusionParams<T>) {
        let src = other.blocks();
        for (dst, (_, _, src)) in self.blocks_mut().into_iter().zip(src) {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += alpha * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Returns an error unless the block shapes match `cfg`.
    pub fn check_shapes(&self, cfg: &FusionConfig) -> Result<()> {
        let want = FusionParams::<T>::zeros(cfg);
        let got: Vec<_> = self.blocks().into_iter().map(|(n, d, _)| (n, d)).collect();
        let exp: Vec<_> = want.blocks().into_iter().map(|(n, d, _)| (n, d)).collect();
        if got != exp {
            return Err(Error::Shape(
                "fusion parameters do not match the configuration".into(),
            ));
        }
        Ok(())
    }
}

/// Draws every weight matrix from U(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`
/// in declared block order; layer-norm gains start at 1 and biases at 0.
pub fn init_params<T: Scalar>(cfg: &FusionConfig) -> Result<FusionParams<T>> {
    cfg.validate()?;
    if cfg.mode != FusionMode::Attention {
        return Err(Error::Usage("concat mode has no learned fusion parameters".into()));
    }
    let mut p = FusionParams::<T>::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fill = |a: &mut Array2<T>| {
        let (fan_in, fan_out) = a.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        a.iter_mut()
            .for_each(|w| *w = T::of(rng.gen_range(-bound..=bound)));
    };
    fill(&mut p.w_x);
    fill(&mut p.w_y);
    for hp in &mut p.heads {
        fill(&mut hp.w_q);
        fill(&mut hp.w_k);
        fill(&mut hp.w_v);
    }
    fill(&mut p.w_f);
    p.ln_x_gain.fill(T::one());
    p.ln_y_gain.fill(T::one());
    Ok(p)
}

/// `[x ; y]`.
pub fn concat_fuse<T: Scalar>(
    x_scaled: ArrayView1<'_, T>,
    y_mean: ArrayView1<'_, T>,
    cfg: &FusionConfig,
) -> Result<Array1<T>> {
    if x_scaled.len() != cfg.d_n || y_mean.len() != cfg.d_t {
        return Err(Error::Shape(format!(
            "concat expects ({}, {}), got ({}, {})",
            cfg.d_n,
            cfg.d_t,
            x_scaled.len(),
            y_mean.len()
        )));
    }
    Ok(x_scaled.iter().chain(y_mean.iter()).copied().collect())
}

/// Numerically stable softmax (row max subtracted before exponentiation).
pub fn softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut e = logits.mapv(|v| (v - max).exp());
    let sum = e.iter().fold(T::zero(), |acc, &v| acc + v);
    e.mapv_inplace(|v| v / sum);
    e
}

/// Whether a forward pass samples dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Inference,
    Training { mask_seed: u64 },
}

#[derive(Debug, Clone)]
struct LayerNormCache<T> {
    /// Normalized rows before gain/bias.
    xhat: Array2<T>,
    /// `1 / sqrt(var + eps)` per row.
    inv_std: Array1<T>,
}

fn layer_norm<T: Scalar>(
    u: ArrayView2<'_, T>,
    gain: &Array1<T>,
    bias: &Array1<T>,
) -> (Array2<T>, LayerNormCache<T>) {
    let d = T::of(u.ncols() as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut xhat = u.to_owned();
    let mut inv_std = Array1::zeros(u.nrows());
    for (mut row, s) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mu = row.iter().fold(T::zero(), |a, &v| a + v) / d;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / d;
        *s = T::one() / (var + eps).sqrt();
        let inv = *s;
        row.mapv_inplace(|v| (v - mu) * inv);
    }
    let out = &xhat * gain + bias;
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns (d_input, d_gain, d_bias) for upstream gradient `dout`.
fn layer_norm_backward<T: Scalar>(
    dout: ArrayView2<'_, T>,
    cache: &LayerNormCache<T>,
    gain: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let d = T::of(dout.ncols() as f64);
    let dgain = (&dout * &cache.xhat).sum_axis(Axis(0));
    let dbias = dout.sum_axis(Axis(0));
    let dxhat = &dout * gain;
    let mut du = Array2::zeros(dout.raw_dim());
    for r in 0..dout.nrows() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let inv = cache.inv_std[r];
        let mut dst = du.row_mut(r);
        for c in 0..dst.len() {
            dst[c] = inv * (g[c] - mean_g - xh[c] * mean_gx);
        }
    }
    (du, dgain, dbias)
}

/// Inverted-dropout mask, already scaled by `1 / (1 - p)`.
fn dropout_mask<T: Scalar, R: Rng>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<T> {
    let keep = T::of(1.0 / (1.0 - p));
    Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    })
}

/// Intermediates of one attention forward pass.
#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    training: bool,
    shape: (usize, usize, usize, usize, usize),
    x: Array1<T>,
    tokens: Array2<T>,
    ln_x: LayerNormCache<T>,
    ln_y: LayerNormCache<T>,
    mask_x: Option<Array2<T>>,
    mask_y: Option<Array2<T>>,
    /// Post-dropout numeric token, 1 x d_model.
    xd: Array2<T>,
    /// Post-dropout text tokens, n x d_model.
    yd: Array2<T>,
    q: Vec<Array1<T>>,
    k: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    weights: Vec<Array1<T>>,
    z: Array1<T>,
}

impl<T: Scalar> FusionCache<T> {
    /// Softmax weights over tokens, one vector per head.
    pub fn attention_weights(&self) -> &[Array1<T>] {
        &self.weights
    }

    /// `[X ; A]`, the input to `W_f`.
    pub fn fused_input(&self) -> ArrayView1<'_, T> {
        self.z.view()
    }

    pub fn is_training(&self) -> bool {
        self.training
    }
}

fn shape_key(cfg: &FusionConfig) -> (usize, usize, usize, usize, usize) {
    (cfg.d_n, cfg.d_t, cfg.d_model, cfg.heads, cfg.d_out)
}

/// Attention forward pass for one sample. `tokens` is n x d_t.
pub fn attention_fuse<T: Scalar>(
    x: ArrayView1<'_, T>,
    tokens: ArrayView2<'_, T>,
    params: &FusionParams<T>,
    cfg: &FusionConfig,
    pass: Pass,
) -> Result<(Array1<T>, FusionCache<T>)> {
    if tokens.nrows() == 0 {
        return Err(Error::Precondition("attention needs at least one token".into()));
    }
    if x.len() != cfg.d_n || tokens.ncols() != cfg.d_t {
        return Err(Error::Shape(format!(
            "attention expects x of {} and tokens of {}, got {} and {}",
            cfg.d_n,
            cfg.d_t,
            x.len(),
            tokens.ncols()
        )));
    }
    if x.iter().chain(tokens.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite attention input".into()));
    }

    let dk = cfg.d_k();
    let px = x.dot(&params.w_x).insert_axis(Axis(0));
    let (lx, ln_x) = layer_norm(px.view(), &params.ln_x_gain, &params.ln_x_bias);
    let py = tokens.dot(&params.w_y);
    let (ly, ln_y) = layer_norm(py.view(), &params.ln_y_gain, &params.ln_y_bias);

    let (mask_x, mask_y) = match pass {
        Pass::Training { mask_seed } if cfg.dropout_p > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let mx = dropout_mask(lx.dim(), cfg.dropout_p, &mut rng);
            let my = dropout_mask(ly.dim(), cfg.dropout_p, &mut rng);
            (Some(mx), Some(my))
        }
        _ => (None, None),
    };
    let xd = match &mask_x {
        Some(m) => &lx * m,
        None => lx,
    };
    let yd = match &mask_y {
        Some(m) => &ly * m,
        None => ly,
    };

    let scale = T::one() / T::of(dk as f64).sqrt();
    let xrow = xd.row(0);
    let mut q = Vec::with_capacity(cfg.heads);
    let mut k = Vec::with_capacity(cfg.heads);
    let mut v = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    let mut z = Array1::zeros(2 * cfg.d_model);
    z.slice_mut(s![..cfg.d_model]).assign(&xrow);
    for (h, hp) in params.heads.iter().enumerate() {
        let qh = xrow.dot(&hp.w_q);
        let kh = yd.dot(&hp.w_k);
        let vh = yd.dot(&hp.w_v);
        let logits = kh.dot(&qh) * scale;
        let w = softmax(logits.view());
        let head_out = w.dot(&vh);
        let off = cfg.d_model + h * dk;
        z.slice_mut(s![off..off + dk]).assign(&head_out);
        q.push(qh);
        k.push(kh);
        v.push(vh);
        weights.push(w);
    }
    let m = z.dot(&params.w_f);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("attention produced a non-finite market vector".into()));
    }
    let cache = FusionCache {
        training: matches!(pass, Pass::Training { .. }),
        shape: shape_key(cfg),
        x: x.to_owned(),
        tokens: tokens.to_owned(),
        ln_x,
        ln_y,
        mask_x,
        mask_y,
        xd,
        yd,
        q,
        k,
        v,
        weights,
        z,
    };
    Ok((m, cache))
}

/// Gradients of a scalar loss with respect to every fusion parameter and input.
#[derive(Debug, Clone)]
pub struct FusionGrads<T> {
    pub params: FusionParams<T>,
    pub dx: Array1<T>,
    pub dtokens: Array2<T>,
}

/// Reverse pass of [`attention_fuse`] for upstream gradient `dm = dL/dm`.
pub fn fusion_backward<T: Scalar>(
    cache: &FusionCache<T>,
    dm: ArrayView1<'_, T>,
    params: &FusionParams<T>,
    cfg: &FusionConfig,
) -> Result<FusionGrads<T>> {
    if !cache.training {
        return Err(Error::Usage(
            "fusion_backward needs a cache from a training pass".into(),
        ));
    }
    if cache.shape != shape_key(cfg) || params.heads.len() != cfg.heads {
        return Err(Error::Usage("cache does not belong to this configuration".into()));
    }
    if dm.len() != cfg.d_out {
        return Err(Error::Shape(format!(
            "upstream gradient has {} entries, expected {}",
            dm.len(),
            cfg.d_out
        )));
    }
    let (dmod, dk) = (cfg.d_model, cfg.d_k());
    let scale = T::one() / T::of(dk as f64).sqrt();
    let mut g = FusionParams::zeros(cfg);

    // m = z W_f
    g.w_f = outer(cache.z.view(), dm);
    let dz = params.w_f.dot(&dm);
    let mut dxd = dz.slice(s![..dmod]).to_owned();
    let mut dyd = Array2::<T>::zeros(cache.yd.raw_dim());
    let xrow = cache.xd.row(0);

    for (h, hp) in params.heads.iter().enumerate() {
        let off = dmod + h * dk;
        let dhead = dz.slice(s![off..off + dk]);
        let w = &cache.weights[h];
        let (kh, vh, qh) = (&cache.k[h], &cache.v[h], &cache.q[h]);

        // head = w^T V
        let dv = outer(w.view(), dhead);
        let dw = vh.dot(&dhead);
        // softmax Jacobian
        let wdw = w.dot(&dw);
        let dlogits = w * &dw.mapv(|v| v - wdw);
        // logits = K q * scale
        let dq = kh.t().dot(&dlogits) * scale;
        let dkh = outer(dlogits.view(), qh.view()) * scale;

        g.heads[h].w_q = outer(xrow, dq.view());
        g.heads[h].w_k = cache.yd.t().dot(&dkh);
        g.heads[h].w_v = cache.yd.t().dot(&dv);
        dxd += &hp.w_q.dot(&dq);
        dyd += &dkh.dot(&hp.w_k.t());
        dyd += &dv.dot(&hp.w_v.t());
    }

    let mut dlx = dxd.insert_axis(Axis(0));
    if let Some(mask) = &cache.mask_x {
        dlx *= mask;
    }
    let mut dly = dyd;
    if let Some(mask) = &cache.mask_y {
        dly *= mask;
    }

    let (dpx, dgx, dbx) = layer_norm_backward(dlx.view(), &cache.ln_x, &params.ln_x_gain);
    let (dpy, dgy, dby) = layer_norm_backward(dly.view(), &cache.ln_y, &params.ln_y_gain);
    g.ln_x_gain = dgx;
    g.ln_x_bias = dbx;
    g.ln_y_gain = dgy;
    g.ln_y_bias = dby;

    let dpx = dpx.row(0);
    g.w_x = outer(cache.x.view(), dpx);
    g.w_y = cache.tokens.t().dot(&dpy);
    let dx = params.w_x.dot(&dpx);
    let dtokens = dpy.dot(&params.w_y.t());

    Ok(FusionGrads {
        params: g,
        dx,
        dtokens,
    })
}

fn outer<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Array2<T> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}
