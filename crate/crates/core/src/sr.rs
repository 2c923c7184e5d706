//! Windowed self-attention super-resolution forward pass.
//!
//! The network is `up(aggregate(head(embed(p))))`:
//!
//! * `embed` is a per-pixel linear map from RGB into `d` feature channels,
//! * `head` is a series of attention blocks, each `LN(MSA(X) + X)` evaluated
//!   over non-overlapping `window x window` tiles,
//! * `aggregate` is `X + sum_k block_k(X)` with every block reading the same X,
//! * `up` is a per-pixel linear map to `r^2 * 3` channels followed by pixel
//!   shuffle.
//!
//! Multi-head attention sums the per-head outputs after each head's own
//! output projection. Weights are `f32`; arithmetic is `f64`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageFrame, CHANNELS};
use crate::zoom::to_sample;

pub const WEIGHTS_FORMAT: &str = "avr-sr/1";

#[derive(Debug, Error)]
pub enum SrError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("weights file: {0}")]
    Weights(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense feature tensor in height-width-channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, SrError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(SrError::Shape("feature map dimensions must be > 0".into()));
        }
        if data.len() != channels * height * width {
            return Err(SrError::Shape(format!(
                "{} values for {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn token(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn token_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }
}

/// `(x - mean) / sqrt(var + eps) * scale + offset` with population variance.
pub fn layer_norm(x: &[f64], scale: &[f32], offset: &[f32], eps: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    layer_norm_in_place(&mut out, scale, offset, eps);
    out
}

fn layer_norm_in_place(x: &mut [f64], scale: &[f32], offset: &[f32], eps: f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for (i, v) in x.iter_mut().enumerate() {
        *v = (*v - mean) * inv * f64::from(scale[i]) + f64::from(offset[i]);
    }
}

/// Projection weights of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    /// `d x dh`, row-major.
    pub w_q: Vec<f32>,
    pub w_k: Vec<f32>,
    pub w_v: Vec<f32>,
    /// `dh x d`, row-major.
    pub w_o: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub heads: Vec<HeadWeights>,
    pub ln_scale: Vec<f32>,
    pub ln_offset: Vec<f32>,
}

impl AttentionBlock {
    pub fn zeros(d: usize, h: usize) -> Self {
        let dh = d / h;
        Self {
            heads: (0..h)
                .map(|_| HeadWeights {
                    w_q: vec![0.0; d * dh],
                    w_k: vec![0.0; d * dh],
                    w_v: vec![0.0; d * dh],
                    w_o: vec![0.0; dh * d],
                })
                .collect(),
            ln_scale: vec![1.0; d],
            ln_offset: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.ln_scale.len()
    }

    fn check(&self, d: usize) -> Result<(), SrError> {
        let h = self.heads.len();
        if h == 0 || d % h != 0 {
            return Err(SrError::Shape(format!("{d} channels not divisible by {h} heads")));
        }
        let dh = d / h;
        if self.ln_scale.len() != d || self.ln_offset.len() != d {
            return Err(SrError::Shape("layer-norm parameter length".into()));
        }
        for hw in &self.heads {
            if hw.w_q.len() != d * dh || hw.w_k.len() != d * dh || hw.w_v.len() != d * dh || hw.w_o.len() != dh * d {
                return Err(SrError::Shape("attention projection size".into()));
            }
        }
        Ok(())
    }
}

/// `x (n x d) * w (d x m)`.
fn matmul(x: &[f64], n: usize, d: usize, w: &[f32], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let o = &mut out[i * m..(i + 1) * m];
        for (k, &xv) in row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[k * m..(k + 1) * m];
            for j in 0..m {
                o[j] += xv * f64::from(wr[j]);
            }
        }
    }
    out
}

fn softmax_rows(scores: &mut [f64], n: usize) {
    for row in scores.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Multi-head self-attention over `n` tokens of width `d` (row-major `n x d`).
///
/// Returns the output and, per head, the `n x n` attention matrix.
pub fn msa_tokens(x: &[f64], n: usize, block: &AttentionBlock) -> Result<(Vec<f64>, Vec<Vec<f64>>), SrError> {
    let d = block.dim();
    block.check(d)?;
    if x.len() != n * d {
        return Err(SrError::Shape(format!("{} values for {n} tokens of width {d}", x.len())));
    }
    let h = block.heads.len();
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut attn_all = Vec::with_capacity(h);
    for hw in &block.heads {
        let q = matmul(x, n, d, &hw.w_q, dh);
        let k = matmul(x, n, d, &hw.w_k, dh);
        let v = matmul(x, n, d, &hw.w_v, dh);
        let mut attn = vec![0.0; n * n];
        for i in 0..n {
            let qi = &q[i * dh..(i + 1) * dh];
            for j in 0..n {
                let kj = &k[j * dh..(j + 1) * dh];
                attn[i * n + j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
        }
        softmax_rows(&mut attn, n);
        let mut ctx = vec![0.0; n * dh];
        for i in 0..n {
            let c = &mut ctx[i * dh..(i + 1) * dh];
            for j in 0..n {
                let a = attn[i * n + j];
                let vj = &v[j * dh..(j + 1) * dh];
                for t in 0..dh {
                    c[t] += a * vj[t];
                }
            }
        }
        let proj = matmul(&ctx, n, dh, &hw.w_o, d);
        for (o, p) in out.iter_mut().zip(proj) {
            *o += p;
        }
        attn_all.push(attn);
    }
    Ok((out, attn_all))
}

/// MSA over all tokens of `x` treated as one window.
pub fn msa_forward(x: &FeatureMap, block: &AttentionBlock) -> Result<FeatureMap, SrError> {
    if x.channels != block.dim() {
        return Err(SrError::Shape(format!(
            "input has {} channels, block expects {}",
            x.channels,
            block.dim()
        )));
    }
    let (out, _) = msa_tokens(&x.data, x.tokens(), block)?;
    FeatureMap::from_vec(x.channels, x.height, x.width, out)
}

/// Mirror index without edge repetition; periodic for offsets beyond `n`.
#[inline]
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// One windowed block: `LN(MSA(X) + X)` per `window x window` tile. Sides not
/// divisible by the window are reflect-padded and cropped afterwards.
pub fn swin_block_forward(x: &FeatureMap, block: &AttentionBlock, window: usize, eps: f64) -> Result<FeatureMap, SrError> {
    if window == 0 {
        return Err(SrError::Config("window must be >= 1".into()));
    }
    let d = x.channels;
    if d != block.dim() {
        return Err(SrError::Shape(format!("input has {d} channels, block expects {}", block.dim())));
    }
    block.check(d)?;
    let ph = x.height.div_ceil(window) * window;
    let pw = x.width.div_ceil(window) * window;
    let n = window * window;
    let mut out = FeatureMap::zeros(d, x.height, x.width);
    let mut tokens = vec![0.0; n * d];
    for wy in (0..ph).step_by(window) {
        for wx in (0..pw).step_by(window) {
            for ty in 0..window {
                for tx in 0..window {
                    let sy = reflect(wy + ty, x.height);
                    let sx = reflect(wx + tx, x.width);
                    let t = ty * window + tx;
                    tokens[t * d..(t + 1) * d].copy_from_slice(x.token(sy, sx));
                }
            }
            let (mut y, _) = msa_tokens(&tokens, n, block)?;
            for (yv, xv) in y.iter_mut().zip(&tokens) {
                *yv += xv;
            }
            for ty in 0..window {
                for tx in 0..window {
                    let (oy, ox) = (wy + ty, wx + tx);
                    if oy >= x.height || ox >= x.width {
                        continue;
                    }
                    let t = ty * window + tx;
                    let tok = &mut y[t * d..(t + 1) * d];
                    layer_norm_in_place(tok, &block.ln_scale, &block.ln_offset, eps);
                    out.token_mut(oy, ox).copy_from_slice(tok);
                }
            }
        }
    }
    Ok(out)
}

/// `X + sum_k block_k(X)`; every block reads the same input.
pub fn feature_aggregate(x: &FeatureMap, blocks: &[AttentionBlock], window: usize, eps: f64) -> Result<FeatureMap, SrError> {
    let mut acc = x.clone();
    for b in blocks {
        let y = swin_block_forward(x, b, window, eps)?;
        for (a, v) in acc.data.iter_mut().zip(y.data) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Depth-to-space: channel `c * r^2 + i * r + j` at `(y, x)` moves to channel
/// `c` at `(y * r + i, x * r + j)`.
pub fn pixel_shuffle(x: &FeatureMap, r: usize) -> Result<FeatureMap, SrError> {
    if r == 0 || x.channels % (r * r) != 0 {
        return Err(SrError::Shape(format!("{} channels not divisible by r^2 = {}", x.channels, r * r)));
    }
    let c_out = x.channels / (r * r);
    let mut out = FeatureMap::zeros(c_out, x.height * r, x.width * r);
    for y in 0..x.height {
        for xx in 0..x.width {
            let src = x.token(y, xx);
            for c in 0..c_out {
                for i in 0..r {
                    for j in 0..r {
                        out.token_mut(y * r + i, xx * r + j)[c] = src[c * r * r + i * r + j];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrConfig {
    /// Feature channels `d`.
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    /// Residual blocks `K` in the aggregation stage.
    pub blocks: usize,
    /// Attention blocks in the feature-extraction stage.
    pub head_depth: usize,
    /// Upsampling factor `r`.
    pub upscale: usize,
    pub ln_epsilon: f64,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            heads: 4,
            window: 8,
            blocks: 2,
            head_depth: 1,
            upscale: 2,
            ln_epsilon: 1e-5,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<(), SrError> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(SrError::Config(format!(
                "channels {} must be a positive multiple of heads {}",
                self.channels, self.heads
            )));
        }
        if !(2..=4).contains(&self.upscale) {
            return Err(SrError::Config(format!("upscale must be 2, 3 or 4, got {}", self.upscale)));
        }
        if self.window == 0 {
            return Err(SrError::Config("window must be >= 1".into()));
        }
        if !(self.ln_epsilon > 0.0 && self.ln_epsilon.is_finite()) {
            return Err(SrError::Config("ln_epsilon must be > 0".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    fn up_channels(&self) -> usize {
        self.upscale * self.upscale * CHANNELS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrNetwork {
    pub config: SrConfig,
    pub seed: Option<u64>,
    /// `3 x d`.
    pub embed: Vec<f32>,
    pub embed_bias: Vec<f32>,
    pub head: Vec<AttentionBlock>,
    pub blocks: Vec<AttentionBlock>,
    /// `d x (r^2 * 3)`.
    pub w_up: Vec<f32>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl SrNetwork {
    /// Pseudorandom weights with fan-in scaled uniform init.
    pub fn seeded(config: SrConfig, seed: u64) -> Result<Self, SrError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.channels;
        let dh = config.head_dim();
        let block = |rng: &mut ChaCha8Rng| AttentionBlock {
            heads: (0..config.heads)
                .map(|_| HeadWeights {
                    w_q: uniform(rng, d * dh, 1.0 / (d as f32).sqrt()),
                    w_k: uniform(rng, d * dh, 1.0 / (d as f32).sqrt()),
                    w_v: uniform(rng, d * dh, 1.0 / (d as f32).sqrt()),
                    w_o: uniform(rng, dh * d, 1.0 / (dh as f32).sqrt()),
                })
                .collect(),
            ln_scale: vec![1.0; d],
            ln_offset: vec![0.0; d],
        };
        let head = (0..config.head_depth).map(|_| block(&mut rng)).collect();
        let blocks = (0..config.blocks).map(|_| block(&mut rng)).collect();
        let net = Self {
            embed: uniform(&mut rng, CHANNELS * d, 1.0 / (CHANNELS as f32).sqrt()),
            embed_bias: vec![0.0; d],
            head,
            blocks,
            w_up: uniform(&mut rng, d * config.up_channels(), 1.0 / (d as f32).sqrt()),
            config,
            seed: Some(seed),
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), SrError> {
        let c = &self.config;
        c.validate()?;
        let d = c.channels;
        if self.embed.len() != CHANNELS * d || self.embed_bias.len() != d {
            return Err(SrError::Shape("embedding size".into()));
        }
        if self.head.len() != c.head_depth || self.blocks.len() != c.blocks {
            return Err(SrError::Shape("block count disagrees with config".into()));
        }
        for b in self.head.iter().chain(&self.blocks) {
            if b.dim() != d || b.heads.len() != c.heads {
                return Err(SrError::Shape("block width or head count".into()));
            }
            b.check(d)?;
        }
        if self.w_up.len() != d * c.up_channels() {
            return Err(SrError::Shape("upsampling kernel size".into()));
        }
        Ok(())
    }

    pub fn upscale(&self) -> u32 {
        self.config.upscale as u32
    }

    /// Per-pixel embedding of a frame normalized to `[0, 1]`.
    pub fn embed_frame(&self, p: &ImageFrame) -> FeatureMap {
        let d = self.config.channels;
        let inv = 1.0 / f64::from(p.max_value());
        let (w, h) = (p.width() as usize, p.height() as usize);
        let mut fm = FeatureMap::zeros(d, h, w);
        for y in 0..h {
            for x in 0..w {
                let px = p.pixel(x as u32, y as u32).map(|v| f64::from(v) * inv);
                let tok = fm.token_mut(y, x);
                for (j, t) in tok.iter_mut().enumerate() {
                    *t = f64::from(self.embed_bias[j])
                        + (0..CHANNELS).map(|c| px[c] * f64::from(self.embed[c * d + j])).sum::<f64>();
                }
            }
        }
        fm
    }

    /// Feature pipeline up to (not including) the pixel shuffle.
    pub fn features(&self, p: &ImageFrame) -> Result<FeatureMap, SrError> {
        let c = &self.config;
        let mut x = self.embed_frame(p);
        for b in &self.head {
            x = swin_block_forward(&x, b, c.window, c.ln_epsilon)?;
        }
        feature_aggregate(&x, &self.blocks, c.window, c.ln_epsilon)
    }

    pub fn forward(&self, p: &ImageFrame) -> Result<ImageFrame, SrError> {
        sr_forward(p, self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SrError> {
        let mut f = std::fs::File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SrError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let c = &self.config;
        let (d, dh) = (c.channels, c.head_dim());
        let mut v: Vec<(String, Vec<usize>, &[f32])> = vec![
            ("embed.weight".into(), vec![CHANNELS, d], &self.embed),
            ("embed.bias".into(), vec![d], &self.embed_bias),
        ];
        for (stage, list) in [("head", &self.head), ("blocks", &self.blocks)] {
            for (bi, b) in list.iter().enumerate() {
                for (hi, hw) in b.heads.iter().enumerate() {
                    let p = format!("{stage}.{bi}.attn.{hi}");
                    v.push((format!("{p}.q"), vec![d, dh], &hw.w_q));
                    v.push((format!("{p}.k"), vec![d, dh], &hw.w_k));
                    v.push((format!("{p}.v"), vec![d, dh], &hw.w_v));
                    v.push((format!("{p}.o"), vec![dh, d], &hw.w_o));
                }
                v.push((format!("{stage}.{bi}.ln.scale"), vec![d], &b.ln_scale));
                v.push((format!("{stage}.{bi}.ln.offset"), vec![d], &b.ln_offset));
            }
        }
        v.push(("up.weight".into(), vec![d, c.up_channels()], &self.w_up));
        v
    }

    /// Layout: `u64` LE header length, JSON header, then every tensor as
    /// little-endian `f32` in header order.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), SrError> {
        self.validate()?;
        let tensors = self.named_tensors();
        let header = WeightsHeader {
            format: WEIGHTS_FORMAT.into(),
            seed: self.seed,
            config: self.config,
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let hbytes = serde_json::to_vec(&header).map_err(|e| SrError::Weights(e.to_string()))?;
        w.write_all(&(hbytes.len() as u64).to_le_bytes())?;
        w.write_all(&hbytes)?;
        for (_, _, data) in tensors {
            let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, SrError> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 24 {
            return Err(SrError::Weights(format!("implausible header length {len}")));
        }
        let mut hbytes = vec![0u8; len as usize];
        r.read_exact(&mut hbytes)?;
        let header: WeightsHeader =
            serde_json::from_slice(&hbytes).map_err(|e| SrError::Weights(e.to_string()))?;
        if header.format != WEIGHTS_FORMAT {
            return Err(SrError::Weights(format!("unsupported format {:?}", header.format)));
        }
        header.config.validate()?;
        // Build a zero network of the declared shape, then fill by name.
        let c = header.config;
        let mut net = Self {
            config: c,
            seed: header.seed,
            embed: vec![],
            embed_bias: vec![],
            head: (0..c.head_depth).map(|_| AttentionBlock::zeros(c.channels, c.heads)).collect(),
            blocks: (0..c.blocks).map(|_| AttentionBlock::zeros(c.channels, c.heads)).collect(),
            w_up: vec![],
        };
        net.embed = vec![0.0; CHANNELS * c.channels];
        net.embed_bias = vec![0.0; c.channels];
        net.w_up = vec![0.0; c.channels * c.up_channels()];
        let expected: Vec<(String, Vec<usize>)> = net
            .named_tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let got: Vec<(String, Vec<usize>)> = header
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect();
        if expected != got {
            return Err(SrError::Weights("tensor manifest does not match config".into()));
        }
        let mut read_tensor = |n: usize| -> Result<Vec<f32>, SrError> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect())
        };
        let size = |shape: &[usize]| shape.iter().product::<usize>();
        let mut it = expected.iter();
        let mut next = |read: &mut dyn FnMut(usize) -> Result<Vec<f32>, SrError>| -> Result<Vec<f32>, SrError> {
            let (_, shape) = it.next().expect("manifest length checked");
            read(size(shape))
        };
        net.embed = next(&mut read_tensor)?;
        net.embed_bias = next(&mut read_tensor)?;
        for stage in [&mut net.head, &mut net.blocks] {
            for b in stage.iter_mut() {
                for hw in b.heads.iter_mut() {
                    hw.w_q = next(&mut read_tensor)?;
                    hw.w_k = next(&mut read_tensor)?;
                    hw.w_v = next(&mut read_tensor)?;
                    hw.w_o = next(&mut read_tensor)?;
                }
                b.ln_scale = next(&mut read_tensor)?;
                b.ln_offset = next(&mut read_tensor)?;
            }
        }
        net.w_up = next(&mut read_tensor)?;
        if net
            .named_tensors()
            .iter()
            .any(|(_, _, d)| d.iter().any(|v| !v.is_finite()))
        {
            return Err(SrError::Weights("non-finite weight".into()));
        }
        net.validate()?;
        Ok(net)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    format: String,
    seed: Option<u64>,
    config: SrConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Super-resolves `p` by the network's factor. Output keeps `p`'s format;
/// values are de-normalized with `p`'s bit depth and may exceed it.
pub fn sr_forward(p: &ImageFrame, net: &SrNetwork) -> Result<ImageFrame, SrError> {
    net.validate()?;
    let c = &net.config;
    if (p.width() as usize) < c.window || (p.height() as usize) < c.window {
        return Err(SrError::Shape(format!(
            "input {}x{} smaller than window {}",
            p.width(),
            p.height(),
            c.window
        )));
    }
    let feats = net.features(p)?;
    let up_ch = c.up_channels();
    let projected = matmul(&feats.data, feats.tokens(), c.channels, &net.w_up, up_ch);
    let projected = FeatureMap::from_vec(up_ch, feats.height, feats.width, projected)?;
    let hr = pixel_shuffle(&projected, c.upscale)?;
    let max = f64::from(p.max_value());
    let mut out = ImageFrame::new(hr.width as u32, hr.height as u32, p.format.clone())
        .map_err(|e| SrError::Shape(e.to_string()))?;
    for (o, v) in out.samples_mut().iter_mut().zip(&hr.data) {
        if !v.is_finite() {
            return Err(SrError::Shape("non-finite network output".into()));
        }
        *o = to_sample(v * max);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::FormatSpec;

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0f32; 3];
        let zeros = [0.0f32; 3];
        let y = layer_norm(&[1.0, 2.0, 3.0], &ones, &zeros, 1e-12);
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-3);
        }
        let y = layer_norm(&[4.0, 4.0, 4.0], &ones, &zeros, 1e-5);
        assert!(y.iter().all(|v| *v == 0.0));
        let y = layer_norm(&[1.0, 5.0, -3.0], &zeros, &[0.25; 3], 1e-5);
        assert!(y.iter().all(|v| *v == 0.25));
    }

    fn rand_block(d: usize, h: usize, seed: u64) -> AttentionBlock {
        let cfg = SrConfig {
            channels: d,
            heads: h,
            blocks: 1,
            head_depth: 0,
            ..SrConfig::default()
        };
        SrNetwork::seeded(cfg, seed).unwrap().blocks.remove(0)
    }

    #[test]
    fn single_token_attention_is_value_path() {
        let (d, h) = (4, 2);
        let b = rand_block(d, h, 3);
        let x = [0.3, -1.2, 0.7, 2.0];
        let (y, attn) = msa_tokens(&x, 1, &b).unwrap();
        assert!(attn.iter().all(|a| a == &vec![1.0]));
        let mut want = vec![0.0; d];
        for hw in &b.heads {
            let v = matmul(&x, 1, d, &hw.w_v, d / h);
            let o = matmul(&v, 1, d / h, &hw.w_o, d);
            for (w, p) in want.iter_mut().zip(o) {
                *w += p;
            }
        }
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_msa() {
        let b = AttentionBlock::zeros(8, 2);
        let x: Vec<f64> = (0..32).map(|i| f64::from(i) * 0.1).collect();
        let (y, _) = msa_tokens(&x, 4, &b).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn msa_shape_mismatch() {
        let b = AttentionBlock::zeros(8, 2);
        let x = FeatureMap::zeros(6, 2, 2);
        assert!(matches!(msa_forward(&x, &b), Err(SrError::Shape(_))));
    }

    #[test]
    fn zero_weight_blocks_hand_trace() {
        // d = 3, one head, window 1: block(x) = LN(x); aggregate = x + K LN(x)
        let x = FeatureMap::from_vec(3, 1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let blocks = vec![AttentionBlock::zeros(3, 1), AttentionBlock::zeros(3, 1)];
        let y = feature_aggregate(&x, &blocks, 1, 1e-12).unwrap();
        let ln = 1.224744871391589;
        let want = [1.0 - 2.0 * ln, 2.0, 3.0 + 2.0 * ln];
        for (a, b) in y.data.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert_eq!(feature_aggregate(&x, &[], 1, 1e-5).unwrap(), x);
    }

    #[test]
    fn reflect_padding_pinned() {
        assert_eq!((0..7).map(|i| reflect(i, 4)).collect::<Vec<_>>(), vec![0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(5, 1), 0);
        // Padding never changes the output shape.
        let b = rand_block(4, 2, 1);
        let x = FeatureMap::from_vec(4, 5, 7, (0..140).map(|i| (f64::from(i) * 0.37).sin()).collect()).unwrap();
        let y = swin_block_forward(&x, &b, 4, 1e-5).unwrap();
        assert_eq!((y.channels, y.height, y.width), (4, 5, 7));
    }

    #[test]
    fn padded_block_matches_explicit_reflection() {
        // A 3x3 map with window 2 pads to 4x4 using rows/cols [0,1,2,1].
        let b = rand_block(2, 1, 9);
        let x = FeatureMap::from_vec(2, 3, 3, (0..18).map(|i| f64::from(i) / 7.0).collect()).unwrap();
        let y = swin_block_forward(&x, &b, 2, 1e-5).unwrap();
        // bottom-right window holds source pixels (2,2),(2,1),(1,2),(1,1)
        let idx = [(2, 2), (2, 1), (1, 2), (1, 1)];
        let mut toks = Vec::new();
        for (yy, xx) in idx {
            toks.extend_from_slice(x.token(yy, xx));
        }
        let (mut m, _) = msa_tokens(&toks, 4, &b).unwrap();
        for (a, t) in m.iter_mut().zip(&toks) {
            *a += t;
        }
        let want = layer_norm(&m[0..2], &b.ln_scale, &b.ln_offset, 1e-5);
        assert_eq!(y.token(2, 2), &want[..]);
    }

    #[test]
    fn pixel_shuffle_examples() {
        let x = FeatureMap::from_vec(4, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!((y.channels, y.height, y.width), (1, 2, 2));
        assert_eq!(y.data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert!(pixel_shuffle(&FeatureMap::zeros(6, 1, 1), 2).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SrConfig { upscale: 5, ..SrConfig::default() }.validate().is_err());
        assert!(SrConfig { channels: 30, heads: 4, ..SrConfig::default() }.validate().is_err());
        assert!(SrConfig::default().validate().is_ok());
    }

    #[test]
    fn weights_roundtrip_and_corruption() {
        let net = SrNetwork::seeded(SrConfig::default(), 7).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = SrNetwork::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert!(SrNetwork::read_from(&mut &buf[..buf.len() - 4]).is_err());
        let mut bad = buf.clone();
        bad[12] ^= 0x20;
        assert!(SrNetwork::read_from(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn sr_forward_shape_and_determinism() {
        let net = SrNetwork::seeded(SrConfig::default(), 11).unwrap();
        let mut p = ImageFrame::new(16, 16, FormatSpec::srgb8()).unwrap();
        for (i, v) in p.samples_mut().iter_mut().enumerate() {
            *v = (i * 31 % 256) as u16;
        }
        let a = sr_forward(&p, &net).unwrap();
        let b = sr_forward(&p, &net).unwrap();
        assert_eq!((a.width(), a.height()), (32, 32));
        assert_eq!(a, b);
        let small = ImageFrame::new(7, 16, FormatSpec::srgb8()).unwrap();
        assert!(matches!(sr_forward(&small, &net), Err(SrError::Shape(_))));
    }
}
