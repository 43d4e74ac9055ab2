//! A small, deterministic diffusion transformer used as a stand-in noise
//! estimator, together with a frozen linear latent decoder.
//!
//! The network patchifies the latent into tokens, adds 2-D sinusoidal
//! position and timestep embeddings, and runs pre-norm blocks of
//! self-attention, cross-attention to the prompt tokens and a GELU MLP.
//! Its head predicts a bounded clean latent `D`, which is turned into a noise
//! estimate `eps = (x - D) / sigma`; this keeps the sampled chain bounded even
//! though the weights are random. All attention probabilities are recorded
//! exactly as used in the forward pass.

mod layers;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{bilinear_resize, RgbImage, ScalarMap};
use crate::prompt::tokenize;
use crate::rng::{self, Stream};
use crate::sampler::{
    alphas_cumprod, sigma_at, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS,
};
use crate::tensor::LatentTensor;

use layers::{gelu, layer_norm_rows, multi_head_attention, sinusoid, Linear};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyDitConfig {
    pub latent_channels: usize,
    pub latent_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub prompt_dim: usize,
    pub seed: u64,
}

impl Default for ToyDitConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            latent_size: 16,
            patch_size: 2,
            depth: 4,
            heads: 4,
            model_dim: 64,
            prompt_dim: 64,
            seed: 0,
        }
    }
}

impl ToyDitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.latent_channels,
            self.latent_size,
            self.patch_size,
            self.depth,
            self.heads,
            self.model_dim,
            self.prompt_dim,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument(
                "toy model dimensions must be positive".into(),
            ));
        }
        if self.latent_size % self.patch_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "latent_size {} not divisible by patch_size {}",
                self.latent_size, self.patch_size
            )));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.model_dim % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "model_dim {} must be a multiple of 4 for 2-D position embeddings",
                self.model_dim
            )));
        }
        Ok(())
    }

    /// Tokens per side of the patch grid.
    pub fn grid_side(&self) -> usize {
        self.latent_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }
}

/// Prompt tokens embedded as `N x prompt_dim` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    token_strings: Vec<String>,
    dim: usize,
    values: Vec<f64>,
}

impl PromptEmbedding {
    pub fn new(token_strings: Vec<String>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if token_strings.is_empty() {
            return Err(Error::InvalidArgument(
                "prompt embedding needs at least one token".into(),
            ));
        }
        if values.len() != token_strings.len() * dim {
            return Err(Error::shape(token_strings.len() * dim, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "prompt embedding has non-finite values".into(),
            ));
        }
        Ok(Self {
            token_strings,
            dim,
            values,
        })
    }

    /// The null prompt: one all-zero token.
    pub fn null(dim: usize) -> Self {
        Self {
            token_strings: vec![String::new()],
            dim,
            values: vec![0.0; dim],
        }
    }

    /// Deterministic Gaussian embedding per token string, seeded by its hash.
    pub fn from_tokens(tokens: &[String], dim: usize) -> Result<Self> {
        let values = tokens
            .iter()
            .flat_map(|t| {
                rng::gaussian_vec(
                    &mut rng::stream(rng::hash_seed(t), Stream::PromptToken),
                    dim,
                    1.0,
                )
            })
            .collect();
        Self::new(tokens.to_vec(), dim, values)
    }

    pub fn len(&self) -> usize {
        self.token_strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_strings.is_empty()
    }

    pub fn token_strings(&self) -> &[String] {
        &self.token_strings
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Attention probabilities of one (layer, head) in one forward pass.
///
/// `cross` is `tokens x N` (row per image token), `self_` is `tokens x tokens`
/// (row per source token, columns over the token grid in row-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub cross: Vec<f32>,
    pub self_: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    cq: Linear,
    ck: Linear,
    cv: Linear,
    co: Linear,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn params(&self) -> impl Iterator<Item = &f64> {
        [
            &self.q, &self.k, &self.v, &self.o, &self.cq, &self.ck, &self.cv, &self.co, &self.fc1,
            &self.fc2,
        ]
        .into_iter()
        .flat_map(Linear::params)
    }
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ToyDitConfig,
    patch_embed: Linear,
    pos_embed: Vec<f64>,
    blocks: Vec<Block>,
    head: Linear,
    decoder: Linear,
    alphas_cumprod: Vec<f64>,
}

pub fn init_model(config: ToyDitConfig) -> Result<ToyModel> {
    ToyModel::new(config)
}

impl ToyModel {
    pub fn new(config: ToyDitConfig) -> Result<Self> {
        config.validate()?;
        let mut rng: ChaCha8Rng = rng::stream(config.seed, Stream::ModelWeights);
        let dim = config.model_dim;
        let patch_len = config.latent_channels * config.patch_size * config.patch_size;
        let patch_embed = Linear::init(&mut rng, dim, patch_len, 1.0, 0.0);
        let blocks = (0..config.depth)
            .map(|_| Block {
                q: Linear::init(&mut rng, dim, dim, 1.5, 0.0),
                k: Linear::init(&mut rng, dim, dim, 1.5, 0.0),
                v: Linear::init(&mut rng, dim, dim, 1.0, 0.0),
                o: Linear::init(&mut rng, dim, dim, 0.5, 0.0),
                cq: Linear::init(&mut rng, dim, dim, 1.5, 0.0),
                ck: Linear::init(&mut rng, dim, config.prompt_dim, 1.5, 0.0),
                cv: Linear::init(&mut rng, dim, config.prompt_dim, 1.0, 0.0),
                co: Linear::init(&mut rng, dim, dim, 0.5, 0.0),
                fc1: Linear::init(&mut rng, 4 * dim, dim, 1.0, 0.0),
                fc2: Linear::init(&mut rng, dim, 4 * dim, 0.5, 0.0),
            })
            .collect();
        let head = Linear::init(&mut rng, patch_len, dim, 1.0, 0.0);
        let decoder = Linear::init(&mut rng, 3, config.latent_channels, 0.8, 0.2);
        let pos_embed = position_embedding(config.grid_side(), dim);
        Ok(Self {
            config,
            patch_embed,
            pos_embed,
            blocks,
            head,
            decoder,
            alphas_cumprod: alphas_cumprod(
                DEFAULT_BETA_START,
                DEFAULT_BETA_END,
                DEFAULT_TRAIN_STEPS,
            ),
        })
    }

    pub fn config(&self) -> &ToyDitConfig {
        &self.config
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let c = &self.config;
        (c.latent_channels, c.latent_size, c.latent_size)
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.config.grid_side(), self.config.grid_side())
    }

    /// SHA-256 over every weight in initialisation order, little-endian f64.
    pub fn weights_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        let params = self
            .patch_embed
            .params()
            .chain(self.blocks.iter().flat_map(Block::params))
            .chain(self.head.params())
            .chain(self.decoder.params());
        for p in params {
            hasher.update(p.to_le_bytes());
        }
        hex(&hasher.finalize())
    }

    pub fn encode_prompt(&self, prompt: &str) -> Result<PromptEmbedding> {
        let tokens = tokenize(prompt);
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "prompt {prompt:?} has no tokens"
            )));
        }
        PromptEmbedding::from_tokens(&tokens, self.config.prompt_dim)
    }

    pub fn null_prompt(&self) -> PromptEmbedding {
        PromptEmbedding::null(self.config.prompt_dim)
    }

    /// Predicts the noise in the scaled model input `x` at a training timestep.
    ///
    /// With `record` set, returns one [`AttentionRecord`] per (layer, head) in
    /// layer-major order.
    pub fn estimate_noise(
        &self,
        x: &LatentTensor,
        e: &PromptEmbedding,
        timestep: usize,
        record: bool,
    ) -> Result<(LatentTensor, Vec<AttentionRecord>)> {
        if x.shape() != self.latent_shape() {
            return Err(Error::shape(self.latent_shape(), x.shape()));
        }
        if e.dim() != self.config.prompt_dim {
            return Err(Error::shape(self.config.prompt_dim, e.dim()));
        }
        if timestep >= self.alphas_cumprod.len() {
            return Err(Error::InvalidArgument(format!(
                "timestep {timestep} outside the {} step training schedule",
                self.alphas_cumprod.len()
            )));
        }
        let cfg = &self.config;
        let dim = cfg.model_dim;
        let tokens = cfg.num_tokens();
        let n_prompt = e.len();

        let temb = sinusoid(timestep as f64, dim);
        let mut h = self.patch_embed.apply_rows(&patchify(x, cfg.patch_size));
        for (t, row) in h.chunks_exact_mut(dim).enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v += self.pos_embed[t * dim + i] + temb[i];
            }
        }

        let mut records = Vec::new();
        for (l, block) in self.blocks.iter().enumerate() {
            let n = layer_norm_rows(&h, dim);
            let (attn, self_probs) = multi_head_attention(
                &block.q.apply_rows(&n),
                &block.k.apply_rows(&n),
                &block.v.apply_rows(&n),
                tokens,
                tokens,
                dim,
                cfg.heads,
            );
            add_assign(&mut h, &block.o.apply_rows(&attn));

            let n = layer_norm_rows(&h, dim);
            let (attn, cross_probs) = multi_head_attention(
                &block.cq.apply_rows(&n),
                &block.ck.apply_rows(e.values()),
                &block.cv.apply_rows(e.values()),
                tokens,
                n_prompt,
                dim,
                cfg.heads,
            );
            add_assign(&mut h, &block.co.apply_rows(&attn));

            let n = layer_norm_rows(&h, dim);
            let hidden: Vec<f64> = block.fc1.apply_rows(&n).into_iter().map(gelu).collect();
            add_assign(&mut h, &block.fc2.apply_rows(&hidden));

            if record {
                for (head, (c, s)) in cross_probs.into_iter().zip(self_probs).enumerate() {
                    records.push(AttentionRecord {
                        layer: l,
                        head,
                        cross: c.into_iter().map(|v| v as f32).collect(),
                        self_: s.into_iter().map(|v| v as f32).collect(),
                    });
                }
            }
        }

        let out = self.head.apply_rows(&layer_norm_rows(&h, dim));
        let denoised = unpatchify(&out, self.latent_shape(), cfg.patch_size);
        let sigma = sigma_at(&self.alphas_cumprod, timestep);
        let unscale = (sigma * sigma + 1.0).sqrt();
        let eps = x.zip_map(&denoised, |xi, d| (xi * unscale - d.tanh()) / sigma)?;
        Ok((eps, records))
    }

    /// Linear channel projection to RGB, bilinear upsampling, clamp to `[-1, 1]`.
    pub fn decode(&self, x0: &LatentTensor, out_h: usize, out_w: usize) -> Result<RgbImage> {
        if x0.channels() != self.config.latent_channels {
            return Err(Error::shape(self.config.latent_channels, x0.channels()));
        }
        let (h, w) = (x0.height(), x0.width());
        let mut planes = Vec::with_capacity(3);
        for c in 0..3 {
            let plane = ScalarMap::from_fn(h, w, |y, x| {
                let px: Vec<f64> = (0..x0.channels()).map(|k| x0.get(k, y, x)).collect();
                let row = &self.decoder.weight[c * self.decoder.inp..(c + 1) * self.decoder.inp];
                (self.decoder.bias[c] + row.iter().zip(&px).map(|(a, b)| a * b).sum::<f64>()) as f32
            });
            planes.push(bilinear_resize(&plane, out_h, out_w)?);
        }
        Ok(RgbImage::from_fn(out_h, out_w, |y, x| {
            [
                planes[0].get(y, x),
                planes[1].get(y, x),
                planes[2].get(y, x),
            ]
        }))
    }

    /// Decoder bias, i.e. the colour of a zero latent.
    pub fn decoder_bias(&self) -> [f64; 3] {
        [
            self.decoder.bias[0],
            self.decoder.bias[1],
            self.decoder.bias[2],
        ]
    }
}

fn add_assign(acc: &mut [f64], delta: &[f64]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}

/// (C, H, W) latent to `tokens x (C * p * p)` rows, tokens in row-major grid order.
fn patchify(x: &LatentTensor, p: usize) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let (gh, gw) = (h / p, w / p);
    let mut out = Vec::with_capacity(c * h * w);
    for ty in 0..gh {
        for tx in 0..gw {
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        out.push(x.get(ch, ty * p + dy, tx * p + dx));
                    }
                }
            }
        }
    }
    out
}

fn unpatchify(rows: &[f64], (c, h, w): (usize, usize, usize), p: usize) -> LatentTensor {
    let gw = w / p;
    let mut out = LatentTensor::zeros(c, h, w);
    let patch_len = c * p * p;
    for (t, row) in rows.chunks_exact(patch_len).enumerate() {
        let (ty, tx) = (t / gw, t % gw);
        for ch in 0..c {
            for dy in 0..p {
                for dx in 0..p {
                    out.set(ch, ty * p + dy, tx * p + dx, row[(ch * p + dy) * p + dx]);
                }
            }
        }
    }
    out
}

/// 2-D sin-cos embedding: first half of the channels encodes the row, second half the column.
fn position_embedding(side: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(side * side * dim);
    for y in 0..side {
        for x in 0..side {
            out.extend(sinusoid(y as f64, dim / 2));
            out.extend(sinusoid(x as f64, dim / 2));
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
