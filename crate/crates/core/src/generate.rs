//! Subject-centring denoising loop.
//!
//! Every step evaluates four branches, ordered `[null-bg, text-bg, null-fg,
//! text-fg]`, combines each pair with classifier-free guidance, takes one
//! Euler step per branch from the shared latent and merges the results with
//! the centre mask: the subject branch inside, the background branch on the
//! border band. Attention is kept only for the text-conditioned subject
//! branch and only for the final `keep_last_maps` steps.

use crate::attention::{AttentionTrace, SelfAttention};
use crate::dit::{AttentionRecord, PromptEmbedding, ToyModel};
use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::rng::{self, Stream};
use crate::sampler::{
    cfg_combine, default_schedule, euler_step, scale_model_input, GuidanceScale, NoiseSchedule,
};
use crate::tensor::LatentTensor;

pub const DEFAULT_BG_PROMPT: &str = "a white background";
pub const DEFAULT_STEPS: usize = 30;
pub const DEFAULT_BORDER_PX: usize = 64;
pub const DEFAULT_KEEP_LAST_MAPS: usize = 10;

/// A model that can drive the denoising loop.
pub trait DiffusionBackend {
    fn latent_shape(&self) -> (usize, usize, usize);

    fn token_grid(&self) -> (usize, usize);

    fn encode_prompt(&self, prompt: &str) -> Result<PromptEmbedding>;

    fn null_prompt(&self) -> PromptEmbedding;

    fn estimate_noise(
        &self,
        x: &LatentTensor,
        e: &PromptEmbedding,
        timestep: usize,
        record: bool,
    ) -> Result<(LatentTensor, Vec<AttentionRecord>)>;

    fn decode(&self, x0: &LatentTensor, out_h: usize, out_w: usize) -> Result<RgbImage>;
}

impl DiffusionBackend for ToyModel {
    fn latent_shape(&self) -> (usize, usize, usize) {
        ToyModel::latent_shape(self)
    }

    fn token_grid(&self) -> (usize, usize) {
        ToyModel::token_grid(self)
    }

    fn encode_prompt(&self, prompt: &str) -> Result<PromptEmbedding> {
        ToyModel::encode_prompt(self, prompt)
    }

    fn null_prompt(&self) -> PromptEmbedding {
        ToyModel::null_prompt(self)
    }

    fn estimate_noise(
        &self,
        x: &LatentTensor,
        e: &PromptEmbedding,
        timestep: usize,
        record: bool,
    ) -> Result<(LatentTensor, Vec<AttentionRecord>)> {
        ToyModel::estimate_noise(self, x, e, timestep, record)
    }

    fn decode(&self, x0: &LatentTensor, out_h: usize, out_w: usize) -> Result<RgbImage> {
        ToyModel::decode(self, x0, out_h, out_w)
    }
}

/// Binary latent-resolution mask, 1 on an inner rectangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl CenterMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn all_ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1; height * width],
        }
    }
}

/// Mask with a border band of `round(border_px / downsample_factor)` latent pixels.
pub fn make_center_mask(
    latent_h: usize,
    latent_w: usize,
    border_px: usize,
    downsample_factor: usize,
) -> Result<CenterMask> {
    if downsample_factor == 0 {
        return Err(Error::InvalidArgument(
            "downsample factor must be positive".into(),
        ));
    }
    let band = (border_px as f64 / downsample_factor as f64).round() as usize;
    if 2 * band >= latent_h || 2 * band >= latent_w {
        return Err(Error::InvalidArgument(format!(
            "border of {border_px}px ({band} latent px) leaves no interior in a {latent_h}x{latent_w} latent"
        )));
    }
    let mut values = vec![0u8; latent_h * latent_w];
    for y in band..latent_h - band {
        for x in band..latent_w - band {
            values[y * latent_w + x] = 1;
        }
    }
    Ok(CenterMask {
        height: latent_h,
        width: latent_w,
        values,
    })
}

/// `x_fg * m + x_bg * (1 - m)`, mask broadcast over channels.
///
/// The mask is binary, so each element is taken verbatim from one input.
pub fn blend_latents(
    x_fg: &LatentTensor,
    x_bg: &LatentTensor,
    m: &CenterMask,
) -> Result<LatentTensor> {
    x_fg.ensure_same_shape(x_bg)?;
    if (x_fg.height(), x_fg.width()) != (m.height, m.width) {
        return Err(Error::shape(
            (m.height, m.width),
            (x_fg.height(), x_fg.width()),
        ));
    }
    let plane = m.height * m.width;
    let values = x_fg
        .values()
        .iter()
        .zip(x_bg.values())
        .enumerate()
        .map(|(i, (&f, &b))| if m.values[i % plane] == 1 { f } else { b })
        .collect();
    LatentTensor::from_vec(x_fg.channels(), x_fg.height(), x_fg.width(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub bg_prompt: String,
    pub seed: u64,
    pub steps: usize,
    pub guidance: GuidanceScale,
    pub out_size: (usize, usize),
    pub border_px: usize,
    pub keep_last_maps: usize,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            bg_prompt: DEFAULT_BG_PROMPT.to_string(),
            seed: 0,
            steps: DEFAULT_STEPS,
            guidance: GuidanceScale::default(),
            out_size: (512, 512),
            border_px: DEFAULT_BORDER_PX,
            keep_last_maps: DEFAULT_KEEP_LAST_MAPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.keep_last_maps > self.steps {
            return Err(Error::InvalidArgument(format!(
                "keep_last_maps ({}) exceeds steps ({})",
                self.keep_last_maps, self.steps
            )));
        }
        if self.out_size.0 == 0 || self.out_size.1 == 0 {
            return Err(Error::InvalidArgument(
                "output size must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub rgb: RgbImage,
    pub trace: AttentionTrace,
    pub final_latent: LatentTensor,
}

/// Per-step view handed to a [`generate_observed`] callback.
#[derive(Debug)]
pub struct StepState<'a> {
    pub index: usize,
    pub timestep: usize,
    pub sigma: f64,
    pub sigma_next: f64,
    /// Shared latent both branches start from.
    pub x_t: &'a LatentTensor,
    pub x_fg: &'a LatentTensor,
    pub x_bg: &'a LatentTensor,
    pub merged: &'a LatentTensor,
}

/// Pixel-to-latent downsampling factor for an output size (rounded, at least 1).
pub fn downsample_factor(latent_h: usize, out_h: usize) -> usize {
    ((out_h as f64 / latent_h as f64).round() as usize).max(1)
}

pub fn initial_latent(
    shape: (usize, usize, usize),
    seed: u64,
    schedule: &NoiseSchedule,
) -> LatentTensor {
    let (c, h, w) = shape;
    let values = rng::gaussian_vec(
        &mut rng::stream(seed, Stream::InitialNoise),
        c * h * w,
        schedule.init_noise_sigma(),
    );
    LatentTensor::from_vec(c, h, w, values).expect("gaussian noise is finite")
}

pub fn generate<B: DiffusionBackend + ?Sized>(
    model: &B,
    req: &GenerationRequest,
) -> Result<GenerationOutput> {
    generate_observed(model, req, |_| {})
}

/// [`generate`] with a callback invoked after every merge.
pub fn generate_observed<B: DiffusionBackend + ?Sized>(
    model: &B,
    req: &GenerationRequest,
    mut observe: impl FnMut(&StepState<'_>),
) -> Result<GenerationOutput> {
    req.validate()?;
    let (_, lh, lw) = model.latent_shape();
    let mask = make_center_mask(lh, lw, req.border_px, downsample_factor(lh, req.out_size.0))?;
    let schedule = default_schedule(req.steps)?;
    let null = model.null_prompt();
    let e_fg = model.encode_prompt(&req.prompt)?;
    let e_bg = model.encode_prompt(&req.bg_prompt)?;
    let mut recorder = TraceRecorder::new(model, req, &e_fg, &schedule);

    let mut x = initial_latent(model.latent_shape(), req.seed, &schedule);
    for (i, &t) in schedule.timesteps().iter().enumerate() {
        let (sigma, sigma_next) = (schedule.sigmas()[i], schedule.sigmas()[i + 1]);
        let x_in = scale_model_input(&x, sigma);
        let record = i + req.keep_last_maps >= req.steps;

        // Both branches start from the same latent, so the two null-prompt
        // predictions of the batch coincide and are computed once.
        let (eps_null, _) = model.estimate_noise(&x_in, &null, t, false)?;
        let (eps_bg_text, _) = model.estimate_noise(&x_in, &e_bg, t, false)?;
        let (eps_fg_text, records) = model.estimate_noise(&x_in, &e_fg, t, record)?;

        let x_bg = euler_step(
            &x,
            &cfg_combine(&eps_null, &eps_bg_text, req.guidance)?,
            sigma,
            sigma_next,
        )?;
        let x_fg = euler_step(
            &x,
            &cfg_combine(&eps_null, &eps_fg_text, req.guidance)?,
            sigma,
            sigma_next,
        )?;
        let merged = blend_latents(&x_fg, &x_bg, &mask)?;
        if record {
            recorder.push(i, records)?;
        }
        observe(&StepState {
            index: i,
            timestep: t,
            sigma,
            sigma_next,
            x_t: &x,
            x_fg: &x_fg,
            x_bg: &x_bg,
            merged: &merged,
        });
        x = merged;
    }

    let rgb = model.decode(&x, req.out_size.0, req.out_size.1)?;
    Ok(GenerationOutput {
        rgb,
        trace: recorder.finish(),
        final_latent: x,
    })
}

/// Plain classifier-free-guidance sampling of the subject prompt, without
/// centring. Shares the noise stream with [`generate`].
pub fn generate_single_branch<B: DiffusionBackend + ?Sized>(
    model: &B,
    req: &GenerationRequest,
) -> Result<GenerationOutput> {
    req.validate()?;
    let schedule = default_schedule(req.steps)?;
    let null = model.null_prompt();
    let e_fg = model.encode_prompt(&req.prompt)?;
    let mut recorder = TraceRecorder::new(model, req, &e_fg, &schedule);

    let mut x = initial_latent(model.latent_shape(), req.seed, &schedule);
    for (i, &t) in schedule.timesteps().iter().enumerate() {
        let (sigma, sigma_next) = (schedule.sigmas()[i], schedule.sigmas()[i + 1]);
        let x_in = scale_model_input(&x, sigma);
        let record = i + req.keep_last_maps >= req.steps;
        let (eps_null, _) = model.estimate_noise(&x_in, &null, t, false)?;
        let (eps_text, records) = model.estimate_noise(&x_in, &e_fg, t, record)?;
        x = euler_step(
            &x,
            &cfg_combine(&eps_null, &eps_text, req.guidance)?,
            sigma,
            sigma_next,
        )?;
        if record {
            recorder.push(i, records)?;
        }
    }
    let rgb = model.decode(&x, req.out_size.0, req.out_size.1)?;
    Ok(GenerationOutput {
        rgb,
        trace: recorder.finish(),
        final_latent: x,
    })
}

struct TraceRecorder {
    trace: AttentionTrace,
    cross: Vec<f32>,
    self_maps: Vec<f32>,
}

impl TraceRecorder {
    fn new<B: DiffusionBackend + ?Sized>(
        model: &B,
        req: &GenerationRequest,
        e: &PromptEmbedding,
        schedule: &NoiseSchedule,
    ) -> Self {
        let trace = AttentionTrace {
            prompt: req.prompt.clone(),
            bg_prompt: req.bg_prompt.clone(),
            token_strings: e.token_strings().to_vec(),
            token_grid: model.token_grid(),
            sigma_schedule: schedule.sigmas().to_vec(),
            steps_recorded: Vec::new(),
            layers: 0,
            heads: 0,
            cross: Vec::new(),
            self_attn: SelfAttention::PerRecord(Vec::new()),
        };
        Self {
            trace,
            cross: Vec::new(),
            self_maps: Vec::new(),
        }
    }

    /// Appends one step's records, which must be layer-major and complete.
    fn push(&mut self, step: usize, records: Vec<AttentionRecord>) -> Result<()> {
        let layers = records.iter().map(|r| r.layer + 1).max().unwrap_or(0);
        let heads = records.iter().map(|r| r.head + 1).max().unwrap_or(0);
        if records.len() != layers * heads || layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "backend returned {} attention records for {layers} layers x {heads} heads",
                records.len()
            )));
        }
        if self.trace.steps_recorded.is_empty() {
            self.trace.layers = layers;
            self.trace.heads = heads;
        } else if (layers, heads) != (self.trace.layers, self.trace.heads) {
            return Err(Error::InvalidArgument(
                "attention record layout changed between steps".into(),
            ));
        }
        for (i, r) in records.into_iter().enumerate() {
            if (r.layer, r.head) != (i / heads, i % heads) {
                return Err(Error::InvalidArgument(
                    "attention records are not in layer-major order".into(),
                ));
            }
            self.cross.extend(r.cross);
            self.self_maps.extend(r.self_);
        }
        self.trace.steps_recorded.push(step);
        Ok(())
    }

    fn finish(mut self) -> AttentionTrace {
        self.trace.cross = self.cross;
        self.trace.self_attn = SelfAttention::PerRecord(self.self_maps);
        self.trace
    }
}
