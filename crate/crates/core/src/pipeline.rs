//! The full matting chain from a recorded trace and its decoded image to an RGBA result.

use std::path::Path;

use crate::attention::{
    adjust_opacity, aggregate, estimate_alpha, foreground_cross_map, fuse_self_attention, AlphaMap,
    AttentionTrace, ForegroundCrossMap,
};
use crate::dit::ToyModel;
use crate::error::Result;
use crate::generate::{generate, DiffusionBackend, GenerationOutput, GenerationRequest};
use crate::grabcut::{clean_alpha, grabcut_refine, FgMask, GrabCutParams};
use crate::imaging::{assemble_rgba, write_heatmap, RgbImage, RgbaImage};
use crate::prompt::{default_exclusions, extract_nouns, NounSpans};
use crate::trimap::{quantize_trimap, ThresholdMode, Trimap4, TrimapLevels};

pub const DEFAULT_OPACITY_K: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MattingOptions {
    pub exclusions: Vec<String>,
    pub nouns: Option<Vec<String>>,
    pub opacity_k: f32,
    pub levels: TrimapLevels,
    pub threshold_mode: ThresholdMode,
    pub grabcut: GrabCutParams,
}

impl Default for MattingOptions {
    fn default() -> Self {
        Self {
            exclusions: default_exclusions(),
            nouns: None,
            opacity_k: DEFAULT_OPACITY_K,
            levels: TrimapLevels::default(),
            threshold_mode: ThresholdMode::default(),
            grabcut: GrabCutParams::default(),
        }
    }
}

/// Final image plus every intermediate map.
#[derive(Debug, Clone)]
pub struct MattingResult {
    pub rgba: RgbaImage,
    pub nouns: NounSpans,
    pub fg_cross: ForegroundCrossMap,
    pub fused_self: AlphaMap,
    pub alpha_hat: AlphaMap,
    pub alpha_adjusted: AlphaMap,
    pub trimap: Trimap4,
    pub mask: FgMask,
    pub alpha: AlphaMap,
}

impl MattingResult {
    /// Writes `<stem>_ca_fg.png`, `<stem>_ff.png`, `<stem>_alpha_hat.png` and `<stem>_trimap.png` into `dir`.
    pub fn write_debug(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_heatmap(
            self.fg_cross.as_map(),
            dir.join(format!("{stem}_ca_fg.png")),
        )?;
        write_heatmap(self.fused_self.as_map(), dir.join(format!("{stem}_ff.png")))?;
        write_heatmap(
            self.alpha_hat.as_map(),
            dir.join(format!("{stem}_alpha_hat.png")),
        )?;
        self.trimap
            .write_png(dir.join(format!("{stem}_trimap.png")))
    }
}

pub fn extract_alpha(
    trace: &AttentionTrace,
    rgb: &RgbImage,
    opts: &MattingOptions,
) -> Result<MattingResult> {
    let nouns = extract_nouns(&trace.prompt, &opts.exclusions, opts.nouns.as_deref())?;
    let maps = aggregate(trace)?;
    let (h, w) = rgb.dims();
    let fg_cross = foreground_cross_map(&maps, &nouns, h, w)?;
    let fused_self = fuse_self_attention(&maps, &fg_cross)?;
    let alpha_hat = estimate_alpha(&fg_cross, &fused_self)?;
    let alpha_adjusted = adjust_opacity(&alpha_hat, opts.opacity_k)?;
    let trimap = quantize_trimap(&fg_cross, opts.levels, opts.threshold_mode)?;
    let mask = grabcut_refine(rgb, &trimap, &opts.grabcut)?;
    let alpha = clean_alpha(&alpha_adjusted, &mask)?;
    let rgba = assemble_rgba(rgb, alpha.as_map())?;
    Ok(MattingResult {
        rgba,
        nouns,
        fg_cross,
        fused_self,
        alpha_hat,
        alpha_adjusted,
        trimap,
        mask,
        alpha,
    })
}

/// Generation followed by matting; the GrabCut seed follows the generation seed.
pub fn generate_rgba<B: DiffusionBackend + ?Sized>(
    model: &B,
    req: &GenerationRequest,
    opts: &MattingOptions,
) -> Result<(GenerationOutput, MattingResult)> {
    let out = generate(model, req)?;
    let opts = MattingOptions {
        grabcut: GrabCutParams {
            seed: req.seed,
            ..opts.grabcut
        },
        ..opts.clone()
    };
    let matte = extract_alpha(&out.trace, &out.rgb, &opts)?;
    Ok((out, matte))
}

/// Toy-backend convenience with default model weights.
pub fn toy_rgba(
    req: &GenerationRequest,
    opts: &MattingOptions,
) -> Result<(GenerationOutput, MattingResult)> {
    let model = ToyModel::new(Default::default())?;
    generate_rgba(&model, req, opts)
}
