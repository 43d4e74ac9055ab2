//! `illumatte` command-line interface.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use illumatte::dit::ToyModel;
use illumatte::eval::{
    batch_report, empty_border_flags, parse_clip_scores, BorderFlags, PixelScale,
};
use illumatte::generate::{
    GenerationRequest, DEFAULT_BG_PROMPT, DEFAULT_BORDER_PX, DEFAULT_KEEP_LAST_MAPS, DEFAULT_STEPS,
};
use illumatte::grabcut::GrabCutParams;
use illumatte::imaging::{composite_over, read_png, write_png, write_rgb_png, RgbImage};
use illumatte::pipeline::{
    extract_alpha, generate_rgba, MattingOptions, MattingResult, DEFAULT_OPACITY_K,
};
use illumatte::prompt::{default_exclusions, load_exclusions, parse_noun_list};
use illumatte::sampler::GuidanceScale;
use illumatte::trace_io::{read_trace, write_trace, MANIFEST_FILE};
use illumatte::trimap::ThresholdMode;

use config::ConfigFile;

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

const DEFAULT_SIZE: usize = 512;

#[derive(Parser, Debug)]
#[command(
    name = "illumatte",
    version,
    about = "Centred RGBA illustrations with attention-derived alpha"
)]
struct Cli {
    /// TOML file with defaults for any flag (flags and ALFIE_* variables take precedence).
    #[arg(long, global = true, env = "ALFIE_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a centred subject and matte it into an RGBA PNG.
    Generate(GenerateArgs),
    /// Matte a recorded attention trace into an RGBA PNG.
    ExtractAlpha(ExtractArgs),
    /// Empty-border report over a directory of images.
    Eval(EvalArgs),
    /// Alpha-composite an RGBA image over a background.
    Composite(CompositeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Toy,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Quantile,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scale {
    #[value(name = "-1..1")]
    Signed,
    #[value(name = "0..1")]
    Unit,
}

#[derive(Args, Debug)]
struct MatteArgs {
    /// Opacity boost: alpha becomes min(1, (1 + k) * alpha).
    #[arg(long, env = "ALFIE_K", allow_negative_numbers = true)]
    k: Option<f32>,
    /// Comma-separated subject nouns, bypassing automatic extraction.
    #[arg(long, env = "ALFIE_NOUNS")]
    nouns: Option<String>,
    /// Words never treated as subjects, one per line.
    #[arg(long, env = "ALFIE_EXCLUSION_FILE")]
    exclusion_file: Option<PathBuf>,
    #[arg(long, env = "ALFIE_ITERATIONS")]
    iterations: Option<usize>,
    #[arg(long, env = "ALFIE_COMPONENTS")]
    components: Option<usize>,
    #[arg(long, env = "ALFIE_GAMMA")]
    gamma: Option<f64>,
    #[arg(long, env = "ALFIE_THRESHOLD_MODE", value_enum)]
    threshold_mode: Option<Mode>,
    /// Also write the intermediate maps next to the output.
    #[arg(long, env = "ALFIE_DUMP_DEBUG")]
    dump_debug: bool,
    #[arg(long, env = "ALFIE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, env = "ALFIE_PROMPT")]
    prompt: Option<String>,
    #[arg(long, env = "ALFIE_BG_PROMPT")]
    bg_prompt: Option<String>,
    #[arg(long, env = "ALFIE_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "ALFIE_STEPS")]
    steps: Option<usize>,
    #[arg(long, env = "ALFIE_GUIDANCE")]
    guidance: Option<f64>,
    /// Width of the background-only frame in output pixels.
    #[arg(long, env = "ALFIE_BORDER_PX")]
    border_px: Option<usize>,
    /// Number of final steps whose attention is kept.
    #[arg(long, env = "ALFIE_KEEP_LAST")]
    keep_last: Option<usize>,
    #[arg(long, env = "ALFIE_BACKEND", value_enum)]
    backend: Option<Backend>,
    /// Recorded trace directory (trace backend).
    #[arg(long, env = "ALFIE_TRACE_DIR")]
    trace_dir: Option<PathBuf>,
    /// Output size, `N` or `HxW`.
    #[arg(long, env = "ALFIE_SIZE")]
    size: Option<String>,
    /// Also write the toy run's attention trace to this directory.
    #[arg(long)]
    save_trace: Option<PathBuf>,
    #[command(flatten)]
    matte: MatteArgs,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long, env = "ALFIE_TRACE_DIR")]
    trace_dir: Option<PathBuf>,
    /// GrabCut k-means seed.
    #[arg(long, env = "ALFIE_SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    matte: MatteArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of PNG files and/or trace directories.
    dir: PathBuf,
    #[arg(long, env = "ALFIE_MARGIN")]
    margin: Option<usize>,
    #[arg(long, env = "ALFIE_THRESHOLD")]
    threshold: Option<f32>,
    /// Value range of trace RGB tensors.
    #[arg(
        long,
        env = "ALFIE_PIXEL_SCALE",
        value_enum,
        allow_hyphen_values = true
    )]
    pixel_scale: Option<Scale>,
    /// Newline-separated external CLIP scores, one per image in file-name order.
    #[arg(long, env = "ALFIE_CLIP_SCORES")]
    clip_scores: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long, env = "ALFIE_JSON")]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompositeArgs {
    /// RGBA foreground PNG.
    #[arg(long)]
    fg: PathBuf,
    /// Background PNG of the same size.
    #[arg(long)]
    bg: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Flag combination the parser cannot express.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn parse_size(s: &str) -> anyhow::Result<(usize, usize)> {
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    let size = match s.split_once(['x', 'X']) {
        Some((h, w)) => parse(h).zip(parse(w)),
        None => parse(s).map(|n| (n, n)),
    };
    size.ok_or_else(|| usage(format!("invalid --size {s:?}; expected N or HxW")))
}

fn parse_mode(s: &str) -> anyhow::Result<Mode> {
    Mode::from_str(s, true).map_err(|_| usage(format!("invalid threshold-mode {s:?}")))
}

fn matting_options(
    args: &MatteArgs,
    cfg: &ConfigFile,
    seed: u64,
) -> anyhow::Result<MattingOptions> {
    let exclusions = match args.exclusion_file.as_ref().or(cfg.exclusion_file.as_ref()) {
        Some(path) => load_exclusions(path)?,
        None => default_exclusions(),
    };
    let mode = match (args.threshold_mode, cfg.threshold_mode.as_deref()) {
        (Some(m), _) => m,
        (None, Some(s)) => parse_mode(s)?,
        (None, None) => Mode::Quantile,
    };
    let defaults = GrabCutParams::default();
    Ok(MattingOptions {
        exclusions,
        nouns: args
            .nouns
            .as_deref()
            .or(cfg.nouns.as_deref())
            .map(parse_noun_list),
        opacity_k: args.k.or(cfg.k).unwrap_or(DEFAULT_OPACITY_K),
        levels: Default::default(),
        threshold_mode: match mode {
            Mode::Quantile => ThresholdMode::Quantile,
            Mode::Absolute => ThresholdMode::Absolute,
        },
        grabcut: GrabCutParams {
            iterations: args
                .iterations
                .or(cfg.iterations)
                .unwrap_or(defaults.iterations),
            components: args
                .components
                .or(cfg.components)
                .unwrap_or(defaults.components),
            gamma: args.gamma.or(cfg.gamma).unwrap_or(defaults.gamma),
            seed,
        },
    })
}

fn output_path(args: &MatteArgs, cfg: &ConfigFile) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out.png"))
}

fn write_result(matte: &MattingResult, out: &Path, dump_debug: bool) -> anyhow::Result<()> {
    write_png(&matte.rgba, out)?;
    if dump_debug {
        let dir = out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        matte.write_debug(dir, stem)?;
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

fn matte_trace(dir: &Path, args: &MatteArgs, cfg: &ConfigFile, seed: u64) -> anyhow::Result<()> {
    let (trace, rgb) = read_trace(dir)?;
    let opts = matting_options(args, cfg, seed)?;
    let matte = extract_alpha(&trace, &rgb, &opts)?;
    write_result(
        &matte,
        &output_path(args, cfg),
        args.dump_debug || cfg.dump_debug.unwrap_or(false),
    )
}

fn cmd_generate(args: &GenerateArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let backend = match (args.backend, cfg.backend.as_deref()) {
        (Some(b), _) => b,
        (None, Some(s)) => {
            Backend::from_str(s, true).map_err(|_| usage(format!("invalid backend {s:?}")))?
        }
        (None, None) => Backend::Toy,
    };
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    if backend == Backend::Trace {
        let dir = args
            .trace_dir
            .as_ref()
            .or(cfg.trace_dir.as_ref())
            .ok_or_else(|| usage("--backend trace requires --trace-dir"))?;
        return matte_trace(dir, &args.matte, cfg, seed);
    }

    let prompt = args
        .prompt
        .clone()
        .or_else(|| cfg.prompt.clone())
        .ok_or_else(|| usage("--prompt is required"))?;
    let size = match args.size.as_deref().or(cfg.size.as_deref()) {
        Some(s) => parse_size(s)?,
        None => (DEFAULT_SIZE, DEFAULT_SIZE),
    };
    let req = GenerationRequest {
        prompt,
        bg_prompt: args
            .bg_prompt
            .clone()
            .or_else(|| cfg.bg_prompt.clone())
            .unwrap_or_else(|| DEFAULT_BG_PROMPT.to_string()),
        seed,
        steps: args.steps.or(cfg.steps).unwrap_or(DEFAULT_STEPS),
        guidance: GuidanceScale::new(
            args.guidance
                .or(cfg.guidance)
                .unwrap_or(GuidanceScale::default().value()),
        )?,
        out_size: size,
        border_px: args
            .border_px
            .or(cfg.border_px)
            .unwrap_or(DEFAULT_BORDER_PX),
        keep_last_maps: args
            .keep_last
            .or(cfg.keep_last)
            .unwrap_or(DEFAULT_KEEP_LAST_MAPS),
    };
    let opts = matting_options(&args.matte, cfg, seed)?;
    let model = ToyModel::new(Default::default())?;
    let (out, matte) = generate_rgba(&model, &req, &opts)?;
    if let Some(dir) = &args.save_trace {
        write_trace(&out.trace, &out.rgb, dir)?;
    }
    write_result(
        &matte,
        &output_path(&args.matte, cfg),
        args.matte.dump_debug || cfg.dump_debug.unwrap_or(false),
    )
}

fn cmd_extract_alpha(args: &ExtractArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let dir = args
        .trace_dir
        .as_ref()
        .or(cfg.trace_dir.as_ref())
        .ok_or_else(|| usage("--trace-dir is required"))?;
    matte_trace(dir, &args.matte, cfg, args.seed.or(cfg.seed).unwrap_or(0))
}

fn load_eval_image(path: &Path, scale: PixelScale) -> anyhow::Result<RgbImage> {
    if path.is_dir() {
        let (_, rgb) = read_trace(path)?;
        let data = rgb.data().iter().map(|&v| scale.to_signed(v)).collect();
        Ok(RgbImage::new(rgb.height(), rgb.width(), data)?)
    } else {
        Ok(read_png(path)?.rgb())
    }
}

fn cmd_eval(args: &EvalArgs, cfg: &ConfigFile) -> anyhow::Result<()> {
    let margin = args
        .margin
        .or(cfg.margin)
        .unwrap_or(illumatte::eval::DEFAULT_MARGIN);
    let threshold = args
        .threshold
        .or(cfg.threshold)
        .unwrap_or(illumatte::eval::DEFAULT_THRESHOLD);
    let scale = match (args.pixel_scale, cfg.pixel_scale.as_deref()) {
        (Some(s), _) => s,
        (None, Some(s)) => {
            Scale::from_str(s, true).map_err(|_| usage(format!("invalid pixel-scale {s:?}")))?
        }
        (None, None) => Scale::Signed,
    };
    let scale = match scale {
        Scale::Signed => PixelScale::SignedUnit,
        Scale::Unit => PixelScale::Unit,
    };
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&args.dir)
        .map_err(|e| illumatte::Error::io(&args.dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
                || p.join(MANIFEST_FILE).is_file()
        })
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(illumatte::Error::InvalidArgument(format!(
            "no images found in {}",
            args.dir.display()
        ))
        .into());
    }
    let flags: Vec<BorderFlags> = inputs
        .par_iter()
        .map(|p| {
            let rgb = load_eval_image(p, scale).with_context(|| p.display().to_string())?;
            Ok(empty_border_flags(&rgb, margin, threshold)?)
        })
        .collect::<anyhow::Result<_>>()?;
    let mut report = batch_report(&flags)?;
    if let Some(path) = args.clip_scores.as_ref().or(cfg.clip_scores.as_ref()) {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        report = report.with_clip_scores(&parse_clip_scores(&text)?)?;
    }
    print!("{}", report.render_text());
    if let Some(path) = args.json.as_ref().or(cfg.json.as_ref()) {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn cmd_composite(args: &CompositeArgs) -> anyhow::Result<()> {
    let fg = read_png(&args.fg)?;
    let bg = read_png(&args.bg)?.rgb();
    write_rgb_png(&composite_over(&fg, &bg)?, &args.out)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path).map_err(usage)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, &cfg),
        Command::ExtractAlpha(a) => cmd_extract_alpha(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Composite(a) => cmd_composite(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else if let Some(e) = err.downcast_ref::<illumatte::Error>() {
        if e.is_input_error() {
            EXIT_INPUT
        } else {
            EXIT_INTERNAL
        }
    } else {
        EXIT_INTERNAL
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
