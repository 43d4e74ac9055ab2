//! On-disk attention traces: a TOML manifest plus raw tensor files.
//!
//! A trace directory holds `manifest.toml` and one file per tensor. Tensor
//! files are headerless little-endian IEEE-754 `f32`, row-major, with the
//! shape declared in the manifest:
//!
//! | name    | shape                                   |
//! |---------|-----------------------------------------|
//! | `cross` | `[steps, layers, heads, gh, gw, tokens]` |
//! | `self`  | `[steps, layers, heads, gh*gw, gh, gw]`, or `[gh*gw, gh, gw]` when `preaveraged = true` |
//! | `rgb`   | `[h, w, 3]`, values in `[-1, 1]`         |
//!
//! Reading is fail-closed: every declared shape must multiply out to the
//! file's byte length, and non-finite values are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionTrace, SelfAttention};
use crate::error::{Error, Result};
use crate::imaging::RgbImage;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub format_version: u32,
    pub prompt: String,
    pub bg_prompt: String,
    pub token_strings: Vec<String>,
    pub token_grid: [usize; 2],
    pub image_size: [usize; 2],
    pub steps_recorded: Vec<usize>,
    pub layers: usize,
    pub heads: usize,
    pub sigma_schedule: Vec<f64>,
    #[serde(default)]
    pub preaveraged: bool,
    pub tensor_files: Vec<TensorFile>,
}

impl TraceManifest {
    pub fn tensor(&self, name: &str) -> Result<&TensorFile> {
        self.tensor_files
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::TraceTensor {
                name: name.into(),
                reason: "not listed in the manifest".into(),
            })
    }
}

fn expected_shapes(
    trace: &AttentionTrace,
    image_size: (usize, usize),
) -> [(&'static str, Vec<usize>); 3] {
    let (gh, gw) = trace.token_grid;
    let (t, l, h) = (trace.steps_recorded.len(), trace.layers, trace.heads);
    let self_shape = if trace.is_preaveraged() {
        vec![gh * gw, gh, gw]
    } else {
        vec![t, l, h, gh * gw, gh, gw]
    };
    [
        ("cross", vec![t, l, h, gh, gw, trace.num_prompt_tokens()]),
        ("self", self_shape),
        ("rgb", vec![image_size.0, image_size.1, 3]),
    ]
}

fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_trace(trace: &AttentionTrace, rgb: &RgbImage, dir: impl AsRef<Path>) -> Result<()> {
    trace.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let self_values = match &trace.self_attn {
        SelfAttention::PerRecord(d) | SelfAttention::Preaveraged(d) => d,
    };
    let payloads: [&[f32]; 3] = [&trace.cross, self_values, rgb.data()];
    let mut tensor_files = Vec::new();
    for ((name, shape), values) in expected_shapes(trace, rgb.dims()).into_iter().zip(payloads) {
        let file = format!("{name}.f32");
        write_f32(&dir.join(&file), values)?;
        tensor_files.push(TensorFile {
            name: name.into(),
            dtype: DTYPE_F32LE.into(),
            shape,
            path: file,
        });
    }
    let manifest = TraceManifest {
        format_version: FORMAT_VERSION,
        prompt: trace.prompt.clone(),
        bg_prompt: trace.bg_prompt.clone(),
        token_strings: trace.token_strings.clone(),
        token_grid: [trace.token_grid.0, trace.token_grid.1],
        image_size: [rgb.height(), rgb.width()],
        steps_recorded: trace.steps_recorded.clone(),
        layers: trace.layers,
        heads: trace.heads,
        sigma_schedule: trace.sigma_schedule.clone(),
        preaveraged: trace.is_preaveraged(),
        tensor_files,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::TraceFormat(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<TraceManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: TraceManifest = toml::from_str(&text)
        .map_err(|e| Error::TraceFormat(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::TraceFormat(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.sigma_schedule.iter().any(|s| !s.is_finite()) {
        return Err(Error::TraceFormat(
            "sigma_schedule contains a non-finite value".into(),
        ));
    }
    Ok(manifest)
}

fn read_tensor(
    dir: &Path,
    manifest: &TraceManifest,
    name: &str,
    expected: &[usize],
) -> Result<Vec<f32>> {
    let entry = manifest.tensor(name)?;
    let bad = |reason: String| Error::TraceTensor {
        name: name.into(),
        reason,
    };
    if entry.dtype != DTYPE_F32LE {
        return Err(bad(format!(
            "dtype {:?} is not {DTYPE_F32LE:?}",
            entry.dtype
        )));
    }
    if entry.shape != expected {
        return Err(bad(format!(
            "shape {:?} disagrees with manifest fields {expected:?}",
            entry.shape
        )));
    }
    let path: PathBuf = dir.join(&entry.path);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => bad(format!("file {} is missing", path.display())),
        _ => Error::io(&path, e),
    })?;
    let count: usize = entry.shape.iter().product();
    if bytes.len() != count * 4 {
        return Err(bad(format!(
            "shape {:?} needs {} bytes, file has {}",
            entry.shape,
            count * 4,
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(bad(format!("non-finite value at flat index {i}")));
    }
    Ok(values)
}

pub fn read_trace(dir: impl AsRef<Path>) -> Result<(AttentionTrace, RgbImage)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let mut trace = AttentionTrace {
        prompt: m.prompt.clone(),
        bg_prompt: m.bg_prompt.clone(),
        token_strings: m.token_strings.clone(),
        token_grid: (m.token_grid[0], m.token_grid[1]),
        sigma_schedule: m.sigma_schedule.clone(),
        steps_recorded: m.steps_recorded.clone(),
        layers: m.layers,
        heads: m.heads,
        cross: Vec::new(),
        self_attn: if m.preaveraged {
            SelfAttention::Preaveraged(Vec::new())
        } else {
            SelfAttention::PerRecord(Vec::new())
        },
    };
    let image_size = (m.image_size[0], m.image_size[1]);
    let [(_, cross_shape), (_, self_shape), (_, rgb_shape)] = expected_shapes(&trace, image_size);
    trace.cross = read_tensor(dir, &m, "cross", &cross_shape)?;
    let self_values = read_tensor(dir, &m, "self", &self_shape)?;
    trace.self_attn = if m.preaveraged {
        SelfAttention::Preaveraged(self_values)
    } else {
        SelfAttention::PerRecord(self_values)
    };
    let rgb_values = read_tensor(dir, &m, "rgb", &rgb_shape)?;
    trace.validate()?;
    let rgb =
        RgbImage::new(image_size.0, image_size.1, rgb_values).map_err(|e| Error::TraceTensor {
            name: "rgb".into(),
            reason: e.to_string(),
        })?;
    Ok((trace, rgb))
}
