//! Optional TOML config mirroring the command-line flags.
//!
//! Keys are the long flag names without dashes prefix, e.g. `bg-prompt = "..."`.
//! Flags and `ALFIE_*` variables win over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigFile {
    pub prompt: Option<String>,
    pub bg_prompt: Option<String>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub guidance: Option<f64>,
    pub border_px: Option<usize>,
    pub keep_last: Option<usize>,
    pub k: Option<f32>,
    pub nouns: Option<String>,
    pub exclusion_file: Option<PathBuf>,
    pub backend: Option<String>,
    pub trace_dir: Option<PathBuf>,
    pub size: Option<String>,
    pub out: Option<PathBuf>,
    pub dump_debug: Option<bool>,
    pub iterations: Option<usize>,
    pub components: Option<usize>,
    pub gamma: Option<f64>,
    pub threshold_mode: Option<String>,
    pub margin: Option<usize>,
    pub threshold: Option<f32>,
    pub pixel_scale: Option<String>,
    pub clip_scores: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}
