//! Empty-border metric and batch reporting.
//!
//! A border counts as empty when every pixel in its `margin`-wide strip has
//! all three channels above `threshold` on the `[-1, 1]` scale.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::RgbImage;

pub const DEFAULT_MARGIN: usize = 4;
pub const DEFAULT_THRESHOLD: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BorderFlags {
    pub left: bool,
    pub right: bool,
    pub top: bool,
    pub bottom: bool,
    pub all: bool,
}

impl BorderFlags {
    /// Flags of the horizontally mirrored image.
    pub fn swap_left_right(self) -> Self {
        Self {
            left: self.right,
            right: self.left,
            ..self
        }
    }

    /// Flags of the vertically mirrored image.
    pub fn swap_top_bottom(self) -> Self {
        Self {
            top: self.bottom,
            bottom: self.top,
            ..self
        }
    }
}

/// Value range of incoming pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelScale {
    #[default]
    SignedUnit,
    Unit,
}

impl PixelScale {
    /// Maps a value on this scale to `[-1, 1]`.
    pub fn to_signed(self, v: f32) -> f32 {
        match self {
            PixelScale::SignedUnit => v,
            PixelScale::Unit => v * 2.0 - 1.0,
        }
    }
}

pub fn empty_border_flags(rgb: &RgbImage, margin: usize, threshold: f32) -> Result<BorderFlags> {
    let (h, w) = rgb.dims();
    if margin == 0 || 2 * margin >= h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "margin {margin} must be positive and below half of {h}x{w}"
        )));
    }
    let bright = |y: usize, x: usize| rgb.pixel(y, x).iter().all(|&c| c > threshold);
    let strip = |ys: std::ops::Range<usize>, xs: std::ops::Range<usize>| {
        ys.into_iter().all(|y| xs.clone().all(|x| bright(y, x)))
    };
    let left = strip(0..h, 0..margin);
    let right = strip(0..h, w - margin..w);
    let top = strip(0..margin, 0..w);
    let bottom = strip(h - margin..h, 0..w);
    Ok(BorderFlags {
        left,
        right,
        top,
        bottom,
        all: left && right && top && bottom,
    })
}

/// Percentages of images with each border empty, plus an optional external CLIP score mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub images: usize,
    pub empty_l: f64,
    pub empty_r: f64,
    pub empty_t: f64,
    pub empty_b: f64,
    pub empty_a: f64,
    pub clip_s: Option<f64>,
}

pub fn batch_report(flags: &[BorderFlags]) -> Result<Report> {
    if flags.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot report on an empty batch".into(),
        ));
    }
    let n = flags.len() as f64;
    let pct =
        |f: fn(&BorderFlags) -> bool| 100.0 * flags.iter().filter(|b| f(b)).count() as f64 / n;
    Ok(Report {
        images: flags.len(),
        empty_l: pct(|b| b.left),
        empty_r: pct(|b| b.right),
        empty_t: pct(|b| b.top),
        empty_b: pct(|b| b.bottom),
        empty_a: pct(|b| b.all),
        clip_s: None,
    })
}

/// Parses newline-separated scores; blank lines are skipped.
pub fn parse_clip_scores(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad CLIP score {l:?}")))
        })
        .collect()
}

impl Report {
    /// Attaches the mean of one externally computed score per image.
    pub fn with_clip_scores(mut self, scores: &[f64]) -> Result<Self> {
        if scores.len() != self.images {
            return Err(Error::shape(self.images, scores.len()));
        }
        self.clip_s = Some(scores.iter().sum::<f64>() / scores.len() as f64);
        Ok(self)
    }

    /// Aligned two-line table, two decimals per column.
    pub fn render_text(&self) -> String {
        let mut header = format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8}",
            "empty-l", "empty-r", "empty-t", "empty-b", "empty-a"
        );
        let mut row = format!(
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            self.empty_l, self.empty_r, self.empty_t, self.empty_b, self.empty_a
        );
        if let Some(c) = self.clip_s {
            header.push_str(&format!(" {:>8}", "CLIP-S"));
            row.push_str(&format!(" {c:>8.2}"));
        }
        format!("{header}\n{row}\n")
    }
}
