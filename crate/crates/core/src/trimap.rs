//! Four-level GrabCut seed map from the foreground cross-attention map.

use std::path::Path;

use crate::attention::ForegroundCrossMap;
use crate::error::{Error, Result};
use crate::imaging::write_gray;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum TrimapLabel {
    SureBg = 0,
    ProbBg = 1,
    ProbFg = 2,
    SureFg = 3,
}

impl TrimapLabel {
    pub fn is_foreground(self) -> bool {
        matches!(self, TrimapLabel::ProbFg | TrimapLabel::SureFg)
    }

    pub fn is_sure(self) -> bool {
        matches!(self, TrimapLabel::SureFg | TrimapLabel::SureBg)
    }

    /// Debug colour: black, light gray, white, dark gray.
    pub fn gray_level(self) -> u8 {
        match self {
            TrimapLabel::SureBg => 0,
            TrimapLabel::ProbBg => 192,
            TrimapLabel::ProbFg => 255,
            TrimapLabel::SureFg => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trimap4 {
    height: usize,
    width: usize,
    labels: Vec<TrimapLabel>,
}

impl Trimap4 {
    pub fn new(height: usize, width: usize, labels: Vec<TrimapLabel>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::shape(height * width, labels.len()));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> TrimapLabel) -> Self {
        let labels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> TrimapLabel {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: TrimapLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.labels.iter().map(|l| l.gray_level()).collect();
        write_gray(self.width, self.height, bytes, path.as_ref())
    }
}

/// Quantile levels for the three thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimapLevels {
    pub sure_fg: f32,
    pub prob_fg: f32,
    pub prob_bg: f32,
}

impl Default for TrimapLevels {
    fn default() -> Self {
        Self {
            sure_fg: 0.8,
            prob_fg: 0.3,
            prob_bg: 0.1,
        }
    }
}

/// How the levels become thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Empirical quantiles of the map's own values.
    #[default]
    Quantile,
    /// The levels themselves, applied to the normalised values.
    Absolute,
}

/// Nearest-rank quantile: the sorted value at index `floor(q * n)`, clamped to the last element.
pub fn nearest_rank_quantile(sorted: &[f32], q: f32) -> f32 {
    let n = sorted.len();
    let idx = ((q as f64 * n as f64) + 1e-9).floor() as usize;
    sorted[idx.min(n - 1)]
}

pub fn quantize_trimap(
    fg: &ForegroundCrossMap,
    levels: TrimapLevels,
    mode: ThresholdMode,
) -> Result<Trimap4> {
    let TrimapLevels {
        sure_fg,
        prob_fg,
        prob_bg,
    } = levels;
    if !(0.0 <= prob_bg && prob_bg < prob_fg && prob_fg < sure_fg && sure_fg <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "trimap levels must satisfy 0 <= {prob_bg} < {prob_fg} < {sure_fg} <= 1"
        )));
    }
    let map = fg.as_map();
    let (h, w) = map.dims();
    let (lo, hi) = map.min_max();
    if lo == hi {
        log::warn!("foreground map is constant at {lo}; trimap is all sure background");
        return Trimap4::new(h, w, vec![TrimapLabel::SureBg; h * w]);
    }
    let (t_sure_fg, t_prob_fg, t_prob_bg) = match mode {
        ThresholdMode::Quantile => {
            let mut sorted = map.data().to_vec();
            sorted.sort_by(f32::total_cmp);
            // Ties at the minimum carry no foreground evidence; thresholds that
            // land on it move up to the next distinct value.
            let above_min = sorted[sorted.partition_point(|&v| v <= lo)];
            let t = |q| {
                let v = nearest_rank_quantile(&sorted, q);
                if v <= lo {
                    above_min
                } else {
                    v
                }
            };
            (t(sure_fg), t(prob_fg), t(prob_bg))
        }
        ThresholdMode::Absolute => (sure_fg, prob_fg, prob_bg),
    };
    let labels = map
        .data()
        .iter()
        .map(|&v| {
            if v >= t_sure_fg {
                TrimapLabel::SureFg
            } else if v >= t_prob_fg {
                TrimapLabel::ProbFg
            } else if v >= t_prob_bg {
                TrimapLabel::ProbBg
            } else {
                TrimapLabel::SureBg
            }
        })
        .collect();
    Trimap4::new(h, w, labels)
}
