//! Attention aggregation and the coarse alpha estimate.
//!
//! Recorded maps are averaged over timesteps, layers and heads. The
//! foreground cross-attention map is the noun-averaged, upsampled and min-max
//! normalised cross map; self-attention rows are then fused with those
//! activations as weights, and the coarse alpha is the normalised sum of the
//! two.

use crate::error::{Error, Result};
use crate::imaging::{bilinear_resize, ScalarMap};
use crate::prompt::NounSpans;

/// Self-attention payload of a trace.
#[derive(Debug, Clone, PartialEq)]
pub enum SelfAttention {
    /// One `tokens x tokens` map per (timestep, layer, head), same order as the cross maps.
    PerRecord(Vec<f32>),
    /// A single `tokens x tokens` map, already averaged over all records.
    Preaveraged(Vec<f32>),
}

/// Subject-branch attention recorded over the tail of a sampling run.
///
/// Record `(s, l, h)` lives at flat index `(s * layers + l) * heads + h`,
/// where `s` indexes `steps_recorded`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub prompt: String,
    pub bg_prompt: String,
    pub token_strings: Vec<String>,
    pub token_grid: (usize, usize),
    pub sigma_schedule: Vec<f64>,
    /// Positions in the sampling chain (0-based) whose maps were kept.
    pub steps_recorded: Vec<usize>,
    pub layers: usize,
    pub heads: usize,
    /// `records x tokens x N`.
    pub cross: Vec<f32>,
    pub self_attn: SelfAttention,
}

impl AttentionTrace {
    pub fn num_tokens(&self) -> usize {
        self.token_grid.0 * self.token_grid.1
    }

    pub fn num_prompt_tokens(&self) -> usize {
        self.token_strings.len()
    }

    pub fn num_records(&self) -> usize {
        self.steps_recorded.len() * self.layers * self.heads
    }

    pub fn record_index(&self, step: usize, layer: usize, head: usize) -> usize {
        (step * self.layers + layer) * self.heads + head
    }

    pub fn cross_record(&self, step: usize, layer: usize, head: usize) -> &[f32] {
        let len = self.num_tokens() * self.num_prompt_tokens();
        let i = self.record_index(step, layer, head);
        &self.cross[i * len..(i + 1) * len]
    }

    /// Per-record self map, `None` for preaveraged traces.
    pub fn self_record(&self, step: usize, layer: usize, head: usize) -> Option<&[f32]> {
        match &self.self_attn {
            SelfAttention::PerRecord(data) => {
                let len = self.num_tokens() * self.num_tokens();
                let i = self.record_index(step, layer, head);
                Some(&data[i * len..(i + 1) * len])
            }
            SelfAttention::Preaveraged(_) => None,
        }
    }

    pub fn is_preaveraged(&self) -> bool {
        matches!(self.self_attn, SelfAttention::Preaveraged(_))
    }

    /// Checks buffer lengths and that the recorded steps form a contiguous suffix.
    pub fn validate(&self) -> Result<()> {
        let p = self.num_tokens();
        let n = self.num_prompt_tokens();
        if p == 0 || n == 0 {
            return Err(Error::TraceFormat(
                "token grid and prompt tokens must be non-empty".into(),
            ));
        }
        let records = self.num_records();
        if self.cross.len() != records * p * n {
            return Err(Error::TraceTensor {
                name: "cross".into(),
                reason: format!(
                    "expected {} values, found {}",
                    records * p * n,
                    self.cross.len()
                ),
            });
        }
        let (name, expected, found) = match &self.self_attn {
            SelfAttention::PerRecord(d) => ("self", records * p * p, d.len()),
            SelfAttention::Preaveraged(d) => ("self", p * p, d.len()),
        };
        if expected != found {
            return Err(Error::TraceTensor {
                name: name.into(),
                reason: format!("expected {expected} values, found {found}"),
            });
        }
        if self.steps_recorded.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::TraceFormat(
                "recorded steps are not contiguous".into(),
            ));
        }
        if let Some(&last) = self.steps_recorded.last() {
            let chain = self.sigma_schedule.len().saturating_sub(1);
            if chain > 0 && last + 1 != chain {
                return Err(Error::TraceFormat(format!(
                    "recorded steps end at {last}, not at the final step {} of the chain",
                    chain - 1
                )));
            }
        }
        Ok(())
    }
}

/// Record-averaged maps: `cross` is `tokens x N`, `self_` is `tokens x tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMaps {
    pub token_grid: (usize, usize),
    pub token_strings: Vec<String>,
    pub cross: Vec<f32>,
    pub self_: Vec<f32>,
}

impl GlobalMaps {
    pub fn num_tokens(&self) -> usize {
        self.token_grid.0 * self.token_grid.1
    }

    /// Averaged cross map of one prompt token as a token-grid image.
    pub fn cross_channel(&self, column: usize) -> ScalarMap {
        let n = self.token_strings.len();
        let (gh, gw) = self.token_grid;
        ScalarMap::from_fn(gh, gw, |y, x| self.cross[(y * gw + x) * n + column])
    }

    /// Self-attention of source token `p` over the token grid.
    pub fn self_map(&self, p: usize) -> ScalarMap {
        let (gh, gw) = self.token_grid;
        let len = gh * gw;
        ScalarMap::new(gh, gw, self.self_[p * len..(p + 1) * len].to_vec())
            .expect("self map has grid size")
    }
}

/// Arithmetic mean over every (timestep, layer, head) record.
pub fn aggregate(trace: &AttentionTrace) -> Result<GlobalMaps> {
    trace.validate()?;
    let records = trace.num_records();
    if records == 0 {
        return Err(Error::EmptyTrace);
    }
    let cross = mean_of_chunks(&trace.cross, records);
    let self_ = match &trace.self_attn {
        SelfAttention::PerRecord(d) => mean_of_chunks(d, records),
        SelfAttention::Preaveraged(d) => d.clone(),
    };
    Ok(GlobalMaps {
        token_grid: trace.token_grid,
        token_strings: trace.token_strings.clone(),
        cross,
        self_,
    })
}

fn mean_of_chunks(data: &[f32], chunks: usize) -> Vec<f32> {
    let len = data.len() / chunks;
    let mut acc = vec![0f64; len];
    for chunk in data.chunks_exact(len) {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a += v as f64;
        }
    }
    acc.into_iter()
        .map(|v| (v / chunks as f64) as f32)
        .collect()
}

/// Transparency-like map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap(ScalarMap);

impl AlphaMap {
    pub fn new(map: ScalarMap) -> Result<Self> {
        if let Some(v) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "alpha value {v} outside [0, 1]"
            )));
        }
        Ok(Self(map))
    }

    pub fn as_map(&self) -> &ScalarMap {
        &self.0
    }

    pub fn into_map(self) -> ScalarMap {
        self.0
    }
}

/// Noun-averaged cross attention at pixel resolution, min-max normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundCrossMap(ScalarMap);

impl ForegroundCrossMap {
    /// Wraps an already normalised map, renormalising to guarantee the invariant.
    pub fn from_map(map: ScalarMap) -> Self {
        Self(map.minmax_normalized())
    }

    pub fn as_map(&self) -> &ScalarMap {
        &self.0
    }

    pub fn into_map(self) -> ScalarMap {
        self.0
    }
}

pub fn foreground_cross_map(
    maps: &GlobalMaps,
    nouns: &NounSpans,
    out_h: usize,
    out_w: usize,
) -> Result<ForegroundCrossMap> {
    if nouns.is_empty() {
        return Err(Error::NoNouns {
            prompt: nouns.source_prompt.clone(),
        });
    }
    let columns = nouns.resolve_columns(&maps.token_strings)?;
    let (gh, gw) = maps.token_grid;
    let n = maps.token_strings.len();
    let mut acc = vec![0f64; gh * gw];
    for cols in &columns {
        for (p, a) in acc.iter_mut().enumerate() {
            let noun_mean = cols
                .iter()
                .map(|&c| maps.cross[p * n + c] as f64)
                .sum::<f64>()
                / cols.len() as f64;
            *a += noun_mean;
        }
    }
    let grid = ScalarMap::new(
        gh,
        gw,
        acc.iter()
            .map(|&v| (v / columns.len() as f64) as f32)
            .collect(),
    )?;
    Ok(ForegroundCrossMap(
        bilinear_resize(&grid, out_h, out_w)?.minmax_normalized(),
    ))
}

/// Foreground-weighted average of self-attention maps, upsampled to the
/// foreground map's resolution and min-max normalised.
pub fn fuse_self_attention(maps: &GlobalMaps, fg: &ForegroundCrossMap) -> Result<AlphaMap> {
    let (gh, gw) = maps.token_grid;
    let weights = bilinear_resize(fg.as_map(), gh, gw)?;
    let p = gh * gw;
    let total: f64 = weights.data().iter().map(|&w| w as f64).sum();
    if !(total > 0.0) {
        return Err(Error::NoForegroundEvidence);
    }
    let mut acc = vec![0f64; p];
    for (src, &w) in weights.data().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = &maps.self_[src * p..(src + 1) * p];
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += w as f64 * v as f64;
        }
    }
    let grid = ScalarMap::new(gh, gw, acc.iter().map(|&v| (v / total) as f32).collect())?;
    let (h, w) = fg.as_map().dims();
    AlphaMap::new(bilinear_resize(&grid, h, w)?.minmax_normalized())
}

/// Coarse alpha: min-max normalised `fg + ff`.
pub fn estimate_alpha(fg: &ForegroundCrossMap, ff: &AlphaMap) -> Result<AlphaMap> {
    AlphaMap::new(
        fg.as_map()
            .zip_map(ff.as_map(), |a, b| a + b)?
            .minmax_normalized(),
    )
}

/// `min(1, (1 + k) * alpha)`.
pub fn adjust_opacity(alpha: &AlphaMap, k: f32) -> Result<AlphaMap> {
    if !(k >= -1.0) || !k.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "opacity k must be >= -1, got {k}"
        )));
    }
    let mut map = alpha.as_map().clone();
    for v in map.data_mut() {
        *v = ((1.0 + k) * *v).min(1.0);
    }
    Ok(AlphaMap(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{extract_nouns, NounSpan};

    fn trace_with(
        cross: Vec<f32>,
        self_: Vec<f32>,
        grid: (usize, usize),
        tokens: &[&str],
        steps: usize,
    ) -> AttentionTrace {
        AttentionTrace {
            prompt: tokens.join(" "),
            bg_prompt: String::new(),
            token_strings: tokens.iter().map(|s| s.to_string()).collect(),
            token_grid: grid,
            sigma_schedule: vec![],
            steps_recorded: (0..steps).collect(),
            layers: 1,
            heads: 1,
            cross,
            self_attn: SelfAttention::PerRecord(self_),
        }
    }

    fn spans(prompt: &str, nouns: &[&str]) -> NounSpans {
        let owned: Vec<String> = nouns.iter().map(|s| s.to_string()).collect();
        extract_nouns(prompt, &[], Some(&owned)).unwrap()
    }

    #[test]
    fn mean_of_one_and_symmetric_pair() {
        let single = trace_with(vec![0.2, 0.8], vec![0.3, 0.7, 0.6, 0.4], (1, 2), &["x"], 1);
        let g = aggregate(&single).unwrap();
        assert_eq!(g.cross, vec![0.2, 0.8]);
        assert_eq!(g.self_, vec![0.3, 0.7, 0.6, 0.4]);

        let v = [0.1f32, 0.9, 0.25, 0.75];
        let mirrored: Vec<f32> = v.iter().map(|x| 1.0 - x).collect();
        let self_a: Vec<f32> = v.repeat(4);
        let self_b: Vec<f32> = mirrored.repeat(4);
        let pair = trace_with(
            [v.to_vec(), mirrored].concat(),
            [self_a, self_b].concat(),
            (2, 2),
            &["x"],
            2,
        );
        let g = aggregate(&pair).unwrap();
        assert!(g
            .cross
            .iter()
            .chain(&g.self_)
            .all(|&x| (x - 0.5).abs() < 1e-7));
    }

    #[test]
    fn empty_trace_rejected() {
        let t = trace_with(vec![], vec![], (1, 1), &["x"], 0);
        assert!(matches!(aggregate(&t), Err(Error::EmptyTrace)));
    }

    #[test]
    fn constant_noun_map_normalises_to_zero() {
        let g = GlobalMaps {
            token_grid: (2, 2),
            token_strings: vec!["dog".into()],
            cross: vec![0.5; 4],
            self_: vec![0.25; 16],
        };
        let fg = foreground_cross_map(&g, &spans("dog", &["dog"]), 4, 4).unwrap();
        assert!(fg.as_map().data().iter().all(|&v| v == 0.0));
        // ...and carries no weight for fusion.
        assert!(matches!(
            fuse_self_attention(&g, &fg),
            Err(Error::NoForegroundEvidence)
        ));
    }

    #[test]
    fn two_disjoint_nouns() {
        // 4x4 grid, tokens [a, cat, and, dog]; cat hot at (0,0), dog hot at (3,3).
        let n = 4;
        let mut cross = vec![0.0f32; 16 * n];
        cross[1] = 1.0;
        cross[15 * n + 3] = 1.0;
        let g = GlobalMaps {
            token_grid: (4, 4),
            token_strings: ["a", "cat", "and", "dog"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            cross,
            self_: vec![0.0; 256],
        };
        let fg = foreground_cross_map(&g, &spans("a cat and dog", &["cat", "dog"]), 4, 4).unwrap();
        // Hand oracle: mean of the two one-hot maps is 0.5 at both corners, 0 elsewhere; min-max -> 1.
        let mut expected = vec![0.0f32; 16];
        expected[0] = 1.0;
        expected[15] = 1.0;
        assert_eq!(fg.as_map().data(), &expected[..]);
    }

    #[test]
    fn multi_token_span_averages_its_columns() {
        // 1x2 grid, tokens [teddy, bear, x]
        let cross = vec![0.2, 0.6, 0.2, 0.8, 0.0, 0.2];
        let g = GlobalMaps {
            token_grid: (1, 2),
            token_strings: vec!["teddy".into(), "bear".into(), "x".into()],
            cross,
            self_: vec![0.5; 4],
        };
        let s = NounSpans {
            spans: vec![NounSpan {
                start: 0,
                end: 2,
                surface: "teddy bear".into(),
            }],
            source_prompt: "teddy bear x".into(),
        };
        // Column means: (0.2+0.6)/2 = 0.4, (0.8+0.0)/2 = 0.4 -> constant -> zeros.
        let fg = foreground_cross_map(&g, &s, 1, 2).unwrap();
        assert_eq!(fg.as_map().data(), &[0.0, 0.0]);
    }

    #[test]
    fn no_nouns_is_an_error() {
        let g = GlobalMaps {
            token_grid: (1, 1),
            token_strings: vec!["x".into()],
            cross: vec![1.0],
            self_: vec![1.0],
        };
        let empty = NounSpans {
            spans: vec![],
            source_prompt: "an image".into(),
        };
        assert!(matches!(
            foreground_cross_map(&g, &empty, 1, 1),
            Err(Error::NoNouns { .. })
        ));
    }

    #[test]
    fn fusion_single_and_uniform_weights() {
        let (gh, gw) = (2, 2);
        let self_: Vec<f32> = vec![
            0.7, 0.1, 0.1, 0.1, //
            0.2, 0.5, 0.2, 0.1, //
            0.0, 0.3, 0.3, 0.4, //
            0.25, 0.25, 0.25, 0.25,
        ];
        let g = GlobalMaps {
            token_grid: (gh, gw),
            token_strings: vec!["x".into()],
            cross: vec![0.0; 4],
            self_: self_.clone(),
        };
        let one_hot = ForegroundCrossMap(ScalarMap::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        let ff = fuse_self_attention(&g, &one_hot).unwrap();
        assert_eq!(ff.as_map(), &g.self_map(1).minmax_normalized());

        let uniform = ForegroundCrossMap(ScalarMap::filled(2, 2, 1.0));
        let ff = fuse_self_attention(&g, &uniform).unwrap();
        let mean: Vec<f32> = (0..4)
            .map(|q| (0..4).map(|p| self_[p * 4 + q]).sum::<f32>() / 4.0)
            .collect();
        let expected = ScalarMap::new(2, 2, mean).unwrap().minmax_normalized();
        for (a, b) in ff.as_map().data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn alpha_estimate_examples() {
        let fg = ForegroundCrossMap(ScalarMap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap());
        let same = AlphaMap(fg.as_map().clone());
        assert_eq!(estimate_alpha(&fg, &same).unwrap().as_map(), fg.as_map());
        let zero = ForegroundCrossMap(ScalarMap::filled(1, 3, 0.0));
        let ff = AlphaMap(ScalarMap::new(1, 3, vec![0.2, 0.4, 0.3]).unwrap());
        assert_eq!(
            estimate_alpha(&zero, &ff).unwrap().as_map(),
            &ff.as_map().minmax_normalized()
        );
        let wrong = AlphaMap(ScalarMap::filled(2, 2, 0.0));
        assert!(estimate_alpha(&fg, &wrong).is_err());
    }

    #[test]
    fn opacity_examples() {
        let a = AlphaMap::new(ScalarMap::new(1, 3, vec![0.8, 0.5, 0.0]).unwrap()).unwrap();
        assert_eq!(adjust_opacity(&a, 0.0).unwrap(), a);
        assert_eq!(
            adjust_opacity(&a, 0.5).unwrap().as_map().data(),
            &[1.0, 0.75, 0.0]
        );
        assert!(adjust_opacity(&a, -1.5).is_err());
        assert_eq!(
            adjust_opacity(&a, -1.0).unwrap().as_map().data(),
            &[0.0, 0.0, 0.0]
        );
    }
}
