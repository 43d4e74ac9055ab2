//! Iterated graph-cut segmentation seeded by a four-level trimap.
//!
//! Each iteration re-estimates one colour mixture per side from the current
//! mask, builds an 8-connected graph whose terminal links carry colour costs
//! and whose neighbour links carry contrast-sensitive smoothness, and relabels
//! the non-sure pixels with a minimum cut.

pub mod gmm;
pub mod maxflow;

use std::f64::consts::SQRT_2;

use crate::attention::AlphaMap;
use crate::error::{Error, Result};
use crate::imaging::{RgbImage, ScalarMap};
use crate::trimap::{Trimap4, TrimapLabel};

pub use gmm::{fit_gmm, ColorGmm, GmmComponent};
pub use maxflow::{max_flow, FlowGraph, MinCut, NodeRef};

/// Terminal capacity that pins a sure pixel to its side.
pub const HARD_CONSTRAINT: f64 = 1e9;

/// Forward half of the 8-neighbourhood: right, down, down-right, down-left.
const NEIGHBOURS: [(isize, isize, f64); 4] =
    [(0, 1, 1.0), (1, 0, 1.0), (1, 1, SQRT_2), (1, -1, SQRT_2)];

/// Binary foreground mask, 1 for subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FgMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl FgMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::shape(height * width, values.len()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Probable and sure foreground become 1.
    pub fn from_trimap(trimap: &Trimap4) -> Self {
        let (height, width) = trimap.dims();
        let values = trimap
            .labels()
            .iter()
            .map(|l| l.is_foreground() as u8)
            .collect();
        Self {
            height,
            width,
            values,
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

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn count_foreground(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_map(&self) -> ScalarMap {
        ScalarMap::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("mask has positive size")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrabCutParams {
    pub iterations: usize,
    pub components: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GrabCutParams {
    fn default() -> Self {
        Self {
            iterations: 5,
            components: 5,
            gamma: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrabCutResult {
    pub mask: FgMask,
    /// Energy of the initial mask under the first models, then after every completed iteration.
    pub energies: Vec<f64>,
}

fn colors(image: &RgbImage) -> Vec<gmm::Color> {
    image
        .data()
        .chunks_exact(3)
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect()
}

/// Visits every unordered 8-neighbour pair once as (i, j, distance).
fn for_each_pair(height: usize, width: usize, mut f: impl FnMut(usize, usize, f64)) {
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            for &(dy, dx, dist) in &NEIGHBOURS {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                f(i, ny as usize * width + nx as usize, dist);
            }
        }
    }
}

fn dist2(a: &gmm::Color, b: &gmm::Color) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// `1 / (2 * mean ||z_i - z_j||^2)` over unordered 8-neighbour pairs; 0 when the image is constant.
pub fn neighbor_beta(image: &RgbImage) -> f64 {
    let z = colors(image);
    let (h, w) = image.dims();
    let mut sum = 0.0;
    let mut count = 0usize;
    for_each_pair(h, w, |i, j, _| {
        sum += dist2(&z[i], &z[j]);
        count += 1;
    });
    if count == 0 || sum <= 0.0 {
        return 0.0;
    }
    1.0 / (2.0 * sum / count as f64)
}

/// Smoothness weights of all unordered 8-neighbour pairs.
pub fn neighbor_links(image: &RgbImage, gamma: f64) -> Vec<(usize, usize, f64)> {
    let z = colors(image);
    let beta = neighbor_beta(image);
    let (h, w) = image.dims();
    let mut links = Vec::with_capacity(4 * h * w);
    for_each_pair(h, w, |i, j, dist| {
        links.push((i, j, gamma * (-beta * dist2(&z[i], &z[j])).exp() / dist));
    });
    links
}

/// Per-pixel (foreground cost, background cost) under the hard-assignment likelihoods.
fn unaries(z: &[gmm::Color], gmm_fg: &ColorGmm, gmm_bg: &ColorGmm) -> Vec<(f64, f64)> {
    z.iter()
        .map(|c| (gmm_fg.neg_log_likelihood(c), gmm_bg.neg_log_likelihood(c)))
        .collect()
}

fn ensure_trimap_dims(image: &RgbImage, trimap: &Trimap4) -> Result<()> {
    if image.dims() != trimap.dims() {
        let (h, w) = image.dims();
        let (th, tw) = trimap.dims();
        return Err(Error::shape(h * w, th * tw));
    }
    Ok(())
}

fn graph_from_parts(
    trimap: &Trimap4,
    unary: &[(f64, f64)],
    links: &[(usize, usize, f64)],
) -> FlowGraph {
    let mut graph = FlowGraph::new(unary.len());
    for (p, (&(d_fg, d_bg), label)) in unary.iter().zip(trimap.labels()).enumerate() {
        match label {
            TrimapLabel::SureFg => graph.add_tlinks(p, HARD_CONSTRAINT, 0.0),
            TrimapLabel::SureBg => graph.add_tlinks(p, 0.0, HARD_CONSTRAINT),
            _ => {
                // Subtracting the smaller cost keeps both capacities non-negative without changing the cut.
                let m = d_fg.min(d_bg);
                graph.add_tlinks(p, d_bg - m, d_fg - m);
            }
        }
    }
    for &(i, j, v) in links {
        graph.add_pair(i, j, v, v);
    }
    graph
}

/// Segmentation graph: source side is foreground. A pixel on the source side
/// cuts its sink link, so the sink capacity is the foreground cost.
pub fn build_graph(
    image: &RgbImage,
    trimap: &Trimap4,
    gmm_fg: &ColorGmm,
    gmm_bg: &ColorGmm,
    gamma: f64,
) -> Result<FlowGraph> {
    ensure_trimap_dims(image, trimap)?;
    let z = colors(image);
    Ok(graph_from_parts(
        trimap,
        &unaries(&z, gmm_fg, gmm_bg),
        &neighbor_links(image, gamma),
    ))
}

fn energy_from_parts(mask: &[u8], unary: &[(f64, f64)], links: &[(usize, usize, f64)]) -> f64 {
    let data: f64 = mask
        .iter()
        .zip(unary)
        .map(|(&m, &(d_fg, d_bg))| if m == 1 { d_fg } else { d_bg })
        .sum();
    let smooth: f64 = links
        .iter()
        .filter(|&&(i, j, _)| mask[i] != mask[j])
        .map(|l| l.2)
        .sum();
    data + smooth
}

/// `sum_p D(label_p) + sum_{p~q, label_p != label_q} V_pq`.
pub fn grabcut_energy(
    image: &RgbImage,
    mask: &FgMask,
    gmm_fg: &ColorGmm,
    gmm_bg: &ColorGmm,
    gamma: f64,
) -> Result<f64> {
    if image.dims() != mask.dims() {
        return Err(Error::shape(
            image.height() * image.width(),
            mask.values.len(),
        ));
    }
    let z = colors(image);
    Ok(energy_from_parts(
        &mask.values,
        &unaries(&z, gmm_fg, gmm_bg),
        &neighbor_links(image, gamma),
    ))
}

fn split(z: &[gmm::Color], mask: &[u8]) -> (Vec<gmm::Color>, Vec<gmm::Color>) {
    let fg = z
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == 1)
        .map(|(c, _)| *c)
        .collect();
    let bg = z
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == 0)
        .map(|(c, _)| *c)
        .collect();
    (fg, bg)
}

pub fn grabcut_refine(
    image: &RgbImage,
    trimap: &Trimap4,
    params: &GrabCutParams,
) -> Result<FgMask> {
    grabcut_refine_traced(image, trimap, params).map(|r| r.mask)
}

/// Runs the refinement and reports the energy after every iteration.
///
/// A model update or relabelling that would raise the energy is rejected, so
/// the reported sequence never increases. Stops early once a side is empty.
pub fn grabcut_refine_traced(
    image: &RgbImage,
    trimap: &Trimap4,
    params: &GrabCutParams,
) -> Result<GrabCutResult> {
    ensure_trimap_dims(image, trimap)?;
    if params.components == 0 || !(params.gamma >= 0.0) {
        return Err(Error::InvalidArgument(
            "grabcut needs components >= 1 and gamma >= 0".into(),
        ));
    }
    let labels = trimap.labels();
    if !labels.iter().any(|l| l.is_foreground()) {
        return Err(Error::EmptySeeds("foreground"));
    }
    if labels.iter().all(|l| l.is_foreground()) {
        return Err(Error::EmptySeeds("background"));
    }
    let mut mask = FgMask::from_trimap(trimap);
    let mut energies = Vec::new();
    if params.iterations == 0 {
        return Ok(GrabCutResult { mask, energies });
    }

    let z = colors(image);
    let links = neighbor_links(image, params.gamma);
    let (fg_px, bg_px) = split(&z, &mask.values);
    let mut gmm_fg = fit_gmm(&fg_px, params.components, params.seed)?;
    let mut gmm_bg = fit_gmm(&bg_px, params.components, params.seed.wrapping_add(1))?;
    let mut unary = unaries(&z, &gmm_fg, &gmm_bg);
    let mut energy = energy_from_parts(&mask.values, &unary, &links);
    energies.push(energy);

    for iter in 0..params.iterations {
        if iter > 0 {
            let (fg_px, bg_px) = split(&z, &mask.values);
            if fg_px.is_empty() || bg_px.is_empty() {
                log::warn!("grabcut partition emptied after {iter} iterations");
                break;
            }
            let cand_fg = gmm_fg.refit(&fg_px)?;
            let cand_bg = gmm_bg.refit(&bg_px)?;
            let cand_unary = unaries(&z, &cand_fg, &cand_bg);
            let cand_energy = energy_from_parts(&mask.values, &cand_unary, &links);
            if cand_energy <= energy {
                gmm_fg = cand_fg;
                gmm_bg = cand_bg;
                unary = cand_unary;
                energy = cand_energy;
            }
        }

        let cut = max_flow(&graph_from_parts(trimap, &unary, &links));
        let next: Vec<u8> = cut
            .source_side
            .iter()
            .zip(labels)
            .map(|(&s, &l)| match l {
                TrimapLabel::SureFg => 1,
                TrimapLabel::SureBg => 0,
                _ => s as u8,
            })
            .collect();
        let next_energy = energy_from_parts(&next, &unary, &links);
        if next_energy <= energy {
            mask.values = next;
            energy = next_energy;
        }
        energies.push(energy);
    }
    Ok(GrabCutResult { mask, energies })
}

/// Zeroes alpha outside the mask.
pub fn clean_alpha(alpha: &AlphaMap, mask: &FgMask) -> Result<AlphaMap> {
    let map = alpha.as_map();
    if map.dims() != mask.dims() {
        return Err(Error::shape(map.height() * map.width(), mask.values.len()));
    }
    let data = map
        .data()
        .iter()
        .zip(&mask.values)
        .map(|(&a, &m)| a * m as f32)
        .collect();
    AlphaMap::new(ScalarMap::new(map.height(), map.width(), data)?)
}
