//! Full-covariance colour mixtures with hard component assignment.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub type Color = [f64; 3];

/// Added to every covariance diagonal before inversion.
pub const COVARIANCE_REGULARIZATION: f64 = 1e-5;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Color,
    pub covariance: [[f64; 3]; 3],
    pub inverse: [[f64; 3]; 3],
    pub log_det: f64,
}

impl GmmComponent {
    /// `-ln(weight * N(z | mean, cov))`.
    pub fn cost(&self, z: &Color) -> f64 {
        let d = [
            z[0] - self.mean[0],
            z[1] - self.mean[1],
            z[2] - self.mean[2],
        ];
        let mut maha = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                maha += d[r] * self.inverse[r][c] * d[c];
            }
        }
        -self.weight.ln() + 0.5 * (self.log_det + maha + 3.0 * LOG_2PI)
    }
}

/// Mixture of up to K colour Gaussians; components with no samples are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGmm {
    components: Vec<GmmComponent>,
}

impl ColorGmm {
    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Maximum-likelihood parameters from a hard assignment of pixels to `k` labels.
    pub fn from_assignments(pixels: &[Color], labels: &[usize], k: usize) -> Result<Self> {
        if pixels.is_empty() || pixels.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "gmm needs matching non-empty pixels and labels, got {} and {}",
                pixels.len(),
                labels.len()
            )));
        }
        let mut count = vec![0usize; k];
        let mut sum = vec![[0.0; 3]; k];
        for (z, &l) in pixels.iter().zip(labels) {
            count[l] += 1;
            for c in 0..3 {
                sum[l][c] += z[c];
            }
        }
        let mean: Vec<Color> = (0..k)
            .map(|l| {
                let n = count[l].max(1) as f64;
                [sum[l][0] / n, sum[l][1] / n, sum[l][2] / n]
            })
            .collect();
        let mut cov = vec![[[0.0; 3]; 3]; k];
        for (z, &l) in pixels.iter().zip(labels) {
            let d = [z[0] - mean[l][0], z[1] - mean[l][1], z[2] - mean[l][2]];
            for r in 0..3 {
                for c in 0..3 {
                    cov[l][r][c] += d[r] * d[c];
                }
            }
        }
        let total = pixels.len() as f64;
        let components = (0..k)
            .filter(|&l| count[l] > 0)
            .map(|l| {
                let n = count[l] as f64;
                let mut covariance = cov[l];
                for (r, row) in covariance.iter_mut().enumerate() {
                    for v in row.iter_mut() {
                        *v /= n;
                    }
                    row[r] += COVARIANCE_REGULARIZATION;
                }
                let (inverse, det) = invert3(&covariance);
                GmmComponent {
                    weight: n / total,
                    mean: mean[l],
                    covariance,
                    inverse,
                    log_det: det.ln(),
                }
            })
            .collect();
        Ok(Self { components })
    }

    /// Index and cost of the cheapest component for a colour.
    pub fn best_component(&self, z: &Color) -> (usize, f64) {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.cost(z)))
            .fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            )
    }

    /// Hard-assignment negative log-likelihood, `min_k -ln(w_k N_k(z))`.
    pub fn neg_log_likelihood(&self, z: &Color) -> f64 {
        self.best_component(z).1
    }

    /// Full mixture negative log-likelihood, `-ln sum_k w_k N_k(z)`.
    pub fn mixture_neg_log_likelihood(&self, z: &Color) -> f64 {
        let costs: Vec<f64> = self.components.iter().map(|c| c.cost(z)).collect();
        let m = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        m - costs.iter().map(|c| (m - c).exp()).sum::<f64>().ln()
    }

    /// Reassigns every pixel to its cheapest component and re-estimates.
    pub fn refit(&self, pixels: &[Color]) -> Result<Self> {
        let labels: Vec<usize> = pixels.iter().map(|z| self.best_component(z).0).collect();
        Self::from_assignments(pixels, &labels, self.components.len())
    }
}

/// k-means++ seeding followed by Lloyd iterations, then ML parameters per cluster.
///
/// Asking for more components than pixels reduces `k`; identical colours
/// collapse into fewer effective components.
pub fn fit_gmm(pixels: &[Color], k: usize, seed: u64) -> Result<ColorGmm> {
    if pixels.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a colour model to zero pixels".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument(
            "gmm needs at least one component".into(),
        ));
    }
    let k = if pixels.len() < k {
        log::warn!(
            "only {} pixels for {k} components; reducing k",
            pixels.len()
        );
        pixels.len()
    } else {
        k
    };
    let (centers, labels) = kmeans(pixels, k, seed, 10);
    ColorGmm::from_assignments(pixels, &labels, centers.len())
}

fn dist2(a: &Color, b: &Color) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(centers: &[Color], z: &Color) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(c, z);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Deterministic k-means; returns centres and per-pixel labels.
pub fn kmeans(pixels: &[Color], k: usize, seed: u64, max_iters: usize) -> (Vec<Color>, Vec<usize>) {
    let mut rng = rng::stream(seed, Stream::KMeans);
    let mut centers = vec![pixels[rng.random_range(0..pixels.len())]];
    let mut d2: Vec<f64> = pixels.iter().map(|z| dist2(z, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = pixels.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
        }
        let c = pixels[pick];
        centers.push(c);
        for (slot, z) in d2.iter_mut().zip(pixels) {
            *slot = slot.min(dist2(z, &c));
        }
    }

    let mut labels: Vec<usize> = pixels.iter().map(|z| nearest(&centers, z)).collect();
    for _ in 0..max_iters {
        let mut sum = vec![[0.0; 3]; centers.len()];
        let mut count = vec![0usize; centers.len()];
        for (z, &l) in pixels.iter().zip(&labels) {
            count[l] += 1;
            for c in 0..3 {
                sum[l][c] += z[c];
            }
        }
        for (i, center) in centers.iter_mut().enumerate() {
            if count[i] > 0 {
                let n = count[i] as f64;
                *center = [sum[i][0] / n, sum[i][1] / n, sum[i][2] / n];
            }
        }
        let next: Vec<usize> = pixels.iter().map(|z| nearest(&centers, z)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    (centers, labels)
}

/// Inverse and determinant of a symmetric positive-definite 3x3 matrix.
fn invert3(m: &[[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
    let cof =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let c00 = cof(1, 2, 1, 2);
    let c01 = -cof(1, 2, 0, 2);
    let c02 = cof(1, 2, 0, 1);
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let c10 = -cof(0, 2, 1, 2);
    let c11 = cof(0, 2, 0, 2);
    let c12 = -cof(0, 2, 0, 1);
    let c20 = cof(0, 1, 1, 2);
    let c21 = -cof(0, 1, 0, 2);
    let c22 = cof(0, 1, 0, 1);
    let inv = 1.0 / det;
    (
        [
            [c00 * inv, c10 * inv, c20 * inv],
            [c01 * inv, c11 * inv, c21 * inv],
            [c02 * inv, c12 * inv, c22 * inv],
        ],
        det,
    )
}
