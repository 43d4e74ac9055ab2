use rand_chacha::ChaCha8Rng;

use crate::rng::gaussian_vec;

/// Dense layer, row-major `out x inp` weights.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub out: usize,
    pub inp: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Weights ~ N(0, gain^2 / inp), biases ~ N(0, bias_std^2).
    pub fn init(rng: &mut ChaCha8Rng, out: usize, inp: usize, gain: f64, bias_std: f64) -> Self {
        let weight = gaussian_vec(rng, out * inp, gain / (inp as f64).sqrt());
        let bias = if bias_std > 0.0 {
            gaussian_vec(rng, out, bias_std)
        } else {
            vec![0.0; out]
        };
        Self {
            out,
            inp,
            weight,
            bias,
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.inp);
        (0..self.out)
            .map(|o| {
                let row = &self.weight[o * self.inp..(o + 1) * self.inp];
                self.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// Applies the layer to each `inp`-sized row of `rows`.
    pub fn apply_rows(&self, rows: &[f64]) -> Vec<f64> {
        rows.chunks_exact(self.inp)
            .flat_map(|r| self.apply(r))
            .collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }
}

/// Parameter-free layer norm over each `dim`-sized row.
pub(crate) fn layer_norm_rows(rows: &[f64], dim: usize) -> Vec<f64> {
    rows.chunks_exact(dim)
        .flat_map(|r| {
            let mean = r.iter().sum::<f64>() / dim as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let inv = 1.0 / (var + 1e-6).sqrt();
            r.iter().map(move |v| (v - mean) * inv)
        })
        .collect()
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

/// In-place numerically stable softmax.
pub(crate) fn softmax(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Sinusoidal embedding of a scalar position into `dim` channels (sin half, cos half).
pub(crate) fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

/// Multi-head attention of `queries` (Lq x dim) over `keys`/`values` (Lk x dim)
/// already projected. Returns the concatenated head outputs (Lq x dim) and the
/// per-head probability matrices (heads x Lq x Lk).
pub(crate) fn multi_head_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    lq: usize,
    lk: usize,
    dim: usize,
    heads: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; lq * dim];
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let off = h * hd;
        let mut p = vec![0.0; lq * lk];
        for i in 0..lq {
            let qi = &q[i * dim + off..i * dim + off + hd];
            let row = &mut p[i * lk..(i + 1) * lk];
            for (j, slot) in row.iter_mut().enumerate() {
                let kj = &k[j * dim + off..j * dim + off + hd];
                *slot = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax(row);
            let o = &mut out[i * dim + off..i * dim + off + hd];
            for (j, &w) in row.iter().enumerate() {
                let vj = &v[j * dim + off..j * dim + off + hd];
                for (acc, &x) in o.iter_mut().zip(vj) {
                    *acc += w * x;
                }
            }
        }
        probs.push(p);
    }
    (out, probs)
}
