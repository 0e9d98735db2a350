//! Policy and value network: a two-layer trunk on the state embedding,
//! one softmax head per action dimension, and a scalar value head.
//!
//! The η_max head is masked against the chosen η_min bin when actions
//! are composed, sampled, or scored, so invalid interval pairs carry
//! zero probability and the stored log-probabilities stay consistent
//! between rollout and update.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::action::{ActionBins, ActionParams};
use super::encoder::{StateEmbedding, EMBED_DIM};
use crate::error::{Error, Result};

pub const TRUNK: usize = 64;
pub const N_HEADS: usize = 6;
/// Index of the η_min head in the fixed head order.
pub const ETA_MIN_HEAD: usize = 3;
/// Index of the η_max head (masked by the η_min choice).
pub const ETA_MAX_HEAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    MaxLikelihood,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub bins: ActionBins,
    pub params: Vec<f64>,
    head_sizes: [usize; 6],
    // parameter block offsets
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    head_w: [usize; 6],
    head_b: [usize; 6],
    value_w: usize,
    value_b: usize,
}

/// Cached forward pass.
#[derive(Debug, Clone)]
pub struct PolicyForward {
    pub input: StateEmbedding,
    pub h1: [f64; TRUNK],
    pub h2: [f64; TRUNK],
    pub logits: Vec<Vec<f64>>,
    pub value: f64,
}

impl PolicyNet {
    pub fn layout(bins: ActionBins) -> PolicyNet {
        let head_sizes = bins.head_sizes();
        let w1 = 0;
        let b1 = w1 + TRUNK * EMBED_DIM;
        let w2 = b1 + TRUNK;
        let b2 = w2 + TRUNK * TRUNK;
        let mut cursor = b2 + TRUNK;
        let mut head_w = [0usize; 6];
        let mut head_b = [0usize; 6];
        for h in 0..N_HEADS {
            head_w[h] = cursor;
            cursor += head_sizes[h] * TRUNK;
            head_b[h] = cursor;
            cursor += head_sizes[h];
        }
        let value_w = cursor;
        cursor += TRUNK;
        let value_b = cursor;
        cursor += 1;
        PolicyNet {
            bins,
            params: vec![0.0; cursor],
            head_sizes,
            w1,
            b1,
            w2,
            b2,
            head_w,
            head_b,
            value_w,
            value_b,
        }
    }

    pub fn init(bins: ActionBins, rng: &mut ChaCha12Rng) -> PolicyNet {
        let mut net = PolicyNet::layout(bins);
        let spans = [
            (net.w1, TRUNK * EMBED_DIM, EMBED_DIM, TRUNK),
            (net.w2, TRUNK * TRUNK, TRUNK, TRUNK),
        ];
        for (lo, n, fan_in, fan_out) in spans {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[lo..lo + n] {
                *p = rng.gen_range(-a..a);
            }
        }
        // heads and value start small so the initial policy is near
        // uniform and the initial value near zero
        for h in 0..N_HEADS {
            let n = net.head_sizes[h] * TRUNK;
            for p in &mut net.params[net.head_w[h]..net.head_w[h] + n] {
                *p = rng.gen_range(-0.01..0.01);
            }
        }
        for p in &mut net.params[net.value_w..net.value_w + TRUNK] {
            *p = rng.gen_range(-0.01..0.01);
        }
        net
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, s: &StateEmbedding) -> Result<PolicyForward> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state embedding".into()));
        }
        let p = &self.params;
        let mut h1 = [0.0; TRUNK];
        for j in 0..TRUNK {
            let row = &p[self.w1 + j * EMBED_DIM..self.w1 + (j + 1) * EMBED_DIM];
            let mut acc = p[self.b1 + j];
            for i in 0..EMBED_DIM {
                acc += row[i] * s[i];
            }
            h1[j] = acc.tanh();
        }
        let mut h2 = [0.0; TRUNK];
        for k in 0..TRUNK {
            let row = &p[self.w2 + k * TRUNK..self.w2 + (k + 1) * TRUNK];
            let mut acc = p[self.b2 + k];
            for j in 0..TRUNK {
                acc += row[j] * h1[j];
            }
            h2[k] = acc.tanh();
        }
        let mut logits = Vec::with_capacity(N_HEADS);
        for h in 0..N_HEADS {
            let mut z = vec![0.0; self.head_sizes[h]];
            for (c, zc) in z.iter_mut().enumerate() {
                let row = &p[self.head_w[h] + c * TRUNK..self.head_w[h] + (c + 1) * TRUNK];
                let mut acc = p[self.head_b[h] + c];
                for k in 0..TRUNK {
                    acc += row[k] * h2[k];
                }
                *zc = acc;
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("logits of head {h}")));
            }
            logits.push(z);
        }
        let mut value = p[self.value_b];
        for k in 0..TRUNK {
            value += p[self.value_w + k] * h2[k];
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("value head".into()));
        }
        Ok(PolicyForward {
            input: *s,
            h1,
            h2,
            logits,
            value,
        })
    }

    /// Mask for a head given already-chosen indices: only the η_max
    /// head is constrained, by the η_min choice.
    fn head_mask(&self, head: usize, eta_min_idx: usize) -> Vec<bool> {
        (0..self.head_sizes[head])
            .map(|c| head != ETA_MAX_HEAD || self.bins.eta_pair_valid(eta_min_idx, c))
            .collect()
    }

    /// Softmax over unmasked logits; masked entries get probability 0.
    pub fn head_probs(&self, logits: &[f64], mask: &[bool]) -> Vec<f64> {
        let max = logits
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(z, _)| *z)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            // fully masked: fall back to the last (highest) bin
            let mut p = vec![0.0; logits.len()];
            *p.last_mut().unwrap() = 1.0;
            return p;
        }
        let mut probs: Vec<f64> = logits
            .iter()
            .zip(mask.iter())
            .map(|(z, &m)| if m { (z - max).exp() } else { 0.0 })
            .collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        probs
    }

    /// Draws or argmaxes one action; ties resolve to the lowest index.
    pub fn select_action(
        &self,
        fwd: &PolicyForward,
        mode: SelectMode,
        rng: &mut ChaCha12Rng,
    ) -> (ActionIndices, f64) {
        let mut indices = [0usize; 6];
        let mut log_prob = 0.0;
        for h in 0..N_HEADS {
            let mask = self.head_mask(h, indices[ETA_MIN_HEAD]);
            let probs = self.head_probs(&fwd.logits[h], &mask);
            let choice = match mode {
                SelectMode::MaxLikelihood => argmax_lowest(&probs),
                SelectMode::Sample => sample_categorical(&probs, rng),
            };
            indices[h] = choice;
            log_prob += probs[choice].max(f64::MIN_POSITIVE).ln();
        }
        (ActionIndices(indices), log_prob)
    }

    /// Log-probability and entropy of a stored action under the current
    /// parameters, with the same masking used at selection time.
    pub fn score_action(&self, fwd: &PolicyForward, action: &ActionIndices) -> (f64, f64) {
        let mut log_prob = 0.0;
        let mut entropy = 0.0;
        for h in 0..N_HEADS {
            let mask = self.head_mask(h, action.0[ETA_MIN_HEAD]);
            let probs = self.head_probs(&fwd.logits[h], &mask);
            log_prob += probs[action.0[h]].max(f64::MIN_POSITIVE).ln();
            entropy += head_entropy(&probs);
        }
        (log_prob, entropy)
    }

    pub fn decode(&self, action: &ActionIndices) -> ActionParams {
        self.bins.decode(&action.0)
    }

    /// Backpropagates per-head logit gradients and a value gradient,
    /// accumulating into `grads` (same layout as `params`).
    pub fn backward(
        &self,
        fwd: &PolicyForward,
        d_logits: &[Vec<f64>],
        d_value: f64,
        grads: &mut [f64],
    ) {
        let p = &self.params;
        let mut dh2 = [0.0; TRUNK];
        for h in 0..N_HEADS {
            for c in 0..self.head_sizes[h] {
                let g = d_logits[h][c];
                if g == 0.0 {
                    continue;
                }
                grads[self.head_b[h] + c] += g;
                let row = &p[self.head_w[h] + c * TRUNK..self.head_w[h] + (c + 1) * TRUNK];
                let grad_row =
                    &mut grads[self.head_w[h] + c * TRUNK..self.head_w[h] + (c + 1) * TRUNK];
                for k in 0..TRUNK {
                    grad_row[k] += g * fwd.h2[k];
                }
                for k in 0..TRUNK {
                    dh2[k] += g * row[k];
                }
            }
        }
        if d_value != 0.0 {
            grads[self.value_b] += d_value;
            for k in 0..TRUNK {
                grads[self.value_w + k] += d_value * fwd.h2[k];
                dh2[k] += d_value * p[self.value_w + k];
            }
        }

        let mut dh1 = [0.0; TRUNK];
        for k in 0..TRUNK {
            let g = dh2[k] * (1.0 - fwd.h2[k] * fwd.h2[k]);
            grads[self.b2 + k] += g;
            let row = &p[self.w2 + k * TRUNK..self.w2 + (k + 1) * TRUNK];
            let grad_row = &mut grads[self.w2 + k * TRUNK..self.w2 + (k + 1) * TRUNK];
            for j in 0..TRUNK {
                grad_row[j] += g * fwd.h1[j];
                dh1[j] += g * row[j];
            }
        }
        for j in 0..TRUNK {
            let g = dh1[j] * (1.0 - fwd.h1[j] * fwd.h1[j]);
            grads[self.b1 + j] += g;
            let grad_row = &mut grads[self.w1 + j * EMBED_DIM..self.w1 + (j + 1) * EMBED_DIM];
            for i in 0..EMBED_DIM {
                grad_row[i] += g * fwd.input[i];
            }
        }
    }
}

/// Per-head bin indices of one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionIndices(pub [usize; 6]);

fn argmax_lowest(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn head_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// d(entropy)/d(logit_j) expressed from the probabilities.
pub fn entropy_logit_gradient(probs: &[f64]) -> Vec<f64> {
    let h = head_entropy(probs);
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect()
}
